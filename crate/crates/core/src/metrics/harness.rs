//! Monte Carlo replicate harness over the simulation settings.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{Result, SpcrError};
use crate::rng::{derive_seed, stream_seed, Stream};
use crate::scalar::Scalar;
use crate::simulate::{
    add_measurement_error, generate_setting1, generate_setting2, GroundTruth, SettingConfig,
    TRUE_DIMENSION,
};
use crate::spcr::{fit_report, FitConfig, FitReport, Method};

use super::{
    aligned_direction_error, leading_columns, mean_and_se, prediction_error, projection_loss,
};

/// A method as run by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HarnessMethod {
    /// A pipeline method on the (possibly noisy) training curves.
    Fit(Method),
    /// Penalized fit after curve-by-curve smoothing of noisy curves.
    SpcrSmoothing,
    /// Penalized fit on the noisy curves as observed.
    SpcrNonsmoothing,
    /// Penalized fit on the noise-free curves.
    Oracle,
}

impl HarnessMethod {
    pub fn name(self) -> &'static str {
        match self {
            HarnessMethod::Fit(m) => m.name(),
            HarnessMethod::SpcrSmoothing => "spcr-smoothing",
            HarnessMethod::SpcrNonsmoothing => "spcr-nonsmoothing",
            HarnessMethod::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spcr-smoothing" => Ok(HarnessMethod::SpcrSmoothing),
            "spcr-nonsmoothing" => Ok(HarnessMethod::SpcrNonsmoothing),
            "oracle" => Ok(HarnessMethod::Oracle),
            other => Method::parse(other).map(HarnessMethod::Fit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Simulation setting, 1 (sparse) or 2 (dense).
    pub setting: u8,
    /// `(n, p)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub replicates: usize,
    pub methods: Vec<HarnessMethod>,
    pub seed: u64,
    pub grid_len: usize,
    pub test_size: usize,
    /// Variance of i.i.d. measurement error added to training curves.
    pub noise_var: Option<f64>,
    pub fit: FitConfig,
}

impl HarnessConfig {
    pub fn new(
        setting: u8,
        sizes: Vec<(usize, usize)>,
        replicates: usize,
        methods: Vec<HarnessMethod>,
        seed: u64,
    ) -> Self {
        Self {
            setting,
            sizes,
            replicates,
            methods,
            seed,
            grid_len: 101,
            test_size: 5000,
            noise_var: None,
            fit: FitConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.setting != 1 && self.setting != 2 {
            return Err(SpcrError::InvalidConfig(format!(
                "unknown setting {}",
                self.setting
            )));
        }
        if self.replicates == 0 {
            return Err(SpcrError::InvalidConfig(
                "at least one replicate required".into(),
            ));
        }
        if self.sizes.is_empty() || self.methods.is_empty() {
            return Err(SpcrError::InvalidConfig(
                "sizes and methods must be non-empty".into(),
            ));
        }
        if self.test_size == 0 {
            return Err(SpcrError::InvalidConfig("test_size must be >= 1".into()));
        }
        let needs_noise = self.methods.iter().any(|m| {
            matches!(
                m,
                HarnessMethod::SpcrSmoothing | HarnessMethod::SpcrNonsmoothing
            )
        });
        if needs_noise && self.noise_var.is_none() {
            return Err(SpcrError::InvalidConfig(
                "smoothing comparisons need noise_var".into(),
            ));
        }
        self.fit.validate()
    }
}

/// Outcome of one method on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub method: String,
    pub prediction_error: Option<f64>,
    pub projection_loss: Option<f64>,
    /// Aligned error against the population directions `Σ_x⁻¹U`.
    pub direction_error: Option<f64>,
    /// Aligned error against the sparse generating directions.
    pub sparse_direction_error: Option<f64>,
    pub k_hat: Option<f64>,
    /// Error message when the fit failed.
    pub failure: Option<String>,
}

/// Aggregate of one metric for one method at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSummary {
    pub setting: u8,
    pub n: usize,
    pub p: usize,
    pub method: String,
    pub metric: &'static str,
    pub mean: f64,
    /// Sample standard deviation over `√R`.
    pub se: f64,
    /// Replicates that contributed.
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessResult {
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<ReplicateSummary>,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl HarnessResult {
    pub fn summary(
        &self,
        n: usize,
        p: usize,
        method: &str,
        metric: &str,
    ) -> Option<&ReplicateSummary> {
        self.summaries
            .iter()
            .find(|s| s.n == n && s.p == p && s.method == method && s.metric == metric)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("setting,n,p,method,metric,mean,se,R,failed\n");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.setting,
                s.n,
                s.p,
                s.method,
                s.metric,
                fmt_float(s.mean),
                fmt_float(s.se),
                s.replicates,
                s.failed
            );
        }
        out
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from("n,p,replicate,method,prediction_error,projection_loss,direction_error,sparse_direction_error,k_hat,failure\n");
        for r in &self.records {
            let failure = r
                .failure
                .as_deref()
                .unwrap_or("")
                .replace([',', '\n', '"'], " ");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.p,
                r.replicate,
                r.method,
                fmt_opt(r.prediction_error),
                fmt_opt(r.projection_loss),
                fmt_opt(r.direction_error),
                fmt_opt(r.sparse_direction_error),
                fmt_opt(r.k_hat),
                failure
            );
        }
        out
    }
}

struct ReplicateData<T: Scalar> {
    train: FunctionalDataset<T>,
    noisy: Option<FunctionalDataset<T>>,
    test: FunctionalDataset<T>,
    truth: GroundTruth<T>,
}

fn generate<T: Scalar>(
    setting: u8,
    config: &SettingConfig,
) -> Result<(FunctionalDataset<T>, GroundTruth<T>)> {
    if setting == 1 {
        generate_setting1(config)
    } else {
        generate_setting2(config)
    }
}

fn replicate_data<T: Scalar>(
    cfg: &HarnessConfig,
    n: usize,
    p: usize,
    index: u64,
) -> Result<ReplicateData<T>> {
    let train_cfg = SettingConfig::new(n, p, stream_seed(cfg.seed, index, Stream::TrainData))
        .with_grid_len(cfg.grid_len);
    let test_cfg = SettingConfig::new(
        cfg.test_size,
        p,
        stream_seed(cfg.seed, index, Stream::TestData),
    )
    .with_grid_len(cfg.grid_len);
    let (train, truth) = generate::<T>(cfg.setting, &train_cfg)?;
    let (test, _) = generate::<T>(cfg.setting, &test_cfg)?;
    let noisy = match cfg.noise_var {
        Some(v) => Some(add_measurement_error(
            &train,
            v,
            stream_seed(cfg.seed, index, Stream::Measurement),
        )?),
        None => None,
    };
    Ok(ReplicateData {
        train,
        noisy,
        test,
        truth,
    })
}

fn run_method<T: Scalar>(
    method: HarnessMethod,
    data: &ReplicateData<T>,
    fit: &FitConfig,
) -> Result<FitReport<T>> {
    let observed = data.noisy.as_ref().unwrap_or(&data.train);
    match method {
        HarnessMethod::Fit(m) => fit_report(observed, m, fit, None),
        HarnessMethod::SpcrSmoothing => {
            let cfg = FitConfig {
                smoothing: true,
                ..fit.clone()
            };
            fit_report(observed, Method::Spcr, &cfg, None)
        }
        HarnessMethod::SpcrNonsmoothing => {
            let cfg = FitConfig {
                smoothing: false,
                ..fit.clone()
            };
            fit_report(observed, Method::Spcr, &cfg, None)
        }
        HarnessMethod::Oracle => fit_report(&data.train, Method::Spcr, fit, None),
    }
}

fn evaluate<T: Scalar>(
    report: &FitReport<T>,
    data: &ReplicateData<T>,
    record: &mut ReplicateRecord,
) -> Result<()> {
    record.prediction_error = Some(prediction_error(&report.model, &data.test)?.to_f64_lossy());
    record.k_hat = Some(report.model.k_star as f64);
    if let Some(v_star) = &data.truth.v_star {
        let k0 = TRUE_DIMENSION;
        let v_hat = leading_columns(report.directions_full.columns(), k0);
        record.projection_loss = projection_loss(&v_hat, v_star)
            .ok()
            .map(|l| l.value.to_f64_lossy());
        record.sparse_direction_error =
            Some(aligned_direction_error(&v_hat, v_star)?.to_f64_lossy());
        if let Some(v_pop) = &data.truth.v_population {
            record.direction_error = Some(aligned_direction_error(&v_hat, v_pop)?.to_f64_lossy());
        }
    }
    Ok(())
}

/// Runs every method on `replicates` simulated datasets per size.
///
/// Replicate `r` of size index `s` draws its training, test and measurement
/// streams from `(seed, s·2³² + r)`, so results are independent of thread
/// count. Failed fits are recorded, excluded from the aggregates and counted.
pub fn replicate_harness<T: Scalar>(config: &HarnessConfig) -> Result<HarnessResult> {
    config.validate()?;
    let jobs: Vec<(usize, usize, usize, usize)> = config
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(s, &(n, p))| (0..config.replicates).map(move |r| (s, r, n, p)))
        .collect();
    let per_job: Vec<Vec<ReplicateRecord>> = jobs
        .par_iter()
        .map(|&(s, r, n, p)| {
            let index = ((s as u64) << 32) | r as u64;
            let blank = |method: HarnessMethod| ReplicateRecord {
                n,
                p,
                replicate: r,
                method: method.name().to_string(),
                prediction_error: None,
                projection_loss: None,
                direction_error: None,
                sparse_direction_error: None,
                k_hat: None,
                failure: None,
            };
            let data = match replicate_data::<T>(config, n, p, index) {
                Ok(d) => d,
                Err(e) => {
                    return config
                        .methods
                        .iter()
                        .map(|&m| ReplicateRecord {
                            failure: Some(format!("data generation: {e}")),
                            ..blank(m)
                        })
                        .collect();
                }
            };
            let fit_cfg = FitConfig {
                seed: derive_seed(config.seed, index),
                ..config.fit.clone()
            };
            config
                .methods
                .iter()
                .map(|&m| {
                    let mut rec = blank(m);
                    let outcome = run_method(m, &data, &fit_cfg)
                        .and_then(|rep| evaluate(&rep, &data, &mut rec));
                    if let Err(e) = outcome {
                        log::warn!("replicate {r} (n={n}, p={p}) {}: {e}", m.name());
                        rec = ReplicateRecord {
                            failure: Some(e.to_string()),
                            ..blank(m)
                        };
                    }
                    rec
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_job.into_iter().flatten().collect();
    let summaries = summarize(config, &records);
    Ok(HarnessResult { records, summaries })
}

fn summarize(config: &HarnessConfig, records: &[ReplicateRecord]) -> Vec<ReplicateSummary> {
    type Getter = fn(&ReplicateRecord) -> Option<f64>;
    let mut metrics: Vec<(&'static str, Getter)> = vec![
        ("prediction_error", |r| r.prediction_error),
        ("k_hat", |r| r.k_hat),
    ];
    if config.setting == 1 {
        metrics.push(("projection_loss", |r| r.projection_loss));
        metrics.push(("direction_error", |r| r.direction_error));
        metrics.push(("sparse_direction_error", |r| r.sparse_direction_error));
    }
    let mut out = Vec::new();
    for &(n, p) in &config.sizes {
        for m in &config.methods {
            let rows: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.n == n && r.p == p && r.method == m.name())
                .collect();
            let failed = rows.iter().filter(|r| r.failure.is_some()).count();
            for &(metric, get) in &metrics {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.failure.is_none())
                    .filter_map(|r| get(r))
                    .collect();
                let (mean, se) = mean_and_se(&values);
                out.push(ReplicateSummary {
                    setting: config.setting,
                    n,
                    p,
                    method: m.name().to_string(),
                    metric,
                    mean,
                    se,
                    replicates: values.len(),
                    failed,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(replicates: usize, seed: u64) -> HarnessConfig {
        let mut c = HarnessConfig::new(
            1,
            vec![(40, 20)],
            replicates,
            vec![
                HarnessMethod::Fit(Method::Spcr),
                HarnessMethod::Fit(Method::Upcr),
            ],
            seed,
        );
        c.grid_len = 21;
        c.test_size = 200;
        c
    }

    #[test]
    fn single_replicate_has_zero_standard_error() {
        let res = replicate_harness::<f64>(&small(1, 3)).unwrap();
        for s in &res.summaries {
            assert_eq!(s.se, 0.0, "{s:?}");
            assert_eq!(s.replicates, 1);
        }
        assert_eq!(res.records.len(), 2);
    }

    #[test]
    fn same_seed_same_csv() {
        let a = replicate_harness::<f64>(&small(2, 4)).unwrap();
        let b = replicate_harness::<f64>(&small(2, 4)).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.raw_csv(), b.raw_csv());
        let c = replicate_harness::<f64>(&small(2, 5)).unwrap();
        assert_ne!(a.raw_csv(), c.raw_csv());
    }

    #[test]
    fn method_names_round_trip() {
        for name in [
            "spcr",
            "spcr-a",
            "spcr-nopen",
            "upcr",
            "superpc",
            "spcr-smoothing",
            "spcr-nonsmoothing",
            "oracle",
        ] {
            assert_eq!(HarnessMethod::parse(name).unwrap().name(), name);
        }
        assert!(HarnessMethod::parse("cca").is_err());
    }

    #[test]
    fn smoothing_methods_need_noise() {
        let mut c = small(1, 1);
        c.methods = vec![HarnessMethod::SpcrSmoothing];
        assert!(matches!(
            replicate_harness::<f64>(&c),
            Err(SpcrError::InvalidConfig(_))
        ));
    }
}
