//! The estimation pipeline: supervised directions, coefficient curves,
//! cross-validated tuning, prediction, and the comparison baselines.

mod cv;

pub use cv::{CvTable, FoldAssignment};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{banded_covariance, sample_covariance, select_bandwidth, BandSelectConfig};
use crate::dataset::{FunctionalDataset, Grid};
use crate::error::{Result, SpcrError};
use crate::linalg::sorted_symmetric_eigen;
use crate::rng::{stream_seed, Stream};
use crate::scalar::Scalar;
use crate::smoothing::smooth_dataset;
use crate::solver::{
    fit_directions_path, fit_directions_unpenalized, spcra_correlates, DirectionMatrix,
    SolverConfig,
};
use crate::spectral::{cross_moment, top_k_eigen, top_k_eigen_of_factor};

use cv::{run_cv, FoldGrid};

/// Estimators available through [`fit_method`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Penalized supervised directions.
    Spcr,
    /// Whitened-eigenvector variant of the penalized estimator.
    SpcrA,
    /// `Σ̂_x⁻¹ Û` without a penalty.
    SpcrNopen,
    /// Principal components of the unbanded sample covariance.
    Upcr,
    /// Marginal screening followed by principal component regression.
    Superpc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Spcr,
        Method::SpcrA,
        Method::SpcrNopen,
        Method::Upcr,
        Method::Superpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Spcr => "spcr",
            Method::SpcrA => "spcr-a",
            Method::SpcrNopen => "spcr-nopen",
            Method::Upcr => "upcr",
            Method::Superpc => "superpc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SpcrError::InvalidParameter(format!("unknown method '{s}'")))
    }

    fn uses_bandwidth(self) -> bool {
        matches!(self, Method::Spcr | Method::SpcrA | Method::SpcrNopen)
    }

    fn fold_stream(self) -> u64 {
        match self {
            Method::Spcr => 0,
            Method::SpcrA => 1,
            Method::SpcrNopen => 2,
            Method::Upcr => 3,
            Method::Superpc => 4,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tuning and numerical settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k_max: usize,
    /// Number of penalty values on the automatic grid.
    pub n_lambda: usize,
    /// Smallest penalty as a fraction of the largest.
    pub lambda_ratio: f64,
    /// Explicit penalty grid; replaces the automatic one.
    pub lambda_grid: Option<Vec<f64>>,
    pub folds: usize,
    /// Bandwidth search settings; the split seed is derived from `seed`.
    pub band_config: BandSelectConfig,
    /// Fixed bandwidth; skips bandwidth selection.
    pub bandwidth: Option<usize>,
    /// Smooth response curves before fitting.
    pub smoothing: bool,
    /// Fixed smoothing parameter; GCV when unset.
    pub smoothing_lambda: Option<f64>,
    pub ridge_fallback: f64,
    pub psd_floor: f64,
    pub max_iterations: usize,
    /// Coordinate-descent tolerance; type-dependent default when unset.
    pub tolerance: Option<f64>,
    /// Candidate screening sizes for the screening baseline.
    pub superpc_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            n_lambda: 30,
            lambda_ratio: 1e-3,
            lambda_grid: None,
            folds: 5,
            band_config: BandSelectConfig::default(),
            bandwidth: None,
            smoothing: false,
            smoothing_lambda: None,
            ridge_fallback: 1e-8,
            psd_floor: crate::covariance::DEFAULT_PSD_FLOOR,
            max_iterations: 10_000,
            tolerance: None,
            superpc_sizes: vec![10, 25, 50, 100],
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(SpcrError::InvalidConfig("k_max must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(SpcrError::InvalidConfig("folds must be >= 2".into()));
        }
        if self.lambda_grid.is_none()
            && (self.n_lambda == 0 || !(self.lambda_ratio > 0.0 && self.lambda_ratio <= 1.0))
        {
            return Err(SpcrError::InvalidConfig(
                "penalty grid needs n_lambda >= 1 and ratio in (0, 1]".into(),
            ));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
                return Err(SpcrError::InvalidConfig(
                    "penalty grid must be non-empty and >= 0".into(),
                ));
            }
        }
        if !(self.ridge_fallback >= 0.0) || !(self.psd_floor >= 0.0) {
            return Err(SpcrError::InvalidConfig(
                "ridge_fallback and psd_floor must be >= 0".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(SpcrError::InvalidConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        if self.superpc_sizes.is_empty() || self.superpc_sizes.contains(&0) {
            return Err(SpcrError::InvalidConfig(
                "screening sizes must be non-empty and >= 1".into(),
            ));
        }
        Ok(())
    }

    fn solver<T: Scalar>(&self) -> SolverConfig<T> {
        let mut s = SolverConfig::default();
        s.max_iterations = self.max_iterations;
        if let Some(t) = self.tolerance {
            s.tolerance = T::cst(t);
        }
        s
    }

    /// Automatic grid: `n_lambda` log-spaced values from `lambda_max` down to
    /// `lambda_ratio·lambda_max`, or the explicit grid sorted descending.
    pub fn penalty_grid(&self, lambda_max: f64) -> Vec<f64> {
        if let Some(g) = &self.lambda_grid {
            let mut g = g.clone();
            g.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            return g;
        }
        if !(lambda_max > 0.0) {
            return vec![0.0];
        }
        if self.n_lambda == 1 {
            return vec![lambda_max];
        }
        let (hi, lo) = (lambda_max.ln(), (lambda_max * self.lambda_ratio).ln());
        (0..self.n_lambda)
            .map(|i| {
                if i == 0 {
                    lambda_max
                } else {
                    (hi + (lo - hi) * i as f64 / (self.n_lambda - 1) as f64).exp()
                }
            })
            .collect()
    }
}

/// A fitted functional regression `Ŷ(t) = (x − x̄)ᵀ V̂ γ̂(t) + ȳ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcrModel<T: Scalar> {
    pub method: Method,
    /// `p×K*` directions.
    pub directions: DirectionMatrix<T>,
    /// `K*×L` coefficient curves on the grid.
    pub gamma: DMatrix<T>,
    pub k_star: usize,
    /// Selected penalty; zero for unpenalized methods.
    pub lambda_star: T,
    /// Banding bandwidth, for methods that band the covariance.
    pub bandwidth: Option<usize>,
    /// Retained covariates, for the screening baseline.
    pub selected_features: Option<Vec<usize>>,
    pub x_means: DVector<T>,
    pub y_means: DVector<T>,
    pub grid: Grid<T>,
}

impl<T: Scalar> SpcrModel<T> {
    pub fn p(&self) -> usize {
        self.directions.p()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.nrows() != self.directions.k() {
            return Err(SpcrError::Dimension(format!(
                "gamma has {} rows for {} directions",
                self.gamma.nrows(),
                self.directions.k()
            )));
        }
        if self.gamma.ncols() != self.grid.len() || self.y_means.len() != self.grid.len() {
            return Err(SpcrError::Dimension(
                "coefficient curves do not match the grid".into(),
            ));
        }
        if self.x_means.len() != self.p() {
            return Err(SpcrError::Dimension(
                "covariate means do not match directions".into(),
            ));
        }
        if self
            .gamma
            .iter()
            .chain(self.x_means.iter())
            .chain(self.y_means.iter())
            .any(|v| !v.is_finite())
        {
            return Err(SpcrError::Numerical("model has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Everything produced by a cross-validated fit.
#[derive(Debug, Clone)]
pub struct FitReport<T: Scalar> {
    pub model: SpcrModel<T>,
    pub cv: CvTable<T>,
    /// All candidate directions at the selected second-axis value, before
    /// truncation to `K*`.
    pub directions_full: DirectionMatrix<T>,
}

/// Validated error for zero-direction models: they predict the mean curve.
fn is_degenerate<T: Scalar>(directions: &DMatrix<T>) -> bool {
    directions.iter().all(|v| *v == T::zero())
}

/// `γ̂(t_l) = (ZᵀZ + rI)⁻¹ Zᵀ Y_{·l}` with `Z = X V`.
///
/// All-zero direction columns get zero coefficient rows. The ridge term `r`
/// is zero unless `ZᵀZ` has condition number at least `1e10`, in which case
/// it is `ridge_fallback·trace(ZᵀZ)/K`.
pub fn regress_gamma<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    directions: &DirectionMatrix<T>,
    ridge_fallback: T,
) -> Result<DMatrix<T>> {
    if !dataset.is_centered() {
        return Err(SpcrError::Precondition(
            "coefficient regression needs a centered dataset".into(),
        ));
    }
    if directions.p() != dataset.p() {
        return Err(SpcrError::Dimension(format!(
            "{} direction rows for {} covariates",
            directions.p(),
            dataset.p()
        )));
    }
    let active = directions.nonzero_columns();
    if active.is_empty() {
        return Err(SpcrError::InvalidDirection(
            "all direction columns are zero".into(),
        ));
    }
    let v = directions.columns().select_columns(active.iter());
    let z = dataset.x() * v;
    let ztz = crate::linalg::symmetrize(&z.tr_mul(&z));
    let k = active.len();
    let (values, _) = sorted_symmetric_eigen(&ztz);
    let (top, bottom) = (values[0], values[k - 1]);
    let well_conditioned = bottom > T::zero() && top / bottom < T::cst(1e10);
    let mut lhs = ztz.clone();
    if !well_conditioned {
        let r = ridge_fallback * ztz.trace() / T::from_usize_lossy(k);
        log::debug!("ridge fallback engaged (r = {r:e})");
        for i in 0..k {
            lhs[(i, i)] += r;
        }
    }
    let rhs = z.tr_mul(dataset.y());
    let coef = match lhs.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SpcrError::Numerical("coefficient system is singular".into()))?,
    };
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(SpcrError::Numerical("non-finite coefficient curves".into()));
    }
    let mut gamma = DMatrix::zeros(directions.k(), dataset.grid_len());
    for (row, &col) in active.iter().enumerate() {
        gamma.set_row(col, &coef.row(row));
    }
    Ok(gamma)
}

fn regress_gamma_or_zero<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    directions: &DirectionMatrix<T>,
    ridge: T,
) -> Result<DMatrix<T>> {
    if is_degenerate(directions.columns()) {
        Ok(DMatrix::zeros(directions.k(), dataset.grid_len()))
    } else {
        regress_gamma(dataset, directions, ridge)
    }
}

/// `(X_new − x̄) V̂ γ̂ + ȳ`, one predicted curve per row.
pub fn predict<T: Scalar>(model: &SpcrModel<T>, x_new: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x_new.ncols() != model.p() {
        return Err(SpcrError::Dimension(format!(
            "X has {} columns, model expects {}",
            x_new.ncols(),
            model.p()
        )));
    }
    let mut xc = x_new.clone();
    crate::dataset::subtract_row_vector(&mut xc, &model.x_means);
    let mut out = xc * model.directions.columns() * &model.gamma;
    for mut row in out.row_iter_mut() {
        row += model.y_means.transpose();
    }
    Ok(out)
}

/// `β̂ = V̂ γ̂`, a `p×L` matrix.
pub fn beta_hat<T: Scalar>(model: &SpcrModel<T>) -> DMatrix<T> {
    model.directions.columns() * &model.gamma
}

/// Mean over rows of the integrated squared error between `y` and `fitted`.
pub(crate) fn mean_integrated_error<T: Scalar>(
    y: &DMatrix<T>,
    fitted: &DMatrix<T>,
    grid: &Grid<T>,
) -> T {
    let n = y.nrows();
    let w = grid.weights();
    let mut total = T::zero();
    for i in 0..n {
        let mut row = T::zero();
        for l in 0..y.ncols() {
            let r = y[(i, l)] - fitted[(i, l)];
            row += w[l] * r * r;
        }
        total += row;
    }
    total / T::from_usize_lossy(n.max(1))
}

/// Held-out error of directions and coefficients, both datasets centered
/// consistently.
fn heldout_error<T: Scalar>(
    test: &FunctionalDataset<T>,
    directions: &DMatrix<T>,
    gamma: &DMatrix<T>,
) -> T {
    let fitted = test.x() * directions * gamma;
    mean_integrated_error(test.y(), &fitted, test.grid())
}

/// Indices of the `m` covariates with the largest `Σ_l (Σ_i Y_il X_ij)²`,
/// returned in ascending order; score ties go to the smaller index.
pub fn superpc_screen<T: Scalar>(dataset: &FunctionalDataset<T>, m: usize) -> Result<Vec<usize>> {
    let p = dataset.p();
    if m == 0 || m > p {
        return Err(SpcrError::InvalidParameter(format!(
            "screening size {m} outside 1..={p}"
        )));
    }
    let scores = screening_scores(dataset);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = order[..m].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// Unweighted marginal screening statistic of every covariate.
pub fn screening_scores<T: Scalar>(dataset: &FunctionalDataset<T>) -> Vec<T> {
    let xty = dataset.x().tr_mul(dataset.y());
    xty.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, &v| acc + v * v))
        .collect()
}

/// Leading `k` eigenvectors of the sample covariance of centered `x`.
fn principal_components<T: Scalar>(x: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    let (n, p) = x.shape();
    let k = k.min(p);
    if n < p {
        let scaled = x.transpose() / T::from_usize_lossy(n).sqrt();
        Ok(top_k_eigen_of_factor(&scaled, k)?.vectors)
    } else {
        Ok(top_k_eigen(&sample_covariance(x)?, k)?.vectors)
    }
}

/// Quantities fixed on the full data before cross-validation.
struct Plan<T: Scalar> {
    method: Method,
    k_max: usize,
    bandwidth: Option<usize>,
    /// Penalties (descending) or screening sizes, as floats.
    axis: Vec<f64>,
    solver: SolverConfig<T>,
    floor: T,
    ridge: T,
}

impl<T: Scalar> Plan<T> {
    /// Candidate direction matrices on centered `data`, one per axis entry in
    /// `axis[..count]`. Entry `a` has the columns for every admissible `K`.
    fn candidates(
        &self,
        data: &FunctionalDataset<T>,
        count: usize,
    ) -> Result<Vec<Result<DirectionMatrix<T>>>> {
        let axis = &self.axis[..count];
        match self.method {
            Method::Spcr | Method::SpcrA | Method::SpcrNopen => {
                let b = self.bandwidth.expect("bandwidth fixed for banded methods");
                let sx = banded_covariance(data.x(), b, self.floor)?.matrix;
                let cm = cross_moment(data)?;
                match self.method {
                    Method::Spcr => {
                        let u = cm.top_k_eigen(self.k_max)?.vectors;
                        let lambdas: Vec<T> = axis.iter().map(|&l| T::cst(l)).collect();
                        Ok(fit_directions_path(&sx, &u, &lambdas, &self.solver))
                    }
                    Method::SpcrA => {
                        let c = spcra_correlates(&sx, &cm.matrix, self.k_max)?;
                        let lambdas: Vec<T> = axis.iter().map(|&l| T::cst(l)).collect();
                        Ok(fit_directions_path(&sx, &c, &lambdas, &self.solver))
                    }
                    _ => {
                        let u = cm.top_k_eigen(self.k_max)?.vectors;
                        Ok(vec![fit_directions_unpenalized(&sx, &u)])
                    }
                }
            }
            Method::Upcr => Ok(vec![
                principal_components(data.x(), self.k_max).and_then(DirectionMatrix::raw)
            ]),
            Method::Superpc => Ok(axis
                .iter()
                .map(|&m| {
                    let m = m as usize;
                    let keep = superpc_screen(data, m)?;
                    let sub = data.select_covariates(&keep);
                    let pcs = principal_components(sub.x(), self.k_max.min(m))?;
                    let mut full = DMatrix::zeros(data.p(), pcs.ncols());
                    for (r, &j) in keep.iter().enumerate() {
                        full.set_row(j, &pcs.row(r));
                    }
                    DirectionMatrix::raw(full)
                })
                .collect()),
        }
    }

    fn evaluate_fold(
        &self,
        train: &FunctionalDataset<T>,
        test: &FunctionalDataset<T>,
    ) -> Result<FoldGrid<T>> {
        let cands = self.candidates(train, self.axis.len())?;
        let mut grid = vec![vec![None; self.axis.len()]; self.k_max];
        for (a, cand) in cands.into_iter().enumerate() {
            let Ok(dirs) = cand else { continue };
            for ki in 0..dirs.k().min(self.k_max) {
                let v = dirs.truncate(ki + 1);
                if let Ok(gamma) = regress_gamma_or_zero(train, &v, self.ridge) {
                    grid[ki][a] = Some(heldout_error(test, v.columns(), &gamma));
                }
            }
        }
        Ok(grid)
    }
}

/// Prepares the dataset: optional smoothing, then centering.
fn prepare<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    config: &FitConfig,
) -> Result<FunctionalDataset<T>> {
    if dataset.n() == 0 {
        return Err(SpcrError::EmptyDataset);
    }
    let smoothed = if config.smoothing {
        let s = smooth_dataset(dataset, config.smoothing_lambda.map(T::cst))?;
        if dataset.is_centered() {
            let (x, y, grid) = s.into_parts();
            FunctionalDataset::from_centered(
                x,
                y,
                grid,
                dataset.x_means().clone(),
                dataset.y_means().clone(),
            )?
        } else {
            s
        }
    } else {
        dataset.clone()
    };
    smoothed.centered()
}

fn build_plan<T: Scalar>(
    method: Method,
    centered: &FunctionalDataset<T>,
    config: &FitConfig,
) -> Result<Plan<T>> {
    let p = centered.p();
    let k_max = config.k_max.min(p);
    let bandwidth = if method.uses_bandwidth() {
        Some(match config.bandwidth {
            Some(b) => b,
            None => {
                let band_cfg = BandSelectConfig {
                    seed: stream_seed(config.seed, 0, Stream::Bandwidth),
                    ..config.band_config.clone()
                };
                select_bandwidth(centered.x(), &band_cfg)?.bandwidth
            }
        })
    } else {
        None
    };
    let floor = T::cst(config.psd_floor);
    let axis = match method {
        Method::Spcr | Method::SpcrA => {
            let b = bandwidth.expect("bandwidth set");
            let cm = cross_moment(centered)?;
            let corr = if method == Method::Spcr {
                cm.top_k_eigen(k_max)?.vectors
            } else {
                let sx = banded_covariance(centered.x(), b, floor)?.matrix;
                spcra_correlates(&sx, &cm.matrix, k_max)?
            };
            let lambda_max = corr.amax().to_f64_lossy();
            config.penalty_grid(lambda_max)
        }
        Method::Superpc => {
            let mut sizes: Vec<usize> = config
                .superpc_sizes
                .iter()
                .copied()
                .filter(|&m| m <= p)
                .collect();
            sizes.sort_unstable();
            sizes.dedup();
            if sizes.is_empty() {
                sizes.push(p);
            }
            sizes.into_iter().map(|m| m as f64).collect()
        }
        _ => vec![0.0],
    };
    Ok(Plan {
        method,
        k_max,
        bandwidth,
        axis,
        solver: config.solver(),
        floor,
        ridge: T::cst(config.ridge_fallback),
    })
}

fn check_folds(n: usize, config: &FitConfig) -> Result<()> {
    if n < config.folds {
        return Err(SpcrError::InvalidConfig(format!(
            "n = {n} is smaller than folds = {}",
            config.folds
        )));
    }
    if n / config.folds < 2 {
        return Err(SpcrError::InvalidConfig(format!(
            "folds of fewer than 2 rows (n = {n}, folds = {})",
            config.folds
        )));
    }
    Ok(())
}

/// Cross-validated fit of any method, with an optional explicit fold
/// assignment.
pub fn fit_report<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    method: Method,
    config: &FitConfig,
    folds: Option<&FoldAssignment>,
) -> Result<FitReport<T>> {
    config.validate()?;
    check_folds(dataset.n(), config)?;
    let centered = prepare(dataset, config)?;
    let plan = build_plan(method, &centered, config)?;
    let assignment = match folds {
        Some(f) => f.clone(),
        None => FoldAssignment::random(
            centered.n(),
            config.folds,
            stream_seed(config.seed, method.fold_stream(), Stream::Folds),
        )?,
    };
    let cv = run_cv(
        &centered,
        &assignment,
        plan.k_max,
        &plan.axis,
        |train, test| plan.evaluate_fold(train, test),
    )?;
    if cv.failed_cells > 0 {
        log::warn!(
            "{method}: {} cross-validation cells failed",
            cv.failed_cells
        );
    }
    let (ki, ai) = cv.argmin().expect("run_cv guarantees a finite cell");
    let cands = plan.candidates(&centered, ai + 1)?;
    let full = cands
        .into_iter()
        .nth(ai)
        .ok_or_else(|| SpcrError::Fit("refit produced no candidate".into()))??;
    let k_star = (ki + 1).min(full.k());
    let model = assemble(&plan, &centered, &full, k_star, ai)?;
    Ok(FitReport {
        model,
        cv,
        directions_full: full,
    })
}

fn assemble<T: Scalar>(
    plan: &Plan<T>,
    centered: &FunctionalDataset<T>,
    full: &DirectionMatrix<T>,
    k_star: usize,
    axis_index: usize,
) -> Result<SpcrModel<T>> {
    let directions = full.truncate(k_star);
    let gamma = regress_gamma_or_zero(centered, &directions, plan.ridge)?;
    let (lambda_star, selected_features) = match plan.method {
        Method::Spcr | Method::SpcrA => (T::cst(plan.axis[axis_index]), None),
        Method::Superpc => {
            let keep: Vec<usize> = (0..full.p())
                .filter(|&j| full.columns().row(j).iter().any(|v| *v != T::zero()))
                .collect();
            (T::zero(), Some(keep))
        }
        _ => (T::zero(), None),
    };
    let model = SpcrModel {
        method: plan.method,
        directions,
        gamma,
        k_star,
        lambda_star,
        bandwidth: plan.bandwidth,
        selected_features,
        x_means: centered.x_means().clone(),
        y_means: centered.y_means().clone(),
        grid: centered.grid().clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Fit at fixed `K` and second-axis value, without cross-validation.
///
/// `param` is the penalty for penalized methods and the screening size for
/// the screening baseline; it is ignored otherwise.
pub fn fit_fixed<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    method: Method,
    k: usize,
    param: f64,
    config: &FitConfig,
) -> Result<SpcrModel<T>> {
    config.validate()?;
    let centered = prepare(dataset, config)?;
    let p = centered.p();
    if k == 0 || k > p {
        return Err(SpcrError::InvalidParameter(format!(
            "K = {k} outside 1..={p}"
        )));
    }
    let fixed = FitConfig {
        k_max: k,
        lambda_grid: Some(vec![param]),
        superpc_sizes: vec![param as usize],
        ..config.clone()
    };
    let plan = build_plan(method, &centered, &fixed)?;
    let full = plan
        .candidates(&centered, 1)?
        .pop()
        .ok_or_else(|| SpcrError::Fit("no candidate directions".into()))??;
    let k_star = k.min(full.k());
    assemble(&plan, &centered, &full, k_star, 0)
}

/// Cross-validated penalized fit.
pub fn fit<T: Scalar>(dataset: &FunctionalDataset<T>, config: &FitConfig) -> Result<SpcrModel<T>> {
    fit_method(dataset, Method::Spcr, config)
}

/// Cross-validated fit of `method`.
pub fn fit_method<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    method: Method,
    config: &FitConfig,
) -> Result<SpcrModel<T>> {
    Ok(fit_report(dataset, method, config, None)?.model)
}

pub fn fit_upcr<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    config: &FitConfig,
) -> Result<SpcrModel<T>> {
    fit_method(dataset, Method::Upcr, config)
}

pub fn fit_superpc<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    config: &FitConfig,
) -> Result<SpcrModel<T>> {
    fit_method(dataset, Method::Superpc, config)
}

/// Cross-validation alone, on a centered dataset with fixed bandwidth.
pub fn cross_validate<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    method: Method,
    config: &FitConfig,
    folds: &FoldAssignment,
) -> Result<(usize, f64, CvTable<T>)> {
    config.validate()?;
    if !dataset.is_centered() {
        return Err(SpcrError::Precondition(
            "cross-validation needs a centered dataset".into(),
        ));
    }
    let plan = build_plan(method, dataset, config)?;
    let cv = run_cv(dataset, folds, plan.k_max, &plan.axis, |train, test| {
        plan.evaluate_fold(train, test)
    })?;
    let (ki, ai) = cv.argmin().expect("run_cv guarantees a finite cell");
    Ok((ki + 1, plan.axis[ai], cv))
}

/// Mean held-out error of the intercept-only model under the same folds.
pub fn intercept_only_cv_error<T: Scalar>(
    dataset: &FunctionalDataset<T>,
    folds: &FoldAssignment,
) -> Result<T> {
    let table = run_cv(dataset, folds, 1, &[0.0], |_, test| {
        let zero = DMatrix::zeros(test.n(), test.grid_len());
        Ok(vec![vec![Some(mean_integrated_error(
            test.y(),
            &zero,
            test.grid(),
        ))]])
    })?;
    Ok(table.errors[(0, 0)])
}

impl<T: Scalar> SpcrModel<T> {
    /// A model with no directions that predicts the mean curve.
    pub fn intercept_only(
        method: Method,
        x_means: DVector<T>,
        y_means: DVector<T>,
        grid: Grid<T>,
    ) -> Self {
        let p = x_means.len();
        let len = grid.len();
        Self {
            method,
            directions: DirectionMatrix::zeros(p, 1),
            gamma: DMatrix::zeros(1, len),
            k_star: 1,
            lambda_star: T::zero(),
            bandwidth: None,
            selected_features: None,
            x_means,
            y_means,
            grid,
        }
    }
}

#[cfg(test)]
mod tests;
