use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spcr::covariance::{select_bandwidth, BandSelectConfig};
use spcr::io::{self, Provenance};
use spcr::metrics::{
    aligned_direction_error, leading_columns, prediction_error, projection_loss, replicate_harness,
    HarnessConfig, HarnessMethod,
};
use spcr::rng::{stream_seed, Stream};
use spcr::simulate::{
    add_measurement_error, generate_setting1, generate_setting2, SettingConfig, TRUE_DIMENSION,
};
use spcr::smoothing::smooth_dataset;
use spcr::spcr::{fit_report, predict};
use spcr::{FitConfig, Method, SpcrError};

#[derive(Parser, Debug)]
#[command(
    name = "spcr",
    version,
    about = "Supervised principal component regression for functional responses"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "SPCR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a training dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Smooth every response curve with a GCV-tuned cubic spline.
    Smooth(SmoothArgs),
    /// Choose the covariance banding bandwidth by random splits.
    SelectBandwidth(BandwidthArgs),
    /// Fit a model with cross-validated tuning.
    Fit(FitArgs),
    /// Predict response curves for new covariates.
    Predict(PredictArgs),
    /// Score a model on a test dataset.
    Evaluate(EvaluateArgs),
    /// Run the Monte Carlo comparison of methods.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    setting: u8,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 101)]
    grid_len: usize,
    /// Variance of i.i.d. measurement error added to every observation.
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SmoothArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Fixed smoothing parameter instead of GCV.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    splits: usize,
    /// Write the risk curve here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON fit configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "spcr")]
    method: String,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the cross-validation error table as CSV.
    #[arg(long)]
    cv_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate matrix CSV, one row per sample.
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth manifest for direction metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    #[arg(long)]
    setting: u8,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Comma-separated dimensions; every (n, p) pair is run.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<usize>,
    #[arg(long = "R")]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "spcr,upcr,spcr-nopen")]
    methods: Vec<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 101)]
    grid_len: usize,
    #[arg(long, default_value_t = 5000)]
    test_size: usize,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Core(SpcrError),
}

impl From<SpcrError> for CliError {
    fn from(e: SpcrError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Smooth(a) => smooth(a),
        Command::SelectBandwidth(a) => bandwidth(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Replicate(a) => replicate(a),
    }
}

fn check_setting(setting: u8) -> CliResult<()> {
    if setting == 1 || setting == 2 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--setting must be 1 or 2, got {setting}"
        )))
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    check_setting(a.setting)?;
    let cfg = SettingConfig::new(a.n, a.p, a.seed).with_grid_len(a.grid_len);
    let (mut ds, truth) = if a.setting == 1 {
        generate_setting1::<f64>(&cfg)?
    } else {
        generate_setting2::<f64>(&cfg)?
    };
    if let Some(v) = a.noise_var {
        ds = add_measurement_error(&ds, v, stream_seed(a.seed, 0, Stream::Measurement))?;
    }
    let record = json!({ "setting": a.setting, "simulation": cfg, "noise_var": a.noise_var });
    let prov = Provenance::new("simulate", Some(a.seed), &record)?;
    io::write_dataset(&a.out, &ds, Some(prov.clone()))?;
    io::write_truth(&a.out, a.setting, &truth)?;
    io::write_json(
        &a.out.join("provenance.json"),
        &json!({ "provenance": prov, "config": record }),
    )?;
    Ok(())
}

fn smooth(a: SmoothArgs) -> CliResult<()> {
    let ds = io::read_dataset::<f64>(&a.data)?;
    let smoothed = smooth_dataset(&ds, a.lambda)?;
    let prov = Provenance::new("smooth", None, &json!({ "lambda": a.lambda }))?;
    io::write_dataset(&a.out, &smoothed, Some(prov))?;
    Ok(())
}

fn bandwidth(a: BandwidthArgs) -> CliResult<()> {
    let ds = io::read_dataset::<f64>(&a.data)?;
    let cfg = BandSelectConfig {
        n_splits: a.splits,
        ..BandSelectConfig::with_seed(a.seed)
    };
    let sel = select_bandwidth(ds.x(), &cfg)?;
    let mut text = String::from("bandwidth,risk,selected\n");
    for (&b, r) in sel.candidates.iter().zip(&sel.risk) {
        text.push_str(&format!(
            "{b},{},{}\n",
            io::format_float(*r),
            u8::from(b == sel.bandwidth)
        ));
    }
    eprintln!("selected bandwidth: {}", sel.bandwidth);
    match a.out {
        Some(path) => io::write_atomic(&path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_fit_config(path: Option<&Path>) -> CliResult<FitConfig> {
    match path {
        Some(p) => Ok(io::read_json(p)?),
        None => Ok(FitConfig::default()),
    }
}

fn fit(a: FitArgs) -> CliResult<()> {
    let method = Method::parse(&a.method).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = load_fit_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = io::read_dataset::<f64>(&a.data)?;
    let report = fit_report(&ds, method, &cfg, None)?;
    let prov = Provenance::new("fit", Some(cfg.seed), &cfg)?;
    io::save_model(&a.out, &report.model, &cfg, prov)?;
    if let Some(path) = a.cv_out {
        let cv = &report.cv;
        let mut text = String::from("k,axis,error\n");
        for (ki, k) in cv.k_values.iter().enumerate() {
            for (ai, v) in cv.axis.iter().enumerate() {
                text.push_str(&format!(
                    "{k},{},{}\n",
                    io::format_float(*v),
                    io::format_float(cv.errors[(ki, ai)])
                ));
            }
        }
        io::write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> CliResult<()> {
    let model = io::load_model::<f64>(&a.model)?;
    let x = io::read_matrix_csv::<f64>(&a.x)?;
    let y = predict(&model, &x)?;
    io::write_matrix_csv(&a.out, &y, "y")?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let model = io::load_model::<f64>(&a.model)?;
    let test = io::read_dataset::<f64>(&a.data)?;
    let mut report = json!({
        "method": model.method.name(),
        "k_star": model.k_star,
        "prediction_error": prediction_error(&model, &test)?,
    });
    if let Some(truth) = &a.truth {
        let dirs = io::read_truth_directions::<f64>(truth)?;
        let v_hat = leading_columns(model.directions.columns(), TRUE_DIMENSION);
        if let Some(v_star) = &dirs.v_star {
            report["projection_loss"] = json!(projection_loss(&v_hat, v_star)?.value);
            report["sparse_direction_error"] = json!(aligned_direction_error(&v_hat, v_star)?);
        }
        if let Some(v_pop) = &dirs.v_population {
            report["direction_error"] = json!(aligned_direction_error(&v_hat, v_pop)?);
        }
    }
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Core(SpcrError::Parse(e.to_string())))?;
    match a.out {
        Some(path) => io::write_atomic(&path, format!("{text}\n").as_bytes())?,
        None => println!("{text}"),
    }
    Ok(())
}

fn replicate(a: ReplicateArgs) -> CliResult<()> {
    check_setting(a.setting)?;
    let methods = a
        .methods
        .iter()
        .map(|m| HarnessMethod::parse(m.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let sizes =
        a.n.iter()
            .flat_map(|&n| a.p.iter().map(move |&p| (n, p)))
            .collect();
    let mut cfg = HarnessConfig::new(a.setting, sizes, a.replicates, methods, a.seed);
    cfg.grid_len = a.grid_len;
    cfg.test_size = a.test_size;
    cfg.noise_var = a.noise_var;
    cfg.fit = load_fit_config(a.config.as_deref())?;
    let result = replicate_harness::<f64>(&cfg).map_err(|e| match e {
        SpcrError::InvalidConfig(msg) => CliError::Usage(msg),
        other => CliError::Core(other),
    })?;
    io::write_atomic(&a.out.join("summary.csv"), result.summary_csv().as_bytes())?;
    io::write_atomic(&a.out.join("raw.csv"), result.raw_csv().as_bytes())?;
    let prov = Provenance::new("replicate", Some(a.seed), &cfg)?;
    io::write_json(
        &a.out.join("provenance.json"),
        &json!({ "provenance": prov, "config": cfg }),
    )?;
    Ok(())
}
