//! Command-line interface. Exit codes: 0 success, 1 usage, 2 data, 3 degeneracy.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{run_plan, ExperimentPlan};
use crate::io::{read_dataset, write_dataset};
use crate::kernels::{Exponent, KernelFamily, KernelSpec};
use crate::oracle::{run_oracle_checks, OracleOptions};
use crate::screening::{
    calibrate_lambda_coeff, screen, GammaMode, ScreenConfig, ScreenMode, ScreenResult,
};
use crate::simgen::{generate, ModelSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

pub const THREADS_ENV: &str = "METRIC_SCREEN_THREADS";

pub const BUNDLED_UNEQ_VAR: &str = include_str!("../plans/uneq_var.json");
pub const BUNDLED_XOR_SMALL: &str = include_str!("../plans/xor_small.json");

#[derive(Debug, Parser)]
#[command(
    name = "metric-screen",
    version,
    about = "Metric-learning variable screening"
)]
pub struct Cli {
    /// Worker threads (default: all cores). METRIC_SCREEN_THREADS overrides.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen a CSV dataset and write the selected set as JSON.
    Screen(ScreenArgs),
    /// Calibrate the lambda coefficient on a held-out CSV dataset.
    Calibrate(CalibrateArgs),
    /// Draw a simulated dataset as CSV with a JSON sidecar.
    Simulate(SimulateArgs),
    /// Run a replication plan and write JSON and CSV reports.
    Replicate(ReplicateArgs),
    /// Run the built-in oracle self-checks.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Low,
    High,
    Hier,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Xor,
    Qda,
    UnequalVariance,
    RatioLogistic,
}

/// `permutation:N:Q`, `theory:C:T` or `fixed:G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaArg(pub GammaMode);

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> std::result::Result<f64, String> {
            parts
                .get(i)
                .ok_or_else(|| format!("missing field {i} in '{s}'"))?
                .parse::<f64>()
                .map_err(|e| format!("'{s}': {e}"))
        };
        let mode = match (parts[0], parts.len()) {
            ("permutation", 3) => GammaMode::Permutation {
                n_perm: parts[1].parse().map_err(|e| format!("'{s}': {e}"))?,
                quantile: num(2)?,
            },
            ("theory", 3) => GammaMode::TheoryForm {
                c_gamma: num(1)?,
                t: num(2)?,
            },
            ("fixed", 2) => GammaMode::Fixed { gamma: num(1)? },
            _ => {
                return Err(format!(
                    "expected permutation:N:Q, theory:C:T or fixed:G, got '{s}'"
                ))
            }
        };
        Ok(GammaArg(mode))
    }
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the binary label column.
    #[arg(long, default_value = "y")]
    pub label: String,
    /// Keep features on their original scale.
    #[arg(long)]
    pub no_rescale: bool,
}

#[derive(Debug, clap::Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON run config (as embedded in a previous output); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub gamma: Option<GammaArg>,
    #[arg(long)]
    pub lambda_coeff: Option<f64>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub max_selected: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "laplace")]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 20)]
    pub n_perm: usize,
    #[arg(long, default_value_t = 1.0)]
    pub quantile: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; the sidecar is written next to it with a `.json` suffix.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReplicateArgs {
    /// Plan JSON path, or `bundled:uneq_var` / `bundled:xor_small`.
    #[arg(long)]
    pub plan: String,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Override the plan's rep count.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override the plan's noise dimensions (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub noise_dims: Option<Vec<usize>>,
}

#[derive(Debug, clap::Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale of the negative-exponential kernel under test.
    #[arg(long, default_value_t = 1.0)]
    pub kernel_scale: f64,
    /// Test hook: negate the analytic gradient.
    #[arg(long, hide = true)]
    pub inject_gradient_sign_error: bool,
}

/// Everything needed to reproduce a `screen` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: u32,
    pub label: String,
    pub rescale: bool,
    pub screen: ScreenConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenOutput {
    pub schema: u32,
    pub input: String,
    pub seed: u64,
    pub config: RunConfig,
    pub feature_names: Vec<String>,
    /// Per-column divisors applied before screening (all 1 without rescaling).
    pub rescale_divisors: Vec<f64>,
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub result: ScreenResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSidecar {
    pub schema: u32,
    pub model: ModelSpec,
    pub n: usize,
    pub seed: u64,
    pub signal_set: Vec<usize>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_degenerate() => EXIT_DEGENERATE,
        Error::InvalidConfig(_) | Error::Domain(_) | Error::InfeasibleConstraint { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_DATA,
    }
}

/// Thread count: environment first, then the flag, else all cores.
pub fn resolve_threads(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV}='{v}' is not a thread count")),
        Err(_) => Ok(flag),
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match resolve_threads(cli.threads) {
        Ok(Some(0)) | Err(_) => {
            eprintln!("error: thread count must be a positive integer");
            return EXIT_USAGE;
        }
        Ok(Some(t)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
            {
                log::warn!("thread pool already initialised: {e}");
            }
        }
        Ok(None) => {}
    }
    let res = match cli.command {
        Command::Screen(a) => cmd_screen(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Replicate(a) => cmd_replicate(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn kernel_of(k: KernelArg) -> KernelSpec {
    match k {
        KernelArg::Laplace => KernelSpec::laplace(),
        KernelArg::Gaussian => KernelSpec::gaussian(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Effective run config: file first, then flags.
pub fn build_run_config(a: &ScreenArgs) -> Result<RunConfig> {
    let mut rc = match &a.config {
        Some(path) => read_json::<RunConfig>(path)?,
        None => RunConfig {
            schema: 1,
            label: a.data.label.clone(),
            rescale: true,
            screen: ScreenConfig::default(),
        },
    };
    if rc.schema != 1 {
        return Err(Error::InvalidConfig(
            "schema: only version 1 is supported".into(),
        ));
    }
    rc.label = a.data.label.clone();
    if a.data.no_rescale {
        rc.rescale = false;
    }
    let s = &mut rc.screen;
    if let Some(m) = a.mode {
        s.mode = match m {
            ModeArg::Low => ScreenMode::LowDim,
            ModeArg::High => ScreenMode::HighDim,
            ModeArg::Hier => ScreenMode::Hier,
        };
    }
    if let Some(g) = a.gamma {
        s.gamma = g.0;
    }
    if let Some(v) = a.lambda_coeff {
        s.lambda_coeff = v;
    }
    if let Some(v) = a.budget {
        s.budget = v;
    }
    if let Some(k) = a.kernel {
        s.kernel = kernel_of(k);
    }
    if a.tau.is_some() {
        s.tau = a.tau;
    }
    if let Some(v) = a.max_rounds {
        s.max_rounds = v;
    }
    if a.max_selected.is_some() {
        s.max_selected = a.max_selected;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    s.validate()?;
    Ok(rc)
}

fn load(data: &DataArgs, rescale: bool) -> Result<(crate::io::CsvDataset, Vec<f64>)> {
    let file = File::open(&data.input)?;
    let mut d = read_dataset(BufReader::new(file), &data.label)?;
    let divisors = if rescale {
        d.data.rescale_max_abs()
    } else {
        vec![1.0; d.data.p]
    };
    Ok((d, divisors))
}

pub fn cmd_screen(a: &ScreenArgs) -> Result<i32> {
    let rc = build_run_config(a)?;
    let (d, divisors) = load(&a.data, rc.rescale)?;
    log::info!("loaded {} rows, {} features", d.data.n, d.data.p);
    let ds = d.data.to_balanced()?;
    let result = screen(&ds, &rc.screen)?;
    let out = ScreenOutput {
        schema: 1,
        input: a.data.input.display().to_string(),
        seed: rc.screen.seed,
        selected: result.selected.clone(),
        selected_names: result
            .selected
            .iter()
            .map(|&j| d.feature_names[j].clone())
            .collect(),
        feature_names: d.feature_names,
        rescale_divisors: divisors,
        config: rc,
        result,
    };
    write_json(a.output.as_deref(), &out)?;
    Ok(EXIT_OK)
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<i32> {
    let (d, _) = load(&a.data, !a.data.no_rescale)?;
    let ds = d.data.to_balanced()?;
    let cfg = ScreenConfig {
        kernel: kernel_of(a.kernel),
        ..ScreenConfig::default()
    };
    let c = calibrate_lambda_coeff(&ds, &cfg, a.n_perm, a.quantile, a.seed)?;
    let out = serde_json::json!({
        "schema": 1,
        "lambda_coeff": c,
        "n_perm": a.n_perm,
        "quantile": a.quantile,
        "seed": a.seed,
        "kernel": cfg.kernel,
    });
    write_json(None, &out)?;
    Ok(EXIT_OK)
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let model = match a.model {
        ModelArg::Xor => ModelSpec::xor(a.p),
        ModelArg::Qda => ModelSpec::qda(a.p),
        ModelArg::UnequalVariance => ModelSpec::unequal_variance(a.p),
        ModelArg::RatioLogistic => ModelSpec::ratio_logistic(a.p),
    };
    model.validate()?;
    let raw = generate(&model, a.n, a.seed)?;
    let file = BufWriter::new(File::create(&a.output)?);
    write_dataset(file, &raw)?;
    let sidecar = SimulateSidecar {
        schema: 1,
        signal_set: model.signal_set(),
        model,
        n: a.n,
        seed: a.seed,
    };
    write_json(Some(&sidecar_path(&a.output)), &sidecar)?;
    log::info!("wrote {} rows to {}", a.n, a.output.display());
    Ok(EXIT_OK)
}

pub fn load_plan(spec: &str) -> Result<ExperimentPlan> {
    let text = match spec {
        "bundled:uneq_var" => BUNDLED_UNEQ_VAR.to_string(),
        "bundled:xor_small" => BUNDLED_XOR_SMALL.to_string(),
        path => std::fs::read_to_string(path)?,
    };
    let plan: ExperimentPlan = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("plan {spec}: {e}")))?;
    Ok(plan)
}

pub fn cmd_replicate(a: &ReplicateArgs) -> Result<i32> {
    let mut plan = load_plan(&a.plan)?;
    if let Some(r) = a.reps {
        plan.reps = r;
    }
    if let Some(d) = &a.noise_dims {
        plan.noise_dims = d.clone();
    }
    plan.validate()?;
    std::fs::create_dir_all(&a.out_dir)?;
    let report = run_plan(&plan)?;
    write_json(Some(&a.out_dir.join("report.json")), &report)?;
    std::fs::write(a.out_dir.join("report.csv"), report.to_csv()?)?;
    for f in &report.failures {
        log::warn!(
            "{} noise_dim={} rep={} failed: {}",
            f.method.name(),
            f.noise_dim,
            f.rep,
            f.error
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_oracle_check(a: &OracleArgs) -> Result<i32> {
    let kernel = KernelSpec::new(
        KernelFamily::NegExp {
            scale: a.kernel_scale,
        },
        Exponent::One,
    )?;
    let report = run_oracle_checks(&OracleOptions {
        kernel,
        seed: a.seed,
        inject_gradient_sign_error: a.inject_gradient_sign_error,
    });
    for c in &report.checks {
        println!(
            "{} {}: max error {:.3e} (tolerance {:.0e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_error,
            c.tolerance,
            c.detail
        );
    }
    Ok(if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_DATA
    })
}
