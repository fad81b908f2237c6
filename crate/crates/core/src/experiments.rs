//! Recovery experiments, the distance-correlation baseline and the kernel
//! scaling probe.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::screening::{screen, GammaMode, ScreenConfig, ScreenMode};
use crate::simgen::{derive_seed, generate, ModelSpec, RawDataset};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    MetricLaplace,
    MetricGaussian,
    MarginalDCor,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::MetricLaplace => "metric_laplace",
            Method::MetricGaussian => "metric_gaussian",
            Method::MarginalDCor => "marginal_dcor",
        }
    }
}

fn default_noise_dims() -> Vec<usize> {
    vec![50, 250, 500, 750, 1000]
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::MetricLaplace,
        Method::MetricGaussian,
        Method::MarginalDCor,
    ]
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "schema_version")]
    pub schema: u32,
    /// The model's own `p` is replaced by `|S| + noise_dim` in every cell.
    pub model: ModelSpec,
    #[serde(default = "default_noise_dims")]
    pub noise_dims: Vec<usize>,
    pub n: usize,
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub select_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Screening settings for the metric methods; the kernel and selection cap
    /// are overridden per method.
    #[serde(default)]
    pub screen: Option<ScreenConfig>,
    #[serde(default = "yes")]
    pub rescale: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.schema != SCHEMA_VERSION {
            return bad("schema: only version 1 is supported");
        }
        if self.reps == 0 {
            return bad("reps: must be >= 1");
        }
        if self.select_k == 0 {
            return bad("select_k: must be >= 1");
        }
        if self.n < 4 {
            return bad("n: must be >= 4");
        }
        if self.noise_dims.is_empty() {
            return bad("noise_dims: must be nonempty");
        }
        if self.methods.is_empty() {
            return bad("methods: must be nonempty");
        }
        if self.model.signal_set().is_empty() {
            return bad("model: needs a known signal set");
        }
        self.model
            .with_p(self.p_for(self.noise_dims[0]))
            .validate()?;
        if let Some(cfg) = &self.screen {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn signal_set(&self) -> Vec<usize> {
        self.model.signal_set()
    }

    pub fn p_for(&self, noise_dim: usize) -> usize {
        self.signal_set().len() + noise_dim
    }

    /// Screening configuration used for a metric method.
    pub fn screen_config(&self, method: Method, seed: u64) -> ScreenConfig {
        let base = self.screen.clone().unwrap_or_else(|| ScreenConfig {
            mode: ScreenMode::LowDim,
            gamma: GammaMode::Fixed { gamma: 0.0 },
            ..ScreenConfig::default()
        });
        let kernel = match method {
            Method::MetricGaussian => KernelSpec::gaussian(),
            _ => KernelSpec::laplace(),
        };
        ScreenConfig {
            kernel,
            max_selected: Some(self.select_k),
            seed,
            ..base
        }
    }
}

/// Sample distance correlation (V-statistic, double centred) in `O(n)` memory.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < 4 {
        return Err(Error::InvalidData(format!(
            "distance correlation needs n >= 4, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite input".into()));
    }
    let row_means = |v: &[f64]| -> (Vec<f64>, f64) {
        let m: Vec<f64> = v
            .iter()
            .map(|a| v.iter().map(|b| (a - b).abs()).sum::<f64>() / n as f64)
            .collect();
        let grand = m.iter().sum::<f64>() / n as f64;
        (m, grand)
    };
    let (ax, gx) = row_means(x);
    let (ay, gy) = row_means(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            let a = (x[i] - x[k]).abs() - ax[i] - ax[k] + gx;
            let b = (y[i] - y[k]).abs() - ay[i] - ay[k] + gy;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
    }
    let denom = (sxx * syy).sqrt();
    if !(denom > 0.0) {
        return Ok(0.0);
    }
    Ok((sxy / denom).max(0.0).sqrt().min(1.0))
}

/// Indices of the `k` columns with the largest distance correlation to the labels.
pub fn marginal_dcor_top_k(raw: &RawDataset, k: usize) -> Result<Vec<usize>> {
    let y: Vec<f64> = raw.labels.iter().map(|&v| v as f64).collect();
    let scores: Vec<f64> = (0..raw.p)
        .into_par_iter()
        .map(|j| distance_correlation(&raw.column(j), &y))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..raw.p).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Variables chosen by `method` on one dataset.
pub fn run_method(
    plan: &ExperimentPlan,
    method: Method,
    raw: &RawDataset,
    seed: u64,
) -> Result<Vec<usize>> {
    match method {
        Method::MarginalDCor => marginal_dcor_top_k(raw, plan.select_k),
        _ => {
            let ds = raw.to_balanced()?;
            Ok(screen(&ds, &plan.screen_config(method, seed))?.selected)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub noise_dim: usize,
    pub p: usize,
    /// Completed reps.
    pub reps: usize,
    pub failed: usize,
    pub signal: Vec<usize>,
    /// Per signal variable, fraction of completed reps selecting it.
    pub recovery: Vec<f64>,
    pub all_recovered: f64,
    pub mean_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub noise_dim: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: Method,
    pub noise_dim: usize,
    pub mean_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema: u32,
    pub plan: ExperimentPlan,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    /// Wall-clock statistics; excluded from reproducibility comparisons.
    pub timing: Vec<Timing>,
}

impl RecoveryReport {
    pub fn cell(&self, method: Method, noise_dim: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.noise_dim == noise_dim)
    }

    /// One row per (method, noise_dim, signal variable).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "noise_dim",
            "p",
            "variable",
            "recovery",
            "all_recovered",
            "reps",
            "failed",
            "mean_seconds",
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            let secs = self
                .timing
                .iter()
                .find(|t| t.method == c.method && t.noise_dim == c.noise_dim)
                .map_or(0.0, |t| t.mean_seconds);
            for (j, r) in c.signal.iter().zip(&c.recovery) {
                w.write_record([
                    c.method.name().to_string(),
                    c.noise_dim.to_string(),
                    c.p.to_string(),
                    format!("x{}", j + 1),
                    r.to_string(),
                    c.all_recovered.to_string(),
                    c.reps.to_string(),
                    c.failed.to_string(),
                    format!("{secs:.6}"),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidData(e.to_string())
}

struct Outcome {
    method: Method,
    dim_index: usize,
    rep: usize,
    selected: Result<Vec<usize>>,
    seconds: f64,
}

/// Runs every (noise_dim, rep, method) cell. Data for a (noise_dim, rep) pair
/// is shared across methods and drawn from its own seed stream.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RecoveryReport> {
    plan.validate()?;
    let signal = plan.signal_set();
    let tasks: Vec<(usize, usize)> = (0..plan.noise_dims.len())
        .flat_map(|d| (0..plan.reps).map(move |r| (d, r)))
        .collect();
    let outcomes: Vec<Vec<Outcome>> = tasks
        .par_iter()
        .map(|&(d, rep)| {
            let noise_dim = plan.noise_dims[d];
            let stream = derive_seed(derive_seed(plan.seed, d as u64), rep as u64);
            let model = plan.model.with_p(plan.p_for(noise_dim));
            let data = generate(&model, plan.n, stream).map(|mut raw| {
                if plan.rescale {
                    raw.rescale_max_abs();
                }
                raw
            });
            let out: Vec<Outcome> = plan
                .methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let selected = match &data {
                        Ok(raw) => run_method(plan, method, raw, stream),
                        Err(e) => Err(Error::InvalidData(e.to_string())),
                    };
                    Outcome {
                        method,
                        dim_index: d,
                        rep,
                        selected,
                        seconds: start.elapsed().as_secs_f64(),
                    }
                })
                .collect();
            log::info!("cell noise_dim={noise_dim} rep={rep} done");
            out
        })
        .collect();
    let flat: Vec<Outcome> = outcomes.into_iter().flatten().collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut timing = Vec::new();
    for &method in &plan.methods {
        for (d, &noise_dim) in plan.noise_dims.iter().enumerate() {
            let mut hits = vec![0usize; signal.len()];
            let (mut done, mut failed, mut all, mut total_sel) = (0usize, 0usize, 0usize, 0usize);
            let (mut secs, mut max_secs) = (0.0f64, 0.0f64);
            for o in flat
                .iter()
                .filter(|o| o.method == method && o.dim_index == d)
            {
                secs += o.seconds;
                max_secs = max_secs.max(o.seconds);
                match &o.selected {
                    Ok(sel) => {
                        done += 1;
                        total_sel += sel.len();
                        let mut every = true;
                        for (h, j) in hits.iter_mut().zip(&signal) {
                            if sel.contains(j) {
                                *h += 1;
                            } else {
                                every = false;
                            }
                        }
                        all += every as usize;
                    }
                    Err(e) => {
                        failed += 1;
                        failures.push(CellFailure {
                            method,
                            noise_dim,
                            rep: o.rep,
                            error: e.to_string(),
                        });
                    }
                }
            }
            let frac = |k: usize| {
                if done == 0 {
                    0.0
                } else {
                    k as f64 / done as f64
                }
            };
            cells.push(CellResult {
                method,
                noise_dim,
                p: plan.p_for(noise_dim),
                reps: done,
                failed,
                signal: signal.clone(),
                recovery: hits.iter().map(|&h| frac(h)).collect(),
                all_recovered: frac(all),
                mean_selected: frac(total_sel),
            });
            timing.push(Timing {
                method,
                noise_dim,
                mean_seconds: secs / plan.reps as f64,
                max_seconds: max_secs,
            });
        }
    }
    Ok(RecoveryReport {
        schema: SCHEMA_VERSION,
        plan: plan.clone(),
        cells,
        failures,
        timing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingProbeConfig {
    pub sigma2: f64,
    pub delta: f64,
    /// Monte Carlo draws per expectation.
    pub draws: usize,
    pub seed: u64,
}

impl Default for ScalingProbeConfig {
    fn default() -> Self {
        ScalingProbeConfig {
            sigma2: 1.0,
            delta: 0.5,
            draws: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub p: usize,
    pub f_gaussian: f64,
    pub f_laplace: f64,
    pub grad_gaussian: f64,
    pub grad_laplace: f64,
    pub se_f_gaussian: f64,
    pub se_f_laplace: f64,
    pub se_grad_gaussian: f64,
    pub se_grad_laplace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub slope_f_gaussian: f64,
    pub slope_f_laplace: f64,
    pub slope_grad_gaussian: f64,
    pub slope_grad_laplace: f64,
}

/// Least-squares slope of `log |y|` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Population objective and first gradient coordinate at `(1/p) 1` for the
/// one-signal unequal-variance model, under the Gaussian (`q = 2`) and
/// Laplace (`q = 1`) kernels with `f(x) = -e^{-x}`.
///
/// Coordinates are independent given `Y` and the noise is independent of
/// `Y`, so the pair expectation factors into a noise term common to both
/// classes and a signal term. The signal term uses common normal draws for
/// the between and within pair laws; the noise term is a one-dimensional
/// expectation raised to the power `p - 1`.
pub fn l1_vs_l2_scaling_probe(p_list: &[usize], cfg: &ScalingProbeConfig) -> Result<ScalingTable> {
    if p_list.len() < 2 || p_list.windows(2).any(|w| w[0] >= w[1]) || p_list[0] < 2 {
        return Err(Error::InvalidConfig(
            "p_list must be increasing with at least two entries >= 2".into(),
        ));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0 && cfg.sigma2 > 0.0) || cfg.draws < 100 {
        return Err(Error::InvalidConfig(
            "need 0 < delta < 1, sigma2 > 0 and draws >= 100".into(),
        ));
    }
    let s2 = cfg.sigma2;
    let v0 = s2 * (1.0 - cfg.delta);
    let v1 = s2 * (1.0 + cfg.delta);
    // pair-difference variances
    let vb = v0 + v1;
    let (vw0, vw1) = (2.0 * v0, 2.0 * v1);
    let vn = 2.0 * s2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z: Vec<f64> = (0..cfg.draws).map(|_| rng.sample(StandardNormal)).collect();

    let mut rows = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let a = 1.0 / p as f64;
        let mut row = ScalingRow {
            p,
            f_gaussian: 0.0,
            f_laplace: 0.0,
            grad_gaussian: 0.0,
            grad_laplace: 0.0,
            se_f_gaussian: 0.0,
            se_f_laplace: 0.0,
            se_grad_gaussian: 0.0,
            se_grad_laplace: 0.0,
        };
        for q in [1u8, 2] {
            let d = |v: f64, z: f64| -> f64 {
                let x = v.sqrt() * z;
                if q == 1 {
                    x.abs()
                } else {
                    x * x
                }
            };
            let noise: Vec<f64> = z.iter().map(|&zi| (-a * d(vn, zi)).exp()).collect();
            let (noise_mean, _) = mean_se(&noise);
            let factor = noise_mean.powi(p as i32 - 1);
            let contrast = |g: &dyn Fn(f64) -> f64| -> Vec<f64> {
                z.iter()
                    .map(|&zi| g(d(vb, zi)) - 0.5 * g(d(vw0, zi)) - 0.5 * g(d(vw1, zi)))
                    .collect()
            };
            let value = contrast(&|t| -(-a * t).exp());
            let slope = contrast(&|t| t * (-a * t).exp());
            let (fv, fse) = mean_se(&value);
            let (gv, gse) = mean_se(&slope);
            if q == 1 {
                row.f_laplace = factor * fv;
                row.se_f_laplace = factor * fse;
                row.grad_laplace = factor * gv;
                row.se_grad_laplace = factor * gse;
            } else {
                row.f_gaussian = factor * fv;
                row.se_f_gaussian = factor * fse;
                row.grad_gaussian = factor * gv;
                row.se_grad_gaussian = factor * gse;
            }
        }
        rows.push(row);
    }
    let ps: Vec<f64> = rows.iter().map(|r| r.p as f64).collect();
    let col = |f: fn(&ScalingRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(ScalingTable {
        slope_f_gaussian: loglog_slope(&ps, &col(|r| r.f_gaussian)),
        slope_f_laplace: loglog_slope(&ps, &col(|r| r.f_laplace)),
        slope_grad_gaussian: loglog_slope(&ps, &col(|r| r.grad_gaussian)),
        slope_grad_laplace: loglog_slope(&ps, &col(|r| r.grad_laplace)),
        rows,
    })
}
