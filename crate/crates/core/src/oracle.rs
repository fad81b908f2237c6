//! Self-checks against independent references: the XOR closed form, finite
//! differences, a brute-force projection and the rebalancing balance identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::{Exponent, KernelSpec};
use crate::objective::{evaluate, gradient, WeightedDataset};
use crate::optimizer::{project, ConstraintSet};
use crate::rebalance::{compute_weights, fit_conditional, BoostConfig};
use crate::simgen::{population_objective, xor_closed_form, DiscreteDist};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Kernel under test; the closed-form check assumes the default Laplace kernel.
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Test hook: negate the analytic gradient before the finite-difference check.
    pub inject_gradient_sign_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst error seen.
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema: u32,
    pub options: OracleOptions,
    pub checks: Vec<CheckOutcome>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn outcome(name: &str, res: Result<(f64, String)>, tol: f64) -> CheckOutcome {
    match res {
        Ok((err, detail)) => CheckOutcome {
            name: name.into(),
            passed: err <= tol,
            max_error: err,
            tolerance: tol,
            detail,
        },
        Err(e) => CheckOutcome {
            name: name.into(),
            passed: false,
            max_error: f64::INFINITY,
            tolerance: tol,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_oracle_checks(opts: &OracleOptions) -> OracleReport {
    let checks = vec![
        outcome("xor_closed_form", check_xor(&opts.kernel), 1e-9),
        outcome("gradient_finite_difference", check_gradient(opts), 1e-6),
        outcome("projection_brute_force", check_projection(opts.seed), 1e-9),
        outcome("rebalance_class_balance", check_balance(opts.seed), 1e-10),
    ];
    OracleReport {
        schema: 1,
        options: opts.clone(),
        checks,
    }
}

fn check_xor(spec: &KernelSpec) -> Result<(f64, String)> {
    let d = DiscreteDist::xor(2, 0);
    let v = population_objective(
        &d,
        &[1.0, 1.0],
        &spec.with_q(Exponent::One),
        &d.unit_weights(),
    )?;
    let want = xor_closed_form(1.0, 1.0, 0.0)?;
    Ok((
        (v - want).abs(),
        format!("enumerated {v:.15}, closed form {want:.15}"),
    ))
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Result<WeightedDataset> {
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    y[0] = 0;
    y[1] = 1;
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    WeightedDataset::new(x, n, p, y, w)
}

/// Relative error of the analytic gradient against central differences,
/// worst over instances and coordinates.
fn check_gradient(opts: &OracleOptions) -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6772_6164);
    let (n, p) = (50, 10);
    let mut worst = 0.0f64;
    let mut count = 0;
    for q in [Exponent::One, Exponent::Two] {
        let spec = opts.kernel.with_q(q);
        for _ in 0..5 {
            let ds = random_dataset(&mut rng, n, p)?;
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.5)).collect();
            let mut g = gradient(&ds, &beta, &spec)?;
            if opts.inject_gradient_sign_error {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            for j in 0..p {
                let h = 1e-5 * (1.0 + beta[j]);
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (evaluate(&ds, &up, &spec)? - evaluate(&ds, &dn, &spec)?) / (2.0 * h);
                let scale = fd.abs().max(g[j].abs()).max(1e-8);
                worst = worst.max((fd - g[j]).abs() / scale);
            }
            count += 1;
        }
    }
    Ok((worst, format!("{count} instances, n={n}, p={p}")))
}

/// Exact projection by enumerating supports and whether the budget binds.
pub fn brute_force_projection(v: &[f64], budget: f64) -> Vec<f64> {
    let p = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|j| mask >> j & 1 == 1).collect();
        for binding in [false, true] {
            let mut cand = vec![0.0; p];
            let shift = if binding && !idx.is_empty() {
                (idx.iter().map(|&j| v[j]).sum::<f64>() - budget) / idx.len() as f64
            } else {
                0.0
            };
            for &j in &idx {
                cand[j] = v[j] - shift;
            }
            let sum: f64 = cand.iter().sum();
            if shift < -1e-15 || cand.iter().any(|&c| c < 0.0) || sum > budget * (1.0 + 1e-12) {
                continue;
            }
            let dist: f64 = cand.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, cand));
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| vec![0.0; p])
}

fn check_projection(seed: u64) -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f6a);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(1..=6);
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..3.0)).collect();
        let b = rng.random_range(0.1..4.0);
        let got = project(&v, &ConstraintSet::new(b))?;
        let want = brute_force_projection(&v, b);
        for (a, c) in got.iter().zip(&want) {
            worst = worst.max((a - c).abs());
        }
    }
    Ok((worst, "100 instances, p <= 6".into()))
}

/// `|sum_{y=1} w - sum_{y=0} w| / n` after fit + reweight.
fn check_balance(seed: u64) -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6261_6c61);
    let mut worst = 0.0f64;
    let cfg = BoostConfig {
        rounds: 20,
        ..BoostConfig::default()
    };
    for _ in 0..20 {
        let n = rng.random_range(40..200);
        let p = rng.random_range(1..5);
        let ds = random_dataset(&mut rng, n, p)?;
        let k = rng.random_range(1..=p);
        let selected: Vec<usize> = (0..k).collect();
        let model = fit_conditional(&ds, &selected, &cfg)?;
        let upd = compute_weights(&model, &ds);
        worst = worst.max(upd.balance_gap().abs() / n as f64);
    }
    Ok((worst, "20 fits".into()))
}
