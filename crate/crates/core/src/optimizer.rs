//! Projected gradient ascent over `{beta >= 0, |beta|_1 <= b}` with optional
//! `l1` penalty and pinned coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::objective::{MiniBatchObjective, Objective, SampleObjective, WeightedDataset};

/// Slack on the budget when deciding whether a clipped point is feasible.
/// Keeps `project` idempotent in floating point.
const BUDGET_SLACK: f64 = 5e-14;

/// Feasible set `{beta >= 0, |beta|_1 <= budget, beta_k = tau_k for pinned k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub budget: f64,
    #[serde(default)]
    pub pinned: BTreeMap<usize, f64>,
}

impl ConstraintSet {
    pub fn new(budget: f64) -> Self {
        ConstraintSet {
            budget,
            pinned: BTreeMap::new(),
        }
    }

    pub fn with_pins(budget: f64, pinned: BTreeMap<usize, f64>) -> Self {
        ConstraintSet { budget, pinned }
    }

    pub fn pinned_sum(&self) -> f64 {
        self.pinned.values().sum()
    }

    /// Budget left for the free coordinates.
    pub fn residual_budget(&self) -> f64 {
        self.budget - self.pinned_sum()
    }

    pub fn is_free(&self, j: usize) -> bool {
        !self.pinned.contains_key(&j)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        for (&k, &tau) in &self.pinned {
            if k >= dim {
                return Err(Error::InvalidConfig(format!(
                    "pinned coordinate {k} out of range for dimension {dim}"
                )));
            }
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "pinned value for coordinate {k} must be >= 0, got {tau}"
                )));
            }
        }
        let pinned_sum = self.pinned_sum();
        if pinned_sum > self.budget {
            return Err(Error::InfeasibleConstraint {
                pinned_sum,
                budget: self.budget,
            });
        }
        Ok(())
    }

    pub fn is_feasible(&self, beta: &[f64], tol: f64) -> bool {
        beta.iter().all(|b| *b >= 0.0)
            && beta.iter().sum::<f64>() <= self.budget + tol
            && self.pinned.iter().all(|(&k, &t)| beta.get(k) == Some(&t))
    }

    /// The default start: pins at their values, free coordinates equal and
    /// summing to the residual budget.
    pub fn uniform_start(&self, dim: usize) -> Vec<f64> {
        let free = dim - self.pinned.len();
        let level = if free == 0 {
            0.0
        } else {
            self.residual_budget() / free as f64
        };
        let mut beta = vec![level; dim];
        for (&k, &t) in &self.pinned {
            beta[k] = t;
        }
        beta
    }
}

/// Euclidean projection onto the constraint set.
///
/// Free coordinates are clipped at zero; if the clipped mass exceeds the
/// residual budget they are instead projected onto the scaled simplex by
/// sort-and-threshold.
pub fn project(v: &[f64], cs: &ConstraintSet) -> Result<Vec<f64>> {
    cs.validate(v.len())?;
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!(
            "cannot project non-finite value {x}"
        )));
    }
    let mut out: Vec<f64> = v.to_vec();
    for (&k, &t) in &cs.pinned {
        out[k] = t;
    }
    let free: Vec<usize> = (0..v.len()).filter(|j| cs.is_free(*j)).collect();
    let radius = cs.residual_budget().max(0.0);
    let clipped_sum: f64 = free.iter().map(|&j| v[j].max(0.0)).sum();
    if clipped_sum <= radius + BUDGET_SLACK * (1.0 + radius) {
        for &j in &free {
            out[j] = v[j].max(0.0);
        }
        return Ok(out);
    }
    let theta = simplex_threshold(free.iter().map(|&j| v[j]), radius);
    for &j in &free {
        out[j] = (v[j] - theta).max(0.0);
    }
    Ok(out)
}

/// Threshold `theta` such that `sum_j max(v_j - theta, 0) = radius`.
fn simplex_threshold(values: impl Iterator<Item = f64>, radius: f64) -> f64 {
    let mut u: Vec<f64> = values.collect();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (idx, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - radius) / (idx + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta
}

/// Settings for one projected-gradient run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentConfig {
    /// Stepsize is `step_coeff / p`.
    pub step_coeff: f64,
    pub l1_penalty: f64,
    pub max_iters: usize,
    /// Absolute tolerance; `None` means `1e-8 * budget`.
    pub stationarity_tol: Option<f64>,
    /// Absolute tolerance; `None` means `1e-6 * budget`.
    pub support_tol: Option<f64>,
    /// Adaptive backtracking: halve the step on a decrease, grow it on success.
    pub backtracking: bool,
    /// Largest step multiple reachable by backtracking growth.
    pub max_step_growth: f64,
    /// Evaluate on a fresh sample of this many unordered pairs per iteration.
    pub minibatch_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            step_coeff: 1.0,
            l1_penalty: 0.0,
            max_iters: 200,
            stationarity_tol: None,
            support_tol: None,
            backtracking: false,
            max_step_growth: 1e4,
            minibatch_pairs: None,
            seed: 0,
        }
    }
}

impl AscentConfig {
    pub fn step_size(&self, dim: usize) -> f64 {
        self.step_coeff / dim.max(1) as f64
    }

    pub fn stationarity_tol(&self, budget: f64) -> f64 {
        self.stationarity_tol.unwrap_or(1e-8 * budget)
    }

    pub fn support_tol(&self, budget: f64) -> f64 {
        self.support_tol.unwrap_or(1e-6 * budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_coeff.is_finite() && self.step_coeff > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_coeff must be positive, got {}",
                self.step_coeff
            )));
        }
        if !(self.l1_penalty.is_finite() && self.l1_penalty >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l1_penalty must be >= 0, got {}",
                self.l1_penalty
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.max_step_growth < 1.0 {
            return Err(Error::InvalidConfig("max_step_growth must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub beta: Vec<f64>,
    /// Penalized objective `F(beta) - lambda |beta|_1` at each visited iterate.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Free coordinates above the support tolerance, ascending.
    pub support: Vec<usize>,
}

impl AscentResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

fn penalized(value: f64, beta: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        value
    } else {
        value - lambda * beta.iter().sum::<f64>()
    }
}

fn gradient_step(
    beta: &[f64],
    grad: &[f64],
    alpha: f64,
    lambda: f64,
    cs: &ConstraintSet,
) -> Result<Vec<f64>> {
    let moved: Vec<f64> = beta
        .iter()
        .zip(grad)
        .map(|(b, g)| b + alpha * (g - lambda))
        .collect();
    project(&moved, cs)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn support_of(beta: &[f64], cs: &ConstraintSet, tol: f64) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(j, b)| cs.is_free(*j) && **b > tol)
        .map(|(j, _)| j)
        .collect()
}

/// Projected gradient ascent on a sample dataset.
pub fn ascend(
    ds: &WeightedDataset,
    spec: &KernelSpec,
    cs: &ConstraintSet,
    cfg: &AscentConfig,
    beta0: &[f64],
) -> Result<AscentResult> {
    match cfg.minibatch_pairs {
        Some(m) => {
            let obj = MiniBatchObjective::new(ds, *spec, m, cfg.seed);
            ascend_objective(&obj, cs, cfg, beta0)
        }
        None => ascend_objective(&SampleObjective::new(ds, *spec), cs, cfg, beta0),
    }
}

/// Projected gradient ascent on any objective.
///
/// Stops when `|project(beta + alpha g) - beta|_inf <= stationarity_tol` or
/// after `max_iters` steps; the last iterate is returned either way. The
/// check uses the configured stepsize, or the larger adaptive step when
/// backtracking has grown it.
pub fn ascend_objective<O: Objective + ?Sized>(
    obj: &O,
    cs: &ConstraintSet,
    cfg: &AscentConfig,
    beta0: &[f64],
) -> Result<AscentResult> {
    cfg.validate()?;
    let p = obj.dim();
    if beta0.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            got: beta0.len(),
        });
    }
    cs.validate(p)?;
    if !cs.is_feasible(beta0, 1e-9 * (1.0 + cs.budget)) {
        return Err(Error::Domain("initial beta is not feasible".into()));
    }
    let alpha0 = cfg.step_size(p);
    let lambda = cfg.l1_penalty;
    let stat_tol = cfg.stationarity_tol(cs.budget);
    let max_alpha = alpha0 * cfg.max_step_growth;

    let mut beta = beta0.to_vec();
    let (mut value, mut grad) = obj.value_and_gradient(&beta)?;
    let mut current = penalized(value, &beta, lambda);
    let mut trace = vec![current];
    let mut alpha = alpha0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let probe = alpha.max(alpha0);
        let base = gradient_step(&beta, &grad, probe, lambda, cs)?;
        if max_abs_diff(&base, &beta) <= stat_tol {
            converged = true;
            break;
        }
        if !cfg.backtracking {
            beta = base;
            (value, grad) = obj.value_and_gradient(&beta)?;
            current = penalized(value, &beta, lambda);
            trace.push(current);
            continue;
        }
        let mut accepted = false;
        for attempt in 0..40 {
            let cand = if alpha == probe {
                base.clone()
            } else {
                gradient_step(&beta, &grad, alpha, lambda, cs)?
            };
            // the first try usually succeeds, so it pays for the gradient up
            // front; retries score the value alone
            let (v, g) = if attempt == 0 {
                let (v, g) = obj.value_and_gradient(&cand)?;
                (v, Some(g))
            } else {
                (obj.value(&cand)?, None)
            };
            if penalized(v, &cand, lambda) >= current {
                let (v, g) = match g {
                    Some(g) => (v, g),
                    None => obj.value_and_gradient(&cand)?,
                };
                beta = cand;
                value = v;
                grad = g;
                current = penalized(v, &beta, lambda);
                trace.push(current);
                alpha = (alpha * 2.0).min(max_alpha);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no ascent direction at any tried step: numerically stationary
            break;
        }
    }
    let _ = value;
    let support = support_of(&beta, cs, cfg.support_tol(cs.budget));
    Ok(AscentResult {
        beta,
        objective_trace: trace,
        converged,
        iterations,
        support,
    })
}

/// True iff `|project(beta + alpha grad) - beta|_inf <= stationarity_tol`.
pub fn is_stationary_objective<O: Objective + ?Sized>(
    obj: &O,
    cs: &ConstraintSet,
    cfg: &AscentConfig,
    beta: &[f64],
) -> Result<bool> {
    cs.validate(beta.len())?;
    let (_, grad) = obj.value_and_gradient(beta)?;
    let step = gradient_step(beta, &grad, cfg.step_size(beta.len()), cfg.l1_penalty, cs)?;
    Ok(max_abs_diff(&step, beta) <= cfg.stationarity_tol(cs.budget))
}

pub fn is_stationary(
    ds: &WeightedDataset,
    spec: &KernelSpec,
    cs: &ConstraintSet,
    cfg: &AscentConfig,
    beta: &[f64],
) -> Result<bool> {
    is_stationary_objective(&SampleObjective::new(ds, *spec), cs, cfg, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unpinned(b: f64) -> ConstraintSet {
        ConstraintSet::new(b)
    }

    /// Enumerates every candidate active set and keeps the closest feasible point.
    pub(crate) fn brute_force_projection(v: &[f64], cs: &ConstraintSet) -> Vec<f64> {
        let free: Vec<usize> = (0..v.len()).filter(|j| cs.is_free(*j)).collect();
        let r = cs.residual_budget();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << free.len()) {
            let active: Vec<usize> = free
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, j)| *j)
                .collect();
            let sum_active: f64 = active.iter().map(|&j| v[j]).sum();
            let mut shifts = vec![0.0];
            if !active.is_empty() {
                shifts.push((sum_active - r) / active.len() as f64);
            }
            for theta in shifts {
                let mut x = vec![0.0; v.len()];
                for (&k, &t) in &cs.pinned {
                    x[k] = t;
                }
                for &j in &active {
                    x[j] = v[j] - theta;
                }
                let free_sum: f64 = free.iter().map(|&j| x[j]).sum();
                if x.iter().any(|xi| *xi < 0.0) || free_sum > r + 1e-12 {
                    continue;
                }
                let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, x));
                }
            }
        }
        best.expect("zero vector is always a candidate").1
    }

    #[test]
    fn clip_within_budget() {
        let out = project(&[0.5, -0.3], &unpinned(1.0)).unwrap();
        assert_eq!(out, vec![0.5, 0.0]);
    }

    #[test]
    fn simplex_case() {
        let out = project(&[2.0, 2.0], &unpinned(1.0)).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        assert_eq!(
            brute_force_projection(&[2.0, 2.0], &unpinned(1.0)),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn feasible_point_unchanged() {
        let v = vec![0.1, 0.0, 0.3, 0.2];
        assert_eq!(project(&v, &unpinned(1.0)).unwrap(), v);
    }

    #[test]
    fn pins_held_and_infeasible_pins_rejected() {
        let mut pins = BTreeMap::new();
        pins.insert(1, 0.4);
        let cs = ConstraintSet::with_pins(1.0, pins.clone());
        let out = project(&[3.0, -2.0, 3.0], &cs).unwrap();
        assert_eq!(out[1], 0.4);
        assert!((out[0] - 0.3).abs() < 1e-15 && (out[2] - 0.3).abs() < 1e-15);

        pins.insert(0, 0.7);
        let bad = ConstraintSet::with_pins(1.0, pins);
        assert!(matches!(
            project(&[0.0, 0.0, 0.0], &bad),
            Err(Error::InfeasibleConstraint { .. })
        ));
    }

    #[test]
    fn matches_brute_force_qp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.random_range(1..=6);
            let v: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..3.0)).collect();
            let mut cs = unpinned(rng.random_range(0.1..4.0));
            if p > 1 && rng.random_bool(0.3) {
                cs.pinned.insert(0, rng.random_range(0.0..cs.budget * 0.5));
            }
            let fast = project(&v, &cs).unwrap();
            let slow = brute_force_projection(&v, &cs);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9, "{fast:?} vs {slow:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent(
            v in proptest::collection::vec(-5.0f64..5.0, 1..40),
            b in 0.01f64..20.0,
        ) {
            let cs = unpinned(b);
            let once = project(&v, &cs).unwrap();
            let twice = project(&once, &cs).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|x| *x >= 0.0));
            prop_assert!(once.iter().sum::<f64>() <= b + 1e-12);
        }

        #[test]
        fn projection_nonexpansive(
            u in proptest::collection::vec(-5.0f64..5.0, 8),
            w in proptest::collection::vec(-5.0f64..5.0, 8),
            b in 0.01f64..10.0,
        ) {
            let cs = unpinned(b);
            let pu = project(&u, &cs).unwrap();
            let pw = project(&w, &cs).unwrap();
            let dp: f64 = pu.iter().zip(&pw).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            let d: f64 = u.iter().zip(&w).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dp <= d + 1e-10);
        }
    }

    /// Concave quadratic `-(1/2)|beta - c|^2` as a test objective.
    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
            let v = -0.5
                * beta
                    .iter()
                    .zip(&self.0)
                    .map(|(b, c)| (b - c).powi(2))
                    .sum::<f64>();
            Ok((v, self.0.iter().zip(beta).map(|(c, b)| c - b).collect()))
        }
    }

    #[test]
    fn quadratic_reaches_projection_of_centre() {
        let obj = Quadratic(vec![3.0, -1.0, 1.0]);
        let cs = unpinned(2.0);
        let cfg = AscentConfig {
            step_coeff: 1.5,
            max_iters: 500,
            ..Default::default()
        };
        let res = ascend_objective(&obj, &cs, &cfg, &cs.uniform_start(3)).unwrap();
        assert!(res.converged);
        let target = project(&[3.0, -1.0, 1.0], &cs).unwrap();
        for (a, b) in res.beta.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(res.support, vec![0]);
        assert!(is_stationary_objective(&obj, &cs, &cfg, &res.beta).unwrap());
        assert!(res.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn backtracking_survives_oversized_step() {
        let obj = Quadratic(vec![0.5, 0.2]);
        let cs = unpinned(5.0);
        let cfg = AscentConfig {
            step_coeff: 50.0,
            backtracking: true,
            max_iters: 200,
            ..Default::default()
        };
        let res = ascend_objective(&obj, &cs, &cfg, &[0.0, 0.0]).unwrap();
        assert!(res.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!((res.beta[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start_rejected() {
        let obj = Quadratic(vec![0.0, 0.0]);
        let cfg = AscentConfig::default();
        assert!(ascend_objective(&obj, &unpinned(1.0), &cfg, &[1.0, 1.0]).is_err());
        assert!(ascend_objective(&obj, &unpinned(1.0), &cfg, &[-0.1, 0.0]).is_err());
    }

    #[test]
    fn pinned_coordinates_never_move() {
        let obj = Quadratic(vec![2.0, 2.0, -1.0]);
        let mut pins = BTreeMap::new();
        pins.insert(2, 0.25);
        let cs = ConstraintSet::with_pins(2.0, pins);
        let cfg = AscentConfig::default();
        let res = ascend_objective(&obj, &cs, &cfg, &cs.uniform_start(3)).unwrap();
        assert_eq!(res.beta[2].to_bits(), 0.25f64.to_bits());
        assert!(!res.support.contains(&2));
    }

    #[test]
    fn uniform_start_is_feasible() {
        let mut pins = BTreeMap::new();
        pins.insert(0, 1.0);
        let cs = ConstraintSet::with_pins(10.0, pins);
        let b0 = cs.uniform_start(4);
        assert_eq!(b0, vec![1.0, 3.0, 3.0, 3.0]);
        assert!(cs.is_feasible(&b0, 1e-12));
    }
}
