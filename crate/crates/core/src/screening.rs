//! Iterative screening: ascent, support union and rebalancing in rounds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Exponent, KernelSpec};
use crate::objective::{evaluate, gradient, PairKernelTable, WeightedDataset};
use crate::optimizer::{ascend, ascend_objective, AscentConfig, AscentResult, ConstraintSet};
use crate::rebalance::{rebalance, BoostConfig, WeightUpdate};
use crate::simgen::{derive_seed, DiscreteDist, PopulationObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMode {
    LowDim,
    HighDim,
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaMode {
    /// `gamma = c_gamma * sqrt(log p / n) * (1 + t)`.
    TheoryForm {
        c_gamma: f64,
        t: f64,
    },
    /// Quantile of the squared statistic over class-count preserving label permutations.
    Permutation {
        n_perm: usize,
        quantile: f64,
    },
    Fixed {
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub mode: ScreenMode,
    pub gamma: GammaMode,
    /// `lambda = lambda_coeff * sqrt(log p / n) * (1 + t)` in the penalized modes.
    pub lambda_coeff: f64,
    pub t: f64,
    pub budget: f64,
    pub ascent: AscentConfig,
    /// Pin value for the hierarchical mode; `None` means `budget / (2 max_rounds)`.
    pub tau: Option<f64>,
    pub max_rounds: usize,
    pub max_selected: Option<usize>,
    pub kernel: KernelSpec,
    pub boost: BoostConfig,
    /// Minimum total weight per class after rebalancing.
    pub min_class_weight: f64,
    /// Relative increase of both thresholds once weights are estimated.
    pub threshold_inflation: f64,
    /// Use the effective sample size `n * m / m_0` in the theory-form
    /// thresholds, where `m` is the smaller class weight mass and `m_0` its
    /// value under the starting weights.
    pub effective_size_scaling: bool,
    pub seed: u64,
}

/// Ascent settings used by screening: adaptive steps, since the sample
/// gradient at `(b/p) 1` can be orders of magnitude below one.
pub fn screening_ascent() -> AscentConfig {
    AscentConfig {
        backtracking: true,
        max_step_growth: 1e9,
        ..AscentConfig::default()
    }
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            mode: ScreenMode::LowDim,
            gamma: GammaMode::Permutation {
                n_perm: 200,
                quantile: 0.95,
            },
            lambda_coeff: 1.0,
            t: 0.0,
            budget: 10.0,
            ascent: screening_ascent(),
            tau: None,
            max_rounds: 10,
            max_selected: None,
            kernel: KernelSpec::laplace(),
            boost: BoostConfig::default(),
            min_class_weight: 2.0,
            threshold_inflation: 0.0,
            effective_size_scaling: true,
            seed: 0,
        }
    }
}

impl ScreenConfig {
    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or(self.budget / (2.0 * self.max_rounds.max(1) as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad(format!("budget must be positive, got {}", self.budget));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive".into());
        }
        if self.max_selected == Some(0) {
            return bad("max_selected must be positive".into());
        }
        if !(self.lambda_coeff >= 0.0 && self.t >= 0.0 && self.threshold_inflation >= 0.0) {
            return bad("lambda_coeff, t and threshold_inflation must be >= 0".into());
        }
        if !(self.min_class_weight >= 0.0) {
            return bad("min_class_weight must be >= 0".into());
        }
        match self.gamma {
            GammaMode::TheoryForm { c_gamma, t } if !(c_gamma >= 0.0 && t >= 0.0) => {
                return bad("c_gamma and t must be >= 0".into())
            }
            GammaMode::Permutation { n_perm, quantile } => {
                if n_perm < 20 {
                    return bad(format!("n_perm must be >= 20, got {n_perm}"));
                }
                if !(quantile > 0.0 && quantile <= 1.0) {
                    return bad(format!("quantile must lie in (0, 1], got {quantile}"));
                }
            }
            GammaMode::Fixed { gamma } if !(gamma >= 0.0) => {
                return bad("gamma must be >= 0".into())
            }
            _ => {}
        }
        if self.mode == ScreenMode::Hier {
            let tau = self.tau();
            if !(tau >= 0.0) {
                return bad(format!("tau must be >= 0, got {tau}"));
            }
            if tau > self.budget / self.max_rounds as f64 * (1.0 + 1e-12) {
                return bad(format!(
                    "tau = {tau} exceeds budget / max_rounds = {}",
                    self.budget / self.max_rounds as f64
                ));
            }
        }
        self.ascent.validate()?;
        self.boost.validate()?;
        self.kernel.validate()
    }
}

fn rate(p: usize, n: f64) -> f64 {
    ((p.max(2) as f64).ln() / n).sqrt()
}

/// `coeff * sqrt(log p / n) * (1 + t)`.
pub fn theory_threshold(coeff: f64, t: f64, p: usize, n: f64) -> f64 {
    coeff * rate(p, n) * (1.0 + t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ThresholdFailed,
    MaxRounds,
    Cap,
    DegenerateWeights,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub class0: f64,
    pub class1: f64,
    pub between_mass: f64,
    pub within_mass: f64,
    pub near_degenerate: bool,
}

impl WeightSummary {
    pub fn min_class(&self) -> f64 {
        self.class0.min(self.class1)
    }

    fn of(update: &WeightUpdate, near_degenerate: bool) -> Self {
        WeightSummary {
            class0: update.effective_size_class0,
            class1: update.effective_size_class1,
            between_mass: update.between_mass,
            within_mass: update.within_mass,
            near_degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    #[serde(rename = "F_at_beta0")]
    pub f_at_beta0: f64,
    /// `gamma` in the low-dimensional mode, `lambda` otherwise.
    pub threshold_used: f64,
    pub ascent: Option<AscentResult>,
    /// Variables added in this round.
    pub added: Vec<usize>,
    /// Weights in effect when the round started.
    pub weight_summary: WeightSummary,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    /// Final selected set, ascending.
    pub selected: Vec<usize>,
    /// Selected set after each completed round.
    pub trajectory: Vec<Vec<usize>>,
    pub rounds: Vec<RoundDiagnostics>,
    pub termination: Termination,
}

impl ScreenResult {
    /// Support found by the ascent in a given round, if any.
    pub fn round_support(&self, round: usize) -> Option<&[usize]> {
        self.rounds
            .get(round)
            .and_then(|r| r.ascent.as_ref())
            .map(|a| a.support.as_slice())
    }
}

/// Permutations evaluated per pass over the pair kernel table.
const PERM_BATCH: usize = 8;

/// Empirical `quantile` of `F(beta0; Q_n^pi)^2` over `n_perm` permutations
/// that move each (label, weight) pair to a new row.
pub fn calibrate_gamma_permutation(
    ds: &WeightedDataset,
    beta0: &[f64],
    spec: &KernelSpec,
    n_perm: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    if n_perm < 20 {
        return Err(Error::InvalidConfig(format!(
            "n_perm must be >= 20, got {n_perm}"
        )));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile must lie in (0, 1], got {quantile}"
        )));
    }
    ds.pair_mass().check()?;
    let table = PairKernelTable::build(ds, beta0, spec)?;
    let permuted = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let mut order: Vec<usize> = (0..ds.n()).collect();
        order.shuffle(&mut rng);
        let labels: Vec<u8> = order.iter().map(|&i| ds.labels()[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| ds.weights()[i]).collect();
        (labels, weights)
    };
    // batches share each pass over the table
    let ids: Vec<usize> = (0..n_perm).collect();
    let batches: Vec<Vec<f64>> = ids
        .par_chunks(PERM_BATCH)
        .map(|chunk| {
            let draws: Vec<(Vec<u8>, Vec<f64>)> = chunk.iter().map(|&k| permuted(k)).collect();
            let refs: Vec<(&[u8], &[f64])> = draws
                .iter()
                .map(|(l, w)| (l.as_slice(), w.as_slice()))
                .collect();
            table.objectives(&refs)
        })
        .collect::<Result<_>>()?;
    let mut stats: Vec<f64> = batches.into_iter().flatten().map(|v| v * v).collect();
    stats.sort_by(f64::total_cmp);
    let rank = ((quantile * n_perm as f64).ceil() as usize).clamp(1, n_perm) - 1;
    Ok(stats[rank])
}

/// Smallest `lambda_coeff` whose penalty exceeds the largest marginal signal
/// `dF/dbeta_j (0)` in a `quantile` fraction of label permutations.
///
/// Intended for a calibration sample held out from the screening data.
pub fn calibrate_lambda_coeff(
    ds: &WeightedDataset,
    cfg: &ScreenConfig,
    n_perm: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    if n_perm == 0 || !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidConfig(
            "n_perm must be positive and quantile in (0, 1]".into(),
        ));
    }
    let start = crate::objective::initial_weights(ds.labels())?;
    let ds = ds.with_weights(start)?;
    let zero = vec![0.0; ds.p()];
    let mut peaks: Vec<f64> = (0..n_perm)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let mut order: Vec<usize> = (0..ds.n()).collect();
            order.shuffle(&mut rng);
            let labels: Vec<u8> = order.iter().map(|&i| ds.labels()[i]).collect();
            let weights: Vec<f64> = order.iter().map(|&i| ds.weights()[i]).collect();
            let permuted = ds.with_labels(labels)?.with_weights(weights)?;
            let g = gradient(&permuted, &zero, &cfg.kernel)?;
            Ok(g.into_iter().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_>>()?;
    peaks.sort_by(f64::total_cmp);
    let rank = ((quantile * n_perm as f64).ceil() as usize).clamp(1, n_perm) - 1;
    let unit = theory_threshold(1.0, cfg.t, ds.p(), ds.n() as f64);
    Ok(peaks[rank].max(0.0) / unit)
}

/// `f'(0) * E_{B-W}[|x_j - x'_j|]` under the current weights.
pub fn signal_strength_main(ds: &WeightedDataset, j: usize, spec: &KernelSpec) -> Result<f64> {
    let sub = ds.select_columns(&[j])?;
    Ok(gradient(&sub, &[0.0], &spec.with_q(Exponent::One))?[0])
}

/// `(1/tau) E_{B-W}[f(tau |x_A - x'_A|_1)]` under the current weights.
pub fn signal_strength_hier(
    ds: &WeightedDataset,
    set: &[usize],
    tau: f64,
    spec: &KernelSpec,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("signal set must be nonempty".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let sub = ds.select_columns(set)?;
    let beta = vec![tau; set.len()];
    Ok(evaluate(&sub, &beta, &spec.with_q(Exponent::One))? / tau)
}

/// Adds at most `room` of the new support, preferring larger coefficients.
fn admit(beta: &[f64], candidates: &[usize], room: usize) -> Vec<usize> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| beta[*b].total_cmp(&beta[*a]).then(a.cmp(b)));
    ranked.truncate(room);
    ranked.sort_unstable();
    ranked
}

fn initial_summary(ds: &WeightedDataset) -> WeightSummary {
    let (mut c0, mut c1) = (0.0, 0.0);
    for (w, &y) in ds.weights().iter().zip(ds.labels()) {
        if y == 1 {
            c1 += w;
        } else {
            c0 += w;
        }
    }
    let mass = ds.pair_mass();
    WeightSummary {
        class0: c0,
        class1: c1,
        between_mass: mass.between_mass,
        within_mass: mass.within_mass,
        near_degenerate: false,
    }
}

/// Runs the configured screening mode. `ds` supplies features and labels;
/// its weights are replaced by the balanced starting weights.
pub fn screen(ds: &WeightedDataset, cfg: &ScreenConfig) -> Result<ScreenResult> {
    cfg.validate()?;
    let n = ds.n();
    let p = ds.p();
    let start = crate::objective::initial_weights(ds.labels())?;
    let mut current = ds.with_weights(start)?;
    let mut summary = initial_summary(&current);
    let initial_mass = summary.clone();
    let cap = cfg.max_selected.unwrap_or(p).min(p);
    let tau = cfg.tau();
    let mut selected: Vec<usize> = Vec::new();
    let mut trajectory = Vec::new();
    let mut rounds: Vec<RoundDiagnostics> = Vec::new();

    let termination = loop {
        if selected.len() >= cap {
            break Termination::Cap;
        }
        if rounds.len() >= cfg.max_rounds {
            break Termination::MaxRounds;
        }
        let round = rounds.len();
        let pin_value = if cfg.mode == ScreenMode::Hier {
            tau
        } else {
            0.0
        };
        let pins: BTreeMap<usize, f64> = selected.iter().map(|&j| (j, pin_value)).collect();
        let cs = ConstraintSet::with_pins(cfg.budget, pins);
        cs.validate(p)?;
        let beta0 = cs.uniform_start(p);
        let f0 = evaluate(&current, &beta0, &cfg.kernel)?;
        let n_eff = if cfg.effective_size_scaling {
            let m0 = initial_mass.min_class();
            let m = summary.min_class();
            ((n as f64) * m / m0).max(1.0)
        } else {
            n as f64
        };
        let inflation = if selected.is_empty() {
            1.0
        } else {
            1.0 + cfg.threshold_inflation
        };
        let mut diag = RoundDiagnostics {
            round,
            f_at_beta0: f0,
            threshold_used: 0.0,
            ascent: None,
            added: Vec::new(),
            weight_summary: summary.clone(),
            termination: None,
        };
        let mut ascent_cfg = cfg.ascent.clone();
        ascent_cfg.seed = derive_seed(cfg.seed, 2 * round as u64 + 1);
        if cfg.mode == ScreenMode::LowDim {
            let gamma = inflation
                * match cfg.gamma {
                    GammaMode::TheoryForm { c_gamma, t } => theory_threshold(c_gamma, t, p, n_eff),
                    GammaMode::Fixed { gamma } => gamma,
                    GammaMode::Permutation { n_perm, quantile } => calibrate_gamma_permutation(
                        &current,
                        &beta0,
                        &cfg.kernel,
                        n_perm,
                        quantile,
                        derive_seed(cfg.seed, 2 * round as u64),
                    )?,
                };
            diag.threshold_used = gamma;
            if !(f0 * f0 > gamma) {
                diag.termination = Some(Termination::ThresholdFailed);
                rounds.push(diag);
                break Termination::ThresholdFailed;
            }
            ascent_cfg.l1_penalty = 0.0;
        } else {
            let lambda = inflation * theory_threshold(cfg.lambda_coeff, cfg.t, p, n_eff);
            diag.threshold_used = lambda;
            ascent_cfg.l1_penalty = lambda;
        }
        let result = ascend(&current, &cfg.kernel, &cs, &ascent_cfg, &beta0)?;
        let fresh: Vec<usize> = result
            .support
            .iter()
            .copied()
            .filter(|j| !selected.contains(j))
            .collect();
        let added = admit(&result.beta, &fresh, cap - selected.len());
        diag.ascent = Some(result);
        if added.is_empty() {
            diag.termination = Some(Termination::Converged);
            rounds.push(diag);
            break Termination::Converged;
        }
        diag.added = added.clone();
        selected.extend(added);
        selected.sort_unstable();
        trajectory.push(selected.clone());

        let refit = rebalance(ds, &selected, &cfg.boost).and_then(|(reweighted, update, model)| {
            update.check(cfg.min_class_weight)?;
            Ok((reweighted, update, model))
        });
        match refit {
            Ok((reweighted, update, model)) => {
                summary = WeightSummary::of(&update, model.near_degenerate);
                current = reweighted;
                rounds.push(diag);
            }
            Err(e) if e.is_degenerate() => {
                diag.termination = Some(Termination::DegenerateWeights);
                rounds.push(diag);
                break Termination::DegenerateWeights;
            }
            Err(e) => return Err(e),
        }
    };
    if let Some(last) = rounds.last_mut() {
        last.termination.get_or_insert(termination);
    }
    Ok(ScreenResult {
        selected,
        trajectory,
        rounds,
        termination,
    })
}

pub fn screen_low_dim(ds: &WeightedDataset, cfg: &ScreenConfig) -> Result<ScreenResult> {
    screen(
        ds,
        &ScreenConfig {
            mode: ScreenMode::LowDim,
            ..cfg.clone()
        },
    )
}

pub fn screen_high_dim(ds: &WeightedDataset, cfg: &ScreenConfig) -> Result<ScreenResult> {
    screen(
        ds,
        &ScreenConfig {
            mode: ScreenMode::HighDim,
            ..cfg.clone()
        },
    )
}

pub fn screen_hier(ds: &WeightedDataset, cfg: &ScreenConfig) -> Result<ScreenResult> {
    screen(
        ds,
        &ScreenConfig {
            mode: ScreenMode::Hier,
            ..cfg.clone()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationScreen {
    pub selected: Vec<usize>,
    pub supports: Vec<Vec<usize>>,
    pub objective_at_start: Vec<f64>,
    /// Rebalanced law lost a class, so no residual signal can be measured.
    pub degenerate: bool,
}

/// Screening on an exact finite-support law: rounds continue while
/// `|F((b/p) 1; Q)| > zero_tol`, with exact rebalancing weights.
pub fn screen_population(
    dist: &DiscreteDist,
    spec: &KernelSpec,
    budget: f64,
    ascent: &AscentConfig,
    zero_tol: f64,
) -> Result<PopulationScreen> {
    dist.validate()?;
    let p = dist.dim();
    let mut selected: Vec<usize> = Vec::new();
    let mut supports = Vec::new();
    let mut starts = Vec::new();
    let cs = ConstraintSet::new(budget);
    let beta0 = cs.uniform_start(p);
    let mut degenerate = false;
    while selected.len() < p {
        let weights = dist.rebalance_weights(&selected);
        let obj = PopulationObjective::new(dist, *spec, weights);
        let f0 = match crate::objective::Objective::value(&obj, &beta0) {
            Ok(v) => v,
            Err(e) if e.is_degenerate() => {
                degenerate = true;
                break;
            }
            Err(e) => return Err(e),
        };
        starts.push(f0);
        if f0.abs() <= zero_tol {
            break;
        }
        let res = ascend_objective(&obj, &cs, ascent, &beta0)?;
        let fresh: Vec<usize> = res
            .support
            .iter()
            .copied()
            .filter(|j| !selected.contains(j))
            .collect();
        supports.push(res.support);
        if fresh.is_empty() {
            break;
        }
        selected.extend(fresh);
        selected.sort_unstable();
    }
    Ok(PopulationScreen {
        selected,
        supports,
        objective_at_start: starts,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, ModelSpec};

    fn xor_data(p: usize, n: usize, seed: u64) -> WeightedDataset {
        let mut raw = generate(&ModelSpec::xor(p), n, seed).unwrap();
        raw.rescale_max_abs();
        raw.to_balanced().unwrap()
    }

    fn binary(deltas: &[f64], p: usize, n: usize, seed: u64) -> WeightedDataset {
        let raw = generate(
            &ModelSpec::BinaryMainEffects {
                deltas: deltas.to_vec(),
                p,
            },
            n,
            seed,
        )
        .unwrap();
        raw.to_balanced().unwrap()
    }

    #[test]
    fn infinite_gamma_stops_before_any_ascent() {
        let ds = xor_data(5, 80, 1);
        let cfg = ScreenConfig {
            gamma: GammaMode::Fixed {
                gamma: f64::INFINITY,
            },
            ..ScreenConfig::default()
        };
        let r = screen_low_dim(&ds, &cfg).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.termination, Termination::ThresholdFailed);
        assert_eq!(r.rounds.len(), 1);
        assert!(r.rounds[0].ascent.is_none());
    }

    #[test]
    fn permutation_quantile_one_is_the_maximum() {
        let ds = xor_data(4, 60, 2);
        let beta0 = vec![2.5; 4];
        let spec = KernelSpec::laplace();
        let g = calibrate_gamma_permutation(&ds, &beta0, &spec, 20, 1.0, 9).unwrap();
        let table = PairKernelTable::build(&ds, &beta0, &spec).unwrap();
        let mut best = 0.0f64;
        for k in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, k));
            let mut order: Vec<usize> = (0..ds.n()).collect();
            order.shuffle(&mut rng);
            let l: Vec<u8> = order.iter().map(|&i| ds.labels()[i]).collect();
            let w: Vec<f64> = order.iter().map(|&i| ds.weights()[i]).collect();
            best = best.max(table.objective(&l, &w).unwrap().powi(2));
        }
        assert_eq!(g, best);
        assert!(calibrate_gamma_permutation(&ds, &beta0, &spec, 19, 0.9, 9).is_err());
    }

    #[test]
    fn main_signal_matches_direct_pair_average() {
        let ds = binary(&[0.4, 0.0], 3, 120, 4);
        let x = ds.column(0);
        let (w, y) = (ds.weights(), ds.labels());
        let (mut bs, mut bm, mut ws, mut wm) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..ds.n() {
            for k in 0..ds.n() {
                if i == k {
                    continue;
                }
                let c = w[i] * w[k];
                let d = (x[i] - x[k]).abs();
                if y[i] == y[k] {
                    ws += c * d;
                    wm += c;
                } else {
                    bs += c * d;
                    bm += c;
                }
            }
        }
        let direct = bs / bm - ws / wm;
        let s = signal_strength_main(&ds, 0, &KernelSpec::laplace()).unwrap();
        assert!((s - direct).abs() < 1e-12);
    }

    #[test]
    fn hier_signal_small_tau_limit() {
        let ds = binary(&[0.4, 0.3], 3, 150, 5);
        let spec = KernelSpec::laplace();
        let limit = signal_strength_main(&ds, 0, &spec).unwrap()
            + signal_strength_main(&ds, 1, &spec).unwrap();
        let near = signal_strength_hier(&ds, &[0, 1], 1e-4, &spec).unwrap();
        assert!((near - limit).abs() / limit.abs() < 1e-3);
        let single = signal_strength_hier(&ds, &[1], 0.5, &spec).unwrap();
        let sub = ds.select_columns(&[1]).unwrap();
        let direct = evaluate(&sub, &[0.5], &spec).unwrap() / 0.5;
        assert!((single - direct).abs() < 1e-15);
        assert!(signal_strength_hier(&ds, &[], 1.0, &spec).is_err());
    }

    #[test]
    fn hier_signal_on_xor_population_sample() {
        // the exact 4-point XOR law written out as a balanced sample
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..50 {
            for (a, b) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)] {
                feats.extend([a, b]);
                labels.push(u8::from(a * b > 0.0));
            }
        }
        let ds = WeightedDataset::balanced(feats, 200, 2, labels).unwrap();
        let s = signal_strength_hier(&ds, &[0, 1], 1.0, &KernelSpec::laplace()).unwrap();
        let exact = 0.5 * (1.0 - (-1f64).exp()).powi(2);
        // distinct pairs drop the diagonal, a 1/n correction
        assert!((s - exact).abs() < 2.0 / 200.0, "{s}");
    }

    #[test]
    fn tau_zero_matches_high_dim() {
        let ds = binary(&[0.5, 0.3], 6, 300, 6);
        let base = ScreenConfig {
            lambda_coeff: 0.05,
            max_rounds: 4,
            ..ScreenConfig::default()
        };
        let hi = screen_high_dim(&ds, &base).unwrap();
        let hier = screen_hier(
            &ds,
            &ScreenConfig {
                tau: Some(0.0),
                ..base
            },
        )
        .unwrap();
        assert_eq!(hi, hier);
    }

    #[test]
    fn huge_lambda_selects_nothing() {
        let ds = binary(&[0.5, 0.3], 6, 300, 7);
        let cfg = ScreenConfig {
            lambda_coeff: 1e3,
            ..ScreenConfig::default()
        };
        let r = screen_high_dim(&ds, &cfg).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn cap_keeps_largest_coefficients() {
        let beta = [0.1, 3.0, 0.0, 2.0, 3.0];
        assert_eq!(admit(&beta, &[0, 1, 3, 4], 2), vec![1, 4]);
        assert_eq!(admit(&beta, &[0, 3], 5), vec![0, 3]);
    }

    #[test]
    fn cap_limits_selection() {
        let ds = binary(&[0.5, 0.45, 0.4], 5, 300, 8);
        let cfg = ScreenConfig {
            gamma: GammaMode::Fixed { gamma: 0.0 },
            max_selected: Some(1),
            ..ScreenConfig::default()
        };
        let r = screen_low_dim(&ds, &cfg).unwrap();
        assert_eq!(r.selected.len(), 1);
        assert_eq!(r.termination, Termination::Cap);
    }

    #[test]
    fn trajectory_is_monotone_and_deterministic() {
        let ds = binary(&[0.45, 0.15], 6, 400, 9);
        let cfg = ScreenConfig {
            gamma: GammaMode::Permutation {
                n_perm: 40,
                quantile: 0.95,
            },
            seed: 3,
            ..ScreenConfig::default()
        };
        let a = screen_low_dim(&ds, &cfg).unwrap();
        let b = screen_low_dim(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        for w in a.trajectory.windows(2) {
            assert!(w[0].iter().all(|j| w[1].contains(j)));
        }
        if let Some(last) = a.trajectory.last() {
            assert_eq!(last, &a.selected);
        }
        let union: Vec<usize> = {
            let mut u: Vec<usize> = a.rounds.iter().flat_map(|r| r.added.clone()).collect();
            u.sort_unstable();
            u
        };
        assert_eq!(union, a.selected);
    }

    #[test]
    fn infeasible_tau_rejected() {
        let ds = binary(&[0.5], 3, 50, 1);
        let cfg = ScreenConfig {
            tau: Some(5.0),
            ..ScreenConfig::default()
        };
        assert!(screen_hier(&ds, &cfg).is_err());
    }

    #[test]
    fn population_screen_unmasks_weaker_effect() {
        let dist = DiscreteDist::binary_main_effects(&[0.45, 0.15], 1);
        let res = screen_population(
            &dist,
            &KernelSpec::laplace(),
            10.0,
            &screening_ascent(),
            1e-12,
        )
        .unwrap();
        assert_eq!(res.selected, vec![0, 1]);
        assert_eq!(res.supports[0], vec![0]);
        assert_eq!(res.supports[1], vec![1]);
        assert!(res.objective_at_start.last().unwrap().abs() <= 1e-12);
        assert!(!res.degenerate);
    }

    #[test]
    fn population_screen_finds_xor_pair() {
        let dist = DiscreteDist::xor(2, 2);
        let res = screen_population(
            &dist,
            &KernelSpec::laplace(),
            4.0,
            &screening_ascent(),
            1e-12,
        )
        .unwrap();
        assert_eq!(res.selected, vec![0, 1]);
        // Y is a function of (X1, X2), so the rebalanced law has no mass left
        assert!(res.degenerate);
    }

    #[test]
    fn xor_small_p_sample_recovery() {
        let ds = xor_data(5, 400, 11);
        let cfg = ScreenConfig {
            gamma: GammaMode::Fixed { gamma: 0.0 },
            max_selected: Some(2),
            ..ScreenConfig::default()
        };
        let r = screen_low_dim(&ds, &cfg).unwrap();
        assert_eq!(r.selected, vec![0, 1]);
    }
}
