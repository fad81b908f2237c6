//! Conditional class probabilities by boosted trees and the rebalancing
//! weights derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::objective::{evaluate, PairMass, WeightedDataset};

pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    /// Tree depth; `None` means `min(|A|, 3)`.
    pub max_depth: Option<usize>,
    pub n_bins: usize,
    pub min_leaf: usize,
    pub l2: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 100,
            learning_rate: 0.1,
            max_leaves: 8,
            max_depth: None,
            n_bins: 32,
            min_leaf: 5,
            l2: 1.0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.max_leaves < 2 || self.n_bins < 2 || self.min_leaf == 0 {
            return Err(Error::InvalidConfig(
                "max_leaves and n_bins must be >= 2, min_leaf >= 1".into(),
            ));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("l2 must be >= 0".into()));
        }
        Ok(())
    }

    fn depth_for(&self, selected: usize) -> usize {
        let depth = self.max_depth.unwrap_or_else(|| selected.min(3));
        let leaf_cap = usize::BITS - 1 - self.max_leaves.leading_zeros();
        depth.min(leaf_cap as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Regression tree; `feature` indexes full dataset columns and rows go left
/// when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }
}

/// Fitted estimate of `P(Y = 1 | X_A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondProbModel {
    pub selected: Vec<usize>,
    /// Logit of the empirical base rate.
    pub base_rate: f64,
    /// Final logit intercept after recalibration.
    pub intercept: f64,
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub near_degenerate: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl CondProbModel {
    fn raw_score(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() * self.learning_rate
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        clamp_prob(sigmoid(self.intercept + self.raw_score(row)))
    }

    pub fn predict_all(&self, ds: &WeightedDataset) -> Vec<f64> {
        (0..ds.n()).map(|i| self.predict_proba(ds.row(i))).collect()
    }
}

struct Binned {
    /// `codes[c][i]`: bin of row `i` in selected column `c`.
    codes: Vec<Vec<u16>>,
    /// `edges[c][b]`: upper threshold of bin `b`.
    edges: Vec<Vec<f64>>,
}

fn bin_columns(ds: &WeightedDataset, selected: &[usize], n_bins: usize) -> Binned {
    let mut codes = Vec::with_capacity(selected.len());
    let mut edges = Vec::with_capacity(selected.len());
    for &j in selected {
        let col = ds.column(j);
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let col_edges: Vec<f64> = if sorted.len() <= n_bins {
            sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        } else {
            let mut e: Vec<f64> = (1..n_bins)
                .map(|b| {
                    let k = b * sorted.len() / n_bins;
                    0.5 * (sorted[k - 1] + sorted[k])
                })
                .collect();
            e.dedup();
            e
        };
        codes.push(
            col.iter()
                .map(|x| col_edges.partition_point(|t| t < x) as u16)
                .collect(),
        );
        edges.push(col_edges);
    }
    Binned { codes, edges }
}

struct Grower<'a> {
    binned: &'a Binned,
    selected: &'a [usize],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a BoostConfig,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.cfg.l2)
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize, f64)> {
        let score = |g: f64, h: f64| g * g / (h + self.cfg.l2);
        let g_tot: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_tot: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let parent = score(g_tot, h_tot);
        let mut best: Option<(usize, usize, f64)> = None;
        for (c, codes) in self.binned.codes.iter().enumerate() {
            let nb = self.binned.edges[c].len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hist = vec![(0.0f64, 0.0f64, 0usize); nb];
            for &i in rows {
                let slot = &mut hist[codes[i] as usize];
                slot.0 += self.grad[i];
                slot.1 += self.hess[i];
                slot.2 += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for (b, slot) in hist.iter().enumerate().take(nb - 1) {
                gl += slot.0;
                hl += slot.1;
                nl += slot.2;
                let nr = rows.len() - nl;
                if nl < self.cfg.min_leaf || nr < self.cfg.min_leaf {
                    continue;
                }
                let gain = score(gl, hl) + score(g_tot - gl, h_tot - hl) - parent;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((c, b, gain));
                }
            }
        }
        best
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let at = nodes.len();
        nodes.push(Node::Leaf(self.leaf_value(&rows)));
        if depth == 0 {
            return at;
        }
        if let Some((c, b, _)) = self.best_split(&rows) {
            let codes = &self.binned.codes[c];
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&i| codes[i] as usize <= b);
            let left = self.grow(l, depth - 1, nodes);
            let right = self.grow(r, depth - 1, nodes);
            nodes[at] = Node::Split {
                feature: self.selected[c],
                threshold: self.binned.edges[c][b],
                left,
                right,
            };
        }
        at
    }
}

/// Solves `sum_i (y_i - clamp(sigmoid(c + s_i))) = 0` for `c`.
fn recalibrate_intercept(scores: &[f64], labels: &[u8], start: f64) -> f64 {
    let ones = labels.iter().filter(|&&y| y == 1).count() as f64;
    let residual = |c: f64| -> f64 {
        ones - scores
            .iter()
            .map(|s| clamp_prob(sigmoid(c + s)))
            .sum::<f64>()
    };
    // residual is nonincreasing in c
    let mut lo = start - 1.0;
    let mut hi = start + 1.0;
    while residual(lo) < 0.0 && lo > -1e6 {
        lo = start - 2.0 * (start - lo);
    }
    while residual(hi) > 0.0 && hi < 1e6 {
        hi = start + 2.0 * (hi - start);
    }
    let mut c = start.clamp(lo, hi);
    for _ in 0..200 {
        let r = residual(c);
        if r == 0.0 {
            return c;
        }
        if r > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let slope: f64 = scores
            .iter()
            .map(|s| {
                let p = sigmoid(c + s);
                if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                    0.0
                } else {
                    p * (1.0 - p)
                }
            })
            .sum();
        let newton = if slope > 0.0 { c + r / slope } else { f64::NAN };
        c = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + c.abs()) {
            break;
        }
    }
    // pick the bracket end with the smaller residual
    [c, lo, hi]
        .into_iter()
        .min_by(|a, b| residual(*a).abs().total_cmp(&residual(*b).abs()))
        .unwrap_or(c)
}

/// Fits `P(Y = 1 | X_A)` on the unweighted sample by logistic-loss boosting,
/// then shifts the intercept so that `sum_i (y_i - p_i) = 0`.
pub fn fit_conditional(
    ds: &WeightedDataset,
    selected: &[usize],
    cfg: &BoostConfig,
) -> Result<CondProbModel> {
    cfg.validate()?;
    let n = ds.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let labels = ds.labels();
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass);
    }
    let mut selected: Vec<usize> = selected.to_vec();
    selected.sort_unstable();
    selected.dedup();
    if let Some(&j) = selected.iter().find(|&&j| j >= ds.p()) {
        return Err(Error::InvalidConfig(format!(
            "selected column {j} out of range for p = {}",
            ds.p()
        )));
    }
    let base_rate = logit(ones as f64 / n as f64);
    let mut trees = Vec::new();
    let mut scores = vec![0.0; n];
    if !selected.is_empty() && cfg.rounds > 0 {
        let binned = bin_columns(ds, &selected, cfg.n_bins);
        let depth = cfg.depth_for(selected.len());
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..cfg.rounds {
            for i in 0..n {
                let p = sigmoid(base_rate + cfg.learning_rate * scores[i]);
                grad[i] = p - labels[i] as f64;
                hess[i] = (p * (1.0 - p)).max(1e-12);
            }
            let grower = Grower {
                binned: &binned,
                selected: &selected,
                grad: &grad,
                hess: &hess,
                cfg,
            };
            let mut nodes = Vec::new();
            grower.grow((0..n).collect(), depth, &mut nodes);
            let tree = Tree { nodes };
            for (i, s) in scores.iter_mut().enumerate() {
                *s += tree.predict(ds.row(i));
            }
            trees.push(tree);
        }
    }
    let shifted: Vec<f64> = scores.iter().map(|s| s * cfg.learning_rate).collect();
    let intercept = recalibrate_intercept(&shifted, labels, base_rate);
    let clamped = shifted
        .iter()
        .filter(|s| {
            let p = sigmoid(intercept + **s);
            p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP
        })
        .count();
    Ok(CondProbModel {
        selected,
        base_rate,
        intercept,
        trees,
        learning_rate: cfg.learning_rate,
        near_degenerate: 2 * clamped >= n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub weights: Vec<f64>,
    pub between_mass: f64,
    pub within_mass: f64,
    pub effective_size_class0: f64,
    pub effective_size_class1: f64,
}

impl WeightUpdate {
    pub fn balance_gap(&self) -> f64 {
        self.effective_size_class1 - self.effective_size_class0
    }

    /// Fails with `DegenerateWeights` when either class keeps less than
    /// `min_class_weight` total weight.
    pub fn check(&self, min_class_weight: f64) -> Result<()> {
        if self.effective_size_class0 < min_class_weight
            || self.effective_size_class1 < min_class_weight
        {
            return Err(Error::DegenerateWeights {
                class0: self.effective_size_class0,
                class1: self.effective_size_class1,
            });
        }
        Ok(())
    }
}

/// `w_i = p(1 - y_i | x_{i,A})` from a fitted model.
pub fn compute_weights(model: &CondProbModel, ds: &WeightedDataset) -> WeightUpdate {
    let probs = model.predict_all(ds);
    let labels = ds.labels();
    let weights: Vec<f64> = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| if y == 1 { 1.0 - p } else { *p })
        .collect();
    let (mut c0, mut c1) = (0.0, 0.0);
    for (w, &y) in weights.iter().zip(labels) {
        if y == 1 {
            c1 += w;
        } else {
            c0 += w;
        }
    }
    let mass = PairMass::of(labels, &weights);
    WeightUpdate {
        weights,
        between_mass: mass.between_mass,
        within_mass: mass.within_mass,
        effective_size_class0: c0,
        effective_size_class1: c1,
    }
}

/// Fits on `selected` and returns the dataset carrying the new weights.
pub fn rebalance(
    ds: &WeightedDataset,
    selected: &[usize],
    cfg: &BoostConfig,
) -> Result<(WeightedDataset, WeightUpdate, CondProbModel)> {
    let model = fit_conditional(ds, selected, cfg)?;
    let update = compute_weights(&model, ds);
    let reweighted = ds.with_weights(update.weights.clone())?;
    Ok((reweighted, update, model))
}

/// `F((b/|A|) 1_A)` under the dataset's current weights; zero for empty `A`.
pub fn residual_dependence(
    ds: &WeightedDataset,
    selected: &[usize],
    spec: &KernelSpec,
    budget: f64,
) -> Result<f64> {
    if selected.is_empty() {
        return Ok(0.0);
    }
    let mut beta = vec![0.0; ds.p()];
    let share = budget / selected.len() as f64;
    for &j in selected {
        *beta
            .get_mut(j)
            .ok_or_else(|| Error::InvalidConfig(format!("selected column {j} out of range")))? =
            share;
    }
    evaluate(ds, &beta, spec)
}
