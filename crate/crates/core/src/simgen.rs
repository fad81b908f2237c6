//! Simulation models and the exact population oracle on finite supports.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::objective::{Objective, WeightedDataset};

/// Unlabeled-by-weight sample: row-major features and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub n: usize,
    pub p: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(n: usize, p: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.len() != n * p {
            return Err(Error::LengthMismatch {
                expected: n * p,
                got: features.len(),
            });
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        Ok(RawDataset {
            n,
            p,
            features,
            labels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.features[i * self.p + j]).collect()
    }

    pub fn row_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.p.max(1))
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().filter(|&&y| y == 1).count() as f64 / self.n as f64
    }

    /// Divides every column by its largest absolute value so that
    /// `max |x_ij| <= 1`. Returns the divisors; all-zero columns keep divisor 1.
    pub fn rescale_max_abs(&mut self) -> Vec<f64> {
        let mut scales = vec![0.0f64; self.p];
        for row in self.features.chunks_exact(self.p) {
            for (s, x) in scales.iter_mut().zip(row) {
                *s = s.max(x.abs());
            }
        }
        for s in scales.iter_mut() {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        for row in self.features.chunks_exact_mut(self.p) {
            for (x, s) in row.iter_mut().zip(&scales) {
                *x /= s;
            }
        }
        scales
    }

    /// Weighted dataset with the balanced starting weights.
    pub fn to_balanced(&self) -> Result<WeightedDataset> {
        WeightedDataset::balanced(self.features.clone(), self.n, self.p, self.labels.clone())
    }

    pub fn to_uniform(&self) -> Result<WeightedDataset> {
        WeightedDataset::uniform(self.features.clone(), self.n, self.p, self.labels.clone())
    }
}

/// The simulation models. `p` is always the total number of features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Four signals with class-dependent variance:
    /// `X_j | Y=0 ~ N(0, s2 (1 + d_j))`, `X_j | Y=1 ~ N(0, s2 (1 - d_j))`.
    UnequalVariance {
        sigma2: f64,
        deltas: [f64; 4],
        p: usize,
    },
    /// Two correlated signal pairs with class-flipped correlation.
    Qda {
        delta1: f64,
        delta2: f64,
        xi: f64,
        rho: f64,
        p: usize,
    },
    /// `logit P(Y=1|X) = |X2|/|X1| + coef |X4|/|X3|`.
    RatioLogistic {
        coef: f64,
        p: usize,
    },
    /// `Y = 1{X1 X2 > 0}`, all features i.i.d. `N(0,1)`.
    Xor {
        p: usize,
    },
    /// Binary `+-1/2` features with `Q(X_j = +-1/2 | Y=1) = (1 +- d_j)/2`.
    BinaryMainEffects {
        deltas: Vec<f64>,
        p: usize,
    },
    Discrete {
        dist: DiscreteDist,
    },
}

impl ModelSpec {
    pub fn unequal_variance(p: usize) -> Self {
        ModelSpec::UnequalVariance {
            sigma2: 1.0,
            deltas: [0.4, 0.35, 0.3, 0.25],
            p,
        }
    }

    pub fn qda(p: usize) -> Self {
        ModelSpec::Qda {
            delta1: 0.25,
            delta2: 0.2,
            xi: 0.1,
            rho: 0.5,
            p,
        }
    }

    pub fn ratio_logistic(p: usize) -> Self {
        ModelSpec::RatioLogistic { coef: 0.8, p }
    }

    pub fn xor(p: usize) -> Self {
        ModelSpec::Xor { p }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::UnequalVariance { .. } => "unequal_variance",
            ModelSpec::Qda { .. } => "qda",
            ModelSpec::RatioLogistic { .. } => "ratio_logistic",
            ModelSpec::Xor { .. } => "xor",
            ModelSpec::BinaryMainEffects { .. } => "binary_main_effects",
            ModelSpec::Discrete { .. } => "discrete",
        }
    }

    pub fn p(&self) -> usize {
        match self {
            ModelSpec::UnequalVariance { p, .. }
            | ModelSpec::Qda { p, .. }
            | ModelSpec::RatioLogistic { p, .. }
            | ModelSpec::Xor { p }
            | ModelSpec::BinaryMainEffects { p, .. } => *p,
            ModelSpec::Discrete { dist } => dist.dim(),
        }
    }

    /// Same model with a different total dimension.
    pub fn with_p(&self, new_p: usize) -> Self {
        let mut m = self.clone();
        match &mut m {
            ModelSpec::UnequalVariance { p, .. }
            | ModelSpec::Qda { p, .. }
            | ModelSpec::RatioLogistic { p, .. }
            | ModelSpec::Xor { p }
            | ModelSpec::BinaryMainEffects { p, .. } => *p = new_p,
            ModelSpec::Discrete { .. } => {}
        }
        m
    }

    /// 0-based indices of the signal variables.
    pub fn signal_set(&self) -> Vec<usize> {
        match self {
            ModelSpec::UnequalVariance { .. }
            | ModelSpec::Qda { .. }
            | ModelSpec::RatioLogistic { .. } => (0..4).collect(),
            ModelSpec::Xor { .. } => vec![0, 1],
            ModelSpec::BinaryMainEffects { deltas, .. } => (0..deltas.len()).collect(),
            ModelSpec::Discrete { .. } => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = match self {
            ModelSpec::Discrete { dist } => return dist.validate(),
            ModelSpec::BinaryMainEffects { deltas, .. } => deltas.len().max(1),
            ModelSpec::Xor { .. } => 2,
            _ => 4,
        };
        if self.p() < need {
            return Err(Error::InvalidConfig(format!(
                "{} needs p >= {need}, got {}",
                self.name(),
                self.p()
            )));
        }
        let bad = |what: &str| {
            Err(Error::InvalidConfig(format!(
                "{}: invalid {what}",
                self.name()
            )))
        };
        match self {
            ModelSpec::UnequalVariance { sigma2, deltas, .. } => {
                if !(*sigma2 > 0.0) {
                    return bad("sigma2");
                }
                if deltas.iter().any(|d| !(0.0..1.0).contains(d)) {
                    return bad("deltas (need 0 <= d < 1)");
                }
            }
            ModelSpec::Qda { rho, .. } if !(rho.abs() < 1.0) => {
                return bad("rho (need |rho| < 1)");
            }
            ModelSpec::BinaryMainEffects { deltas, .. }
                if deltas.iter().any(|d| !(0.0..1.0).contains(d)) =>
            {
                return bad("deltas (need 0 <= d < 1)");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Independent seed for sub-stream `stream` of `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `n` i.i.d. observations from `model`, reproducibly under `seed`.
pub fn generate(model: &ModelSpec, n: usize, seed: u64) -> Result<RawDataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("n must be >= 2, got {n}")));
    }
    model.validate()?;
    let p = model.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n * p];
    let mut y = vec![0u8; n];
    for i in 0..n {
        let row = &mut x[i * p..(i + 1) * p];
        y[i] = draw_row(model, row, &mut rng);
    }
    RawDataset::new(n, p, x, y)
}

fn draw_row(model: &ModelSpec, row: &mut [f64], rng: &mut ChaCha8Rng) -> u8 {
    match model {
        ModelSpec::UnequalVariance { sigma2, deltas, .. } => {
            let label = u8::from(rng.random_bool(0.5));
            for (j, v) in row.iter_mut().enumerate() {
                let var = match deltas.get(j) {
                    Some(d) if label == 0 => sigma2 * (1.0 + d),
                    Some(d) => sigma2 * (1.0 - d),
                    None => *sigma2,
                };
                *v = var.sqrt() * normal(rng);
            }
            label
        }
        ModelSpec::Qda {
            delta1,
            delta2,
            xi,
            rho,
            ..
        } => {
            let label = u8::from(rng.random_bool(0.5));
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let r = sign * rho;
            let c = (1.0 - rho * rho).sqrt();
            for (offset, mean) in [(0usize, [*delta1, *xi]), (2, [*delta2, *xi])] {
                let z1 = normal(rng);
                let z2 = normal(rng);
                row[offset] = sign * mean[0] + z1;
                row[offset + 1] = sign * mean[1] + r * z1 + c * z2;
            }
            for v in row.iter_mut().skip(4) {
                *v = normal(rng);
            }
            label
        }
        ModelSpec::RatioLogistic { coef, .. } => {
            for v in row.iter_mut() {
                *v = normal(rng);
            }
            let logit = row[1].abs() / row[0].abs() + coef * row[3].abs() / row[2].abs();
            let prob = 1.0 / (1.0 + (-logit).exp());
            u8::from(rng.random::<f64>() < prob)
        }
        ModelSpec::Xor { .. } => {
            for v in row.iter_mut() {
                *v = normal(rng);
            }
            u8::from(row[0] * row[1] > 0.0)
        }
        ModelSpec::BinaryMainEffects { deltas, .. } => {
            let label = u8::from(rng.random_bool(0.5));
            for (j, v) in row.iter_mut().enumerate() {
                let d = deltas.get(j).copied().unwrap_or(0.0);
                let p_plus = if label == 1 {
                    0.5 * (1.0 + d)
                } else {
                    0.5 * (1.0 - d)
                };
                *v = if rng.random_bool(p_plus) { 0.5 } else { -0.5 };
            }
            label
        }
        ModelSpec::Discrete { dist } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let last = dist.support.len() - 1;
            let k = dist
                .support
                .iter()
                .position(|pt| {
                    acc += pt.prob;
                    u < acc
                })
                .unwrap_or(last);
            row.copy_from_slice(&dist.support[k].x);
            dist.support[k].y
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub x: Vec<f64>,
    pub y: u8,
    pub prob: f64,
}

/// Finite-support joint law of `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    pub support: Vec<SupportPoint>,
}

impl DiscreteDist {
    pub fn new(support: Vec<SupportPoint>) -> Result<Self> {
        let d = DiscreteDist { support };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.support.first().ok_or(Error::EmptyDataset)?;
        let dim = first.x.len();
        for pt in &self.support {
            if pt.x.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: pt.x.len(),
                });
            }
            if !(pt.prob > 0.0) || pt.y > 1 {
                return Err(Error::InvalidData(
                    "support probabilities must be positive and labels binary".into(),
                ));
            }
        }
        let total: f64 = self.support.iter().map(|pt| pt.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, |pt| pt.x.len())
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Order-`s` XOR on `+-1/2` signs, with `extra` independent fair-sign noise
    /// coordinates appended.
    pub fn xor(order: usize, extra: usize) -> Self {
        let dim = order + extra;
        let count = 1usize << dim;
        let prob = 1.0 / count as f64;
        let support = (0..count)
            .map(|mask| {
                let x: Vec<f64> = (0..dim)
                    .map(|j| if mask & (1 << j) != 0 { 0.5 } else { -0.5 })
                    .collect();
                let negatives = x[..order].iter().filter(|v| **v < 0.0).count();
                SupportPoint {
                    x,
                    y: u8::from(negatives % 2 == 0),
                    prob,
                }
            })
            .collect();
        DiscreteDist { support }
    }

    /// Balanced binary main-effect model with the given signal sizes and
    /// `extra` fair-sign noise coordinates.
    pub fn binary_main_effects(deltas: &[f64], extra: usize) -> Self {
        let dim = deltas.len() + extra;
        let mut support = Vec::new();
        for label in 0..2u8 {
            for mask in 0..(1usize << dim) {
                let mut prob = 0.5;
                let mut x = Vec::with_capacity(dim);
                for j in 0..dim {
                    let plus = mask & (1 << j) != 0;
                    let d = deltas.get(j).copied().unwrap_or(0.0);
                    let p_plus = if label == 1 {
                        0.5 * (1.0 + d)
                    } else {
                        0.5 * (1.0 - d)
                    };
                    prob *= if plus { p_plus } else { 1.0 - p_plus };
                    x.push(if plus { 0.5 } else { -0.5 });
                }
                if prob > 0.0 {
                    support.push(SupportPoint { x, y: label, prob });
                }
            }
        }
        DiscreteDist { support }
    }

    /// Uniform per-point weights.
    pub fn unit_weights(&self) -> Vec<f64> {
        vec![1.0; self.support.len()]
    }

    /// Rebalancing weights `w_k = P(Y = 1 - y_k | X_A = x_{k,A})` computed
    /// exactly from this law.
    pub fn rebalance_weights(&self, selected: &[usize]) -> Vec<f64> {
        let key = |x: &[f64]| -> Vec<u64> { selected.iter().map(|&j| x[j].to_bits()).collect() };
        let mut groups: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
        for pt in &self.support {
            let e = groups.entry(key(&pt.x)).or_insert((0.0, 0.0));
            e.0 += pt.prob;
            if pt.y == 1 {
                e.1 += pt.prob;
            }
        }
        self.support
            .iter()
            .map(|pt| {
                let (mass, ones) = groups[&key(&pt.x)];
                let p1 = ones / mass;
                if pt.y == 1 {
                    1.0 - p1
                } else {
                    p1
                }
            })
            .collect()
    }

    /// Law of `(X, Y)` under the reweighting `dQ/dP proportional to w`.
    pub fn reweighted(&self, weights: &[f64]) -> Result<Self> {
        let total: f64 = self
            .support
            .iter()
            .zip(weights)
            .map(|(pt, w)| pt.prob * w)
            .sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights {
                class0: 0.0,
                class1: 0.0,
            });
        }
        let support = self
            .support
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(pt, w)| SupportPoint {
                x: pt.x.clone(),
                y: pt.y,
                prob: pt.prob * w / total,
            })
            .collect();
        Ok(DiscreteDist { support })
    }
}

fn check_population_inputs(dist: &DiscreteDist, beta: &[f64], weights: &[f64]) -> Result<()> {
    if beta.len() != dist.dim() {
        return Err(Error::LengthMismatch {
            expected: dist.dim(),
            got: beta.len(),
        });
    }
    if weights.len() != dist.len() {
        return Err(Error::LengthMismatch {
            expected: dist.len(),
            got: weights.len(),
        });
    }
    if beta.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::Domain("beta must be nonnegative".into()));
    }
    Ok(())
}

/// Exact `(F(beta; Q^w), grad F)` by summing over all ordered support pairs,
/// the diagonal included.
pub fn population_value_and_gradient(
    dist: &DiscreteDist,
    beta: &[f64],
    spec: &KernelSpec,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_population_inputs(dist, beta, weights)?;
    let p = dist.dim();
    let mass: Vec<f64> = dist
        .support
        .iter()
        .zip(weights)
        .map(|(pt, w)| pt.prob * w)
        .collect();
    let (mut mb, mut mw) = (0.0, 0.0);
    for (k, a) in dist.support.iter().enumerate() {
        for (l, b) in dist.support.iter().enumerate() {
            if a.y == b.y {
                mw += mass[k] * mass[l];
            } else {
                mb += mass[k] * mass[l];
            }
        }
    }
    if !(mb > 0.0 && mw > 0.0) {
        let c1: f64 = dist
            .support
            .iter()
            .zip(&mass)
            .filter(|(pt, _)| pt.y == 1)
            .map(|(_, m)| m)
            .sum();
        let c0: f64 = mass.iter().sum::<f64>() - c1;
        return Err(Error::DegenerateWeights {
            class0: c0,
            class1: c1,
        });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    let mut delta = vec![0.0; p];
    for (k, a) in dist.support.iter().enumerate() {
        for (l, b) in dist.support.iter().enumerate() {
            let c = mass[k] * mass[l] * if a.y == b.y { -1.0 / mw } else { 1.0 / mb };
            if c == 0.0 {
                continue;
            }
            for j in 0..p {
                delta[j] = spec.q.apply(a.x[j] - b.x[j]);
            }
            let s: f64 = delta.iter().zip(beta).map(|(d, w)| d * w).sum();
            let (fv, fp) = spec.value_and_slope(s);
            value += c * fv;
            for j in 0..p {
                grad[j] += c * fp * delta[j];
            }
        }
    }
    Ok((value, grad))
}

pub fn population_objective(
    dist: &DiscreteDist,
    beta: &[f64],
    spec: &KernelSpec,
    weights: &[f64],
) -> Result<f64> {
    population_value_and_gradient(dist, beta, spec, weights).map(|(v, _)| v)
}

pub fn population_gradient(
    dist: &DiscreteDist,
    beta: &[f64],
    spec: &KernelSpec,
    weights: &[f64],
) -> Result<Vec<f64>> {
    population_value_and_gradient(dist, beta, spec, weights).map(|(_, g)| g)
}

/// Adapter letting the optimizer run on the exact population objective.
#[derive(Debug, Clone)]
pub struct PopulationObjective<'a> {
    pub dist: &'a DiscreteDist,
    pub spec: KernelSpec,
    pub weights: Vec<f64>,
}

impl<'a> PopulationObjective<'a> {
    pub fn new(dist: &'a DiscreteDist, spec: KernelSpec, weights: Vec<f64>) -> Self {
        PopulationObjective {
            dist,
            spec,
            weights,
        }
    }
}

impl Objective for PopulationObjective<'_> {
    fn dim(&self) -> usize {
        self.dist.dim()
    }

    fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        population_value_and_gradient(self.dist, beta, &self.spec, &self.weights)
    }
}

/// Order-2 XOR objective under `f(x) = -e^{-x}`, `q = 1`, shifted by `c`:
/// `e^{-c} (1 - e^{-b1}) (1 - e^{-b2}) / 2`.
pub fn xor_closed_form(beta1: f64, beta2: f64, c: f64) -> Result<f64> {
    if [beta1, beta2, c].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(
            "xor_closed_form arguments must be >= 0".into(),
        ));
    }
    Ok(0.5 * (-c).exp() * (1.0 - (-beta1).exp()) * (1.0 - (-beta2).exp()))
}
