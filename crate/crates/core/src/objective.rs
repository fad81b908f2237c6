//! Sample metric-learning objective `F(beta; Q_n)` and its gradient.
//!
//! `F` is the weighted between-class average of `f(<beta, delta>)` minus the
//! weighted within-class average, taken over distinct index pairs `i != i'`.
//! Each unordered pair is visited once; the ordered-pair masses are exactly
//! twice the unordered ones, so the normalized averages are identical.
//!
//! Pairs are split into a fixed set of row blocks (independent of the number
//! of worker threads) and block partials are summed in block order, so results
//! do not depend on how rayon schedules the work.

use std::ops::Range;
use std::sync::{Arc, Mutex};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Exponent, KernelSpec};

/// Relative floor on pair masses, in units of `(sum w)^2`.
pub const PAIR_MASS_FLOOR: f64 = 1e-12;

const MAX_BLOCKS: usize = 64;
/// Bytes of row data kept hot while streaming partner rows.
const TILE_BYTES: usize = 32 * 1024;

/// Feature matrix, binary labels and per-sample weights defining `Q_n`.
///
/// Features are stored row-major and shared, so reweighting or relabelling a
/// dataset does not copy the matrix.
#[derive(Debug, Clone)]
pub struct WeightedDataset {
    n: usize,
    p: usize,
    features: Arc<Vec<f64>>,
    labels: Vec<u8>,
    weights: Vec<f64>,
    max_abs: f64,
}

impl WeightedDataset {
    pub fn new(
        features: Vec<f64>,
        n: usize,
        p: usize,
        labels: Vec<u8>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.len() != n * p {
            return Err(Error::LengthMismatch {
                expected: n * p,
                got: features.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        let max_abs = features.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::from_parts(Arc::new(features), n, p, labels, weights, max_abs)
    }

    /// Dataset with the balanced initial weights `w_i = #{y = 1 - y_i} / n`.
    pub fn balanced(features: Vec<f64>, n: usize, p: usize, labels: Vec<u8>) -> Result<Self> {
        let weights = initial_weights(&labels)?;
        Self::new(features, n, p, labels, weights)
    }

    /// Dataset with all weights equal to one.
    pub fn uniform(features: Vec<f64>, n: usize, p: usize, labels: Vec<u8>) -> Result<Self> {
        Self::new(features, n, p, labels, vec![1.0; n])
    }

    fn from_parts(
        features: Arc<Vec<f64>>,
        n: usize,
        p: usize,
        labels: Vec<u8>,
        weights: Vec<f64>,
        max_abs: f64,
    ) -> Result<Self> {
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidData(format!("label {bad} is not binary")));
        }
        if let Some(bad) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidData(format!("weight {bad} outside [0, 1]")));
        }
        let ones = labels.iter().filter(|&&y| y == 1).count();
        if ones == 0 || ones == n {
            return Err(Error::SingleClass);
        }
        Ok(WeightedDataset {
            n,
            p,
            features,
            labels,
            weights,
            max_abs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Largest absolute feature value, recorded at construction.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.features[i * self.p + j]).collect()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            Arc::clone(&self.features),
            self.n,
            self.p,
            self.labels.clone(),
            weights,
            self.max_abs,
        )
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::from_parts(
            Arc::clone(&self.features),
            self.n,
            self.p,
            labels,
            self.weights.clone(),
            self.max_abs,
        )
    }

    /// Copy restricted to the given columns, keeping labels and weights.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&j) = cols.iter().find(|&&j| j >= self.p) {
            return Err(Error::InvalidConfig(format!(
                "column {j} out of range for p = {}",
                self.p
            )));
        }
        let mut features = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            let row = self.row(i);
            features.extend(cols.iter().map(|&j| row[j]));
        }
        Self::new(
            features,
            self.n,
            cols.len(),
            self.labels.clone(),
            self.weights.clone(),
        )
    }

    pub fn pair_mass(&self) -> PairMass {
        PairMass::of(&self.labels, &self.weights)
    }
}

/// `w_i = #{y = 1 - y_i} / n`, the closed-form weights for an empty selected set.
pub fn initial_weights(labels: &[u8]) -> Result<Vec<f64>> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let ones = labels.iter().filter(|&&y| y == 1).count() as f64;
    let zeros = n as f64 - ones;
    Ok(labels
        .iter()
        .map(|&y| {
            if y == 1 {
                zeros / n as f64
            } else {
                ones / n as f64
            }
        })
        .collect())
}

/// Ordered-pair masses `sum_{i != i'} w_i w_i'` split by label agreement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMass {
    pub between_mass: f64,
    pub within_mass: f64,
    pub total_weight: f64,
}

impl PairMass {
    pub fn of(labels: &[u8], weights: &[f64]) -> Self {
        let (mut w0, mut w1, mut sq0, mut sq1) = (0.0, 0.0, 0.0, 0.0);
        for (&y, &w) in labels.iter().zip(weights) {
            if y == 1 {
                w1 += w;
                sq1 += w * w;
            } else {
                w0 += w;
                sq0 += w * w;
            }
        }
        PairMass {
            between_mass: 2.0 * w0 * w1,
            within_mass: (w0 * w0 - sq0).max(0.0) + (w1 * w1 - sq1).max(0.0),
            total_weight: w0 + w1,
        }
    }

    pub fn floor(&self) -> f64 {
        PAIR_MASS_FLOOR * self.total_weight * self.total_weight
    }

    pub fn is_degenerate(&self) -> bool {
        let floor = self.floor();
        !(self.between_mass > floor && self.within_mass > floor)
    }

    pub fn check(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegeneratePairs {
                between: self.between_mass,
                within: self.within_mass,
            })
        } else {
            Ok(())
        }
    }
}

fn check_beta(ds: &WeightedDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != ds.p {
        return Err(Error::LengthMismatch {
            expected: ds.p,
            got: beta.len(),
        });
    }
    if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::Domain(format!("beta must be nonnegative, got {b}")));
    }
    Ok(())
}

/// Coefficients of `beta` used for distances: dense, or the nonzero entries
/// when fewer than half are nonzero.
enum BetaView<'a> {
    Dense(&'a [f64]),
    Sparse(Vec<(usize, f64)>),
}

impl<'a> BetaView<'a> {
    fn new(beta: &'a [f64]) -> Self {
        let nnz = beta.iter().filter(|b| **b != 0.0).count();
        if 2 * nnz < beta.len() {
            BetaView::Sparse(
                beta.iter()
                    .enumerate()
                    .filter(|(_, b)| **b != 0.0)
                    .map(|(j, b)| (j, *b))
                    .collect(),
            )
        } else {
            BetaView::Dense(beta)
        }
    }

    #[inline(always)]
    fn distance(&self, a: &[f64], b: &[f64], q: Exponent) -> f64 {
        match self {
            BetaView::Dense(beta) => weighted_distance(a, b, beta, q),
            BetaView::Sparse(nz) => nz.iter().map(|&(j, w)| w * q.apply(a[j] - b[j])).sum(),
        }
    }
}

/// `sum_j beta_j |a_j - b_j|^q` with four independent accumulators.
#[inline(always)]
fn weighted_distance(a: &[f64], b: &[f64], beta: &[f64], q: Exponent) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    let (a4, ar) = a.split_at(chunks);
    let (b4, br) = b.split_at(chunks);
    let (w4, wr) = beta.split_at(chunks);
    match q {
        Exponent::One => {
            for ((x, y), w) in a4
                .chunks_exact(4)
                .zip(b4.chunks_exact(4))
                .zip(w4.chunks_exact(4))
            {
                for l in 0..4 {
                    acc[l] += w[l] * (x[l] - y[l]).abs();
                }
            }
        }
        Exponent::Two => {
            for ((x, y), w) in a4
                .chunks_exact(4)
                .zip(b4.chunks_exact(4))
                .zip(w4.chunks_exact(4))
            {
                for l in 0..4 {
                    let d = x[l] - y[l];
                    acc[l] += w[l] * d * d;
                }
            }
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for ((x, y), w) in ar.iter().zip(br).zip(wr) {
        s += w * q.apply(x - y);
    }
    s
}

#[inline(always)]
fn add_scaled_delta(grad: &mut [f64], a: &[f64], b: &[f64], coef: f64, q: Exponent) {
    match q {
        Exponent::One => {
            for ((g, x), y) in grad.iter_mut().zip(a).zip(b) {
                *g += coef * (x - y).abs();
            }
        }
        Exponent::Two => {
            for ((g, x), y) in grad.iter_mut().zip(a).zip(b) {
                let d = x - y;
                *g += coef * d * d;
            }
        }
    }
}

/// Splits rows `0..n` into contiguous blocks holding roughly equal numbers of
/// `(i, i' > i)` pairs. Depends only on `n`.
fn row_blocks(n: usize) -> Vec<Range<usize>> {
    let total = n * n.saturating_sub(1) / 2;
    let blocks = MAX_BLOCKS.min(n.max(1));
    let target = total.div_ceil(blocks).max(1);
    let mut out = Vec::with_capacity(blocks);
    let mut start = 0;
    let mut acc = 0;
    for i in 0..n {
        acc += n - 1 - i;
        if acc >= target {
            out.push(start..i + 1);
            start = i + 1;
            acc = 0;
        }
    }
    if start < n {
        out.push(start..n);
    }
    out
}

struct Partial {
    between: f64,
    within: f64,
    between_mass: f64,
    within_mass: f64,
    grad: Vec<f64>,
}

impl Partial {
    fn new(p: usize) -> Self {
        Partial {
            between: 0.0,
            within: 0.0,
            between_mass: 0.0,
            within_mass: 0.0,
            grad: vec![0.0; p],
        }
    }

    /// Branch-free: labels are unpredictable, and adding an exact zero to
    /// the other class leaves its sums unchanged bit for bit.
    #[inline(always)]
    fn add(&mut self, same_label: bool, c: f64, fv: f64) {
        let s = f64::from(u8::from(same_label));
        let (cw, cb) = (s * c, (1.0 - s) * c);
        self.within += cw * fv;
        self.within_mass += cw;
        self.between += cb * fv;
        self.between_mass += cb;
    }

    /// Value normalized by the masses accumulated alongside it, so that
    /// `beta = 0` yields exactly `f(0) - f(0) = 0`.
    fn value(&self) -> f64 {
        self.between / self.between_mass - self.within / self.within_mass
    }
}

struct Normalizer {
    between: f64,
    within: f64,
}

impl Normalizer {
    /// Reciprocal unordered-pair masses.
    fn from_mass(mass: &PairMass) -> Self {
        Normalizer {
            between: 2.0 / mass.between_mass,
            within: 2.0 / mass.within_mass,
        }
    }

    #[inline(always)]
    fn signed(&self, same_label: bool) -> f64 {
        [self.between, -self.within][usize::from(same_label)]
    }
}

fn block_partial(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
    norm: &Normalizer,
    rows: Range<usize>,
    with_grad: bool,
) -> Partial {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { block_partial_avx2(ds, beta, spec, norm, rows, with_grad) };
        }
    }
    block_partial_impl(ds, beta, spec, norm, rows, with_grad)
}

/// Same arithmetic as the portable path, compiled with wider vectors. No
/// fused multiply-add is enabled, so results are bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn block_partial_avx2(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
    norm: &Normalizer,
    rows: Range<usize>,
    with_grad: bool,
) -> Partial {
    block_partial_impl(ds, beta, spec, norm, rows, with_grad)
}

#[inline(always)]
fn block_partial_impl(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
    norm: &Normalizer,
    rows: Range<usize>,
    with_grad: bool,
) -> Partial {
    let q = spec.q;
    let view = BetaView::new(beta);
    let mut part = Partial::new(if with_grad { ds.p } else { 0 });
    // rows in tiles so that each partner row is read once per tile
    let tile_rows = (TILE_BYTES / (8 * ds.p.max(1))).clamp(1, 32);
    let mut start = rows.start;
    while start < rows.end {
        let tile = start..(start + tile_rows).min(rows.end);
        for k in start + 1..ds.n {
            let wk = ds.weights[k];
            if wk == 0.0 {
                continue;
            }
            let xk = ds.row(k);
            let yk = ds.labels[k];
            for i in tile.start..tile.end.min(k) {
                let wi = ds.weights[i];
                if wi == 0.0 {
                    continue;
                }
                let xi = ds.row(i);
                let same = ds.labels[i] == yk;
                let c = wi * wk;
                let s = view.distance(xi, xk, q);
                let (fv, fp) = spec.value_and_slope(s);
                part.add(same, c, fv);
                if with_grad {
                    add_scaled_delta(&mut part.grad, xi, xk, c * fp * norm.signed(same), q);
                }
            }
        }
        start = tile.end;
    }
    part
}

fn fused(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    check_beta(ds, beta)?;
    let mass = ds.pair_mass();
    mass.check()?;
    let norm = Normalizer::from_mass(&mass);
    let partials: Vec<Partial> = row_blocks(ds.n)
        .into_par_iter()
        .map(|rows| block_partial(ds, beta, spec, &norm, rows, with_grad))
        .collect();
    let mut total = Partial::new(if with_grad { ds.p } else { 0 });
    for part in &partials {
        total.between += part.between;
        total.within += part.within;
        total.between_mass += part.between_mass;
        total.within_mass += part.within_mass;
        for (g, pg) in total.grad.iter_mut().zip(&part.grad) {
            *g += pg;
        }
    }
    let value = total.value();
    Ok((value, total.grad))
}

/// `F(beta; Q_n)`.
pub fn evaluate(ds: &WeightedDataset, beta: &[f64], spec: &KernelSpec) -> Result<f64> {
    fused(ds, beta, spec, false).map(|(v, _)| v)
}

/// `dF/dbeta_j = E_{B-W}[delta_j f'(<beta, delta>)]`.
pub fn gradient(ds: &WeightedDataset, beta: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    fused(ds, beta, spec, true).map(|(_, g)| g)
}

/// Value and gradient in one pass over the pairs.
pub fn evaluate_with_gradient(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
) -> Result<(f64, Vec<f64>)> {
    fused(ds, beta, spec, true)
}

/// Value and gradient restricted to a set of unordered pairs `(i, i')`, `i < i'`.
///
/// Masses are recomputed over the given pairs only.
pub fn evaluate_with_gradient_on_pairs(
    ds: &WeightedDataset,
    beta: &[f64],
    spec: &KernelSpec,
    pairs: &[(usize, usize)],
) -> Result<(f64, Vec<f64>)> {
    check_beta(ds, beta)?;
    let (mut mb, mut mw, mut tw) = (0.0, 0.0, 0.0);
    for &(i, k) in pairs {
        if i >= ds.n || k >= ds.n || i == k {
            return Err(Error::InvalidData(format!("invalid pair ({i}, {k})")));
        }
        let c = ds.weights[i] * ds.weights[k];
        if ds.labels[i] == ds.labels[k] {
            mw += c;
        } else {
            mb += c;
        }
        tw += c;
    }
    let mass = PairMass {
        between_mass: 2.0 * mb,
        within_mass: 2.0 * mw,
        // pair mass floor is relative to the squared total weight
        total_weight: (2.0 * tw).sqrt(),
    };
    mass.check()?;
    let norm = Normalizer::from_mass(&mass);
    let q = spec.q;
    let mut part = Partial::new(ds.p);
    for &(i, k) in pairs {
        let c = ds.weights[i] * ds.weights[k];
        if c == 0.0 {
            continue;
        }
        let same = ds.labels[i] == ds.labels[k];
        let (xi, xk) = (ds.row(i), ds.row(k));
        let s = weighted_distance(xi, xk, beta, q);
        let (fv, fp) = spec.value_and_slope(s);
        part.add(same, c, fv);
        add_scaled_delta(&mut part.grad, xi, xk, c * fp * norm.signed(same), q);
    }
    let value = part.value();
    Ok((value, part.grad))
}

/// Draws `m` distinct unordered pairs uniformly without replacement.
pub fn sample_pairs(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let m = m.min(total);
    let mut picks: Vec<usize> = index::sample(rng, total, m).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|t| unrank_pair(n, t)).collect()
}

/// Inverse of the row-major ranking of the strict upper triangle.
fn unrank_pair(n: usize, t: usize) -> (usize, usize) {
    // first linear index of row i
    let start = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if start(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = if start(hi) <= t && hi < n - 1 { hi } else { lo };
    (i, i + 1 + (t - start(i)))
}

/// Packed strict-upper-triangle kernel values `f(<beta, delta_{ii'}>)`.
///
/// Lets callers re-evaluate `F` under many labelings or weightings at a fixed
/// `beta` in `O(n^2)` each.
#[derive(Debug, Clone)]
pub struct PairKernelTable {
    n: usize,
    values: Vec<f64>,
}

impl PairKernelTable {
    pub fn build(ds: &WeightedDataset, beta: &[f64], spec: &KernelSpec) -> Result<Self> {
        check_beta(ds, beta)?;
        let n = ds.n;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = ds.row(i);
                (i + 1..n)
                    .map(|k| spec.f_unchecked(weighted_distance(xi, ds.row(k), beta, spec.q)))
                    .collect()
            })
            .collect();
        Ok(PairKernelTable {
            n,
            values: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `F` for the given labels and weights, using the stored kernel values.
    pub fn objective(&self, labels: &[u8], weights: &[f64]) -> Result<f64> {
        Ok(self.objectives(&[(labels, weights)])?[0])
    }

    /// `F` for several labelings in one pass over the table, so each stored
    /// row is read from memory once per batch. Each entry equals what
    /// [`PairKernelTable::objective`] returns for it alone.
    pub fn objectives(&self, labelings: &[(&[u8], &[f64])]) -> Result<Vec<f64>> {
        let mut split = Vec::with_capacity(labelings.len());
        for &(labels, weights) in labelings {
            if labels.len() != self.n || weights.len() != self.n {
                return Err(Error::LengthMismatch {
                    expected: self.n,
                    got: labels.len().min(weights.len()),
                });
            }
            let mass = PairMass::of(labels, weights);
            mass.check()?;
            let ones: Vec<f64> = weights
                .iter()
                .zip(labels)
                .map(|(w, &y)| if y == 1 { *w } else { 0.0 })
                .collect();
            let zeros: Vec<f64> = weights
                .iter()
                .zip(labels)
                .map(|(w, &y)| if y == 1 { 0.0 } else { *w })
                .collect();
            split.push((Normalizer::from_mass(&mass), ones, zeros));
        }
        Ok(table_pass(self, labelings, &split))
    }
}

type SplitWeights = (Normalizer, Vec<f64>, Vec<f64>);

fn table_pass(
    table: &PairKernelTable,
    labelings: &[(&[u8], &[f64])],
    split: &[SplitWeights],
) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { table_pass_avx2(table, labelings, split) };
        }
    }
    table_pass_impl(table, labelings, split)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn table_pass_avx2(
    table: &PairKernelTable,
    labelings: &[(&[u8], &[f64])],
    split: &[SplitWeights],
) -> Vec<f64> {
    table_pass_impl(table, labelings, split)
}

#[inline(always)]
fn table_pass_impl(
    table: &PairKernelTable,
    labelings: &[(&[u8], &[f64])],
    split: &[SplitWeights],
) -> Vec<f64> {
    let n = table.n;
    let mut values = vec![0.0; labelings.len()];
    let mut t = 0;
    for i in 0..n {
        let len = n - 1 - i;
        let row = &table.values[t..t + len];
        for (((labels, weights), (norm, ones, zeros)), value) in
            labelings.iter().zip(split).zip(&mut values)
        {
            let (s1, s0) = dot2(row, &ones[i + 1..], &zeros[i + 1..]);
            let (between, within) = if labels[i] == 1 { (s0, s1) } else { (s1, s0) };
            *value += weights[i] * (between * norm.between - within * norm.within);
        }
        t += len;
    }
    values
}

/// `(sum k a, sum k b)` with split accumulators.
#[inline(always)]
fn dot2(k: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = [0.0f64; 4];
    let mut sb = [0.0f64; 4];
    let chunks = k.len() / 4 * 4;
    for ((kc, ac), bc) in k[..chunks]
        .chunks_exact(4)
        .zip(a[..chunks].chunks_exact(4))
        .zip(b[..chunks].chunks_exact(4))
    {
        for l in 0..4 {
            sa[l] += kc[l] * ac[l];
            sb[l] += kc[l] * bc[l];
        }
    }
    let mut ra = (sa[0] + sa[1]) + (sa[2] + sa[3]);
    let mut rb = (sb[0] + sb[1]) + (sb[2] + sb[3]);
    for l in chunks..k.len() {
        ra += k[l] * a[l];
        rb += k[l] * b[l];
    }
    (ra, rb)
}

/// Anything that can supply `(F(beta), grad F(beta))` to the optimizer.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, beta: &[f64]) -> Result<f64> {
        self.value_and_gradient(beta).map(|(v, _)| v)
    }
}

/// Full-batch sample objective.
#[derive(Debug, Clone, Copy)]
pub struct SampleObjective<'a> {
    pub ds: &'a WeightedDataset,
    pub spec: KernelSpec,
}

impl<'a> SampleObjective<'a> {
    pub fn new(ds: &'a WeightedDataset, spec: KernelSpec) -> Self {
        SampleObjective { ds, spec }
    }
}

impl Objective for SampleObjective<'_> {
    fn dim(&self) -> usize {
        self.ds.p
    }

    fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        evaluate_with_gradient(self.ds, beta, &self.spec)
    }

    fn value(&self, beta: &[f64]) -> Result<f64> {
        evaluate(self.ds, beta, &self.spec)
    }
}

/// Stochastic objective: every call draws a fresh batch of `pairs_per_call`
/// unordered pairs.
#[derive(Debug)]
pub struct MiniBatchObjective<'a> {
    pub ds: &'a WeightedDataset,
    pub spec: KernelSpec,
    pub pairs_per_call: usize,
    rng: Mutex<ChaCha8Rng>,
}

impl<'a> MiniBatchObjective<'a> {
    pub fn new(
        ds: &'a WeightedDataset,
        spec: KernelSpec,
        pairs_per_call: usize,
        seed: u64,
    ) -> Self {
        MiniBatchObjective {
            ds,
            spec,
            pairs_per_call,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Objective for MiniBatchObjective<'_> {
    fn dim(&self) -> usize {
        self.ds.p
    }

    fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pairs = {
            let mut rng = self.rng.lock().expect("rng lock poisoned");
            sample_pairs(self.ds.n, self.pairs_per_call, &mut rng)
        };
        evaluate_with_gradient_on_pairs(self.ds, beta, &self.spec, &pairs)
    }
}
