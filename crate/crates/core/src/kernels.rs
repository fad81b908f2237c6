//! Kernel family `(f, q)` for the metric-learning objective.
//!
//! The objective compares pairs through `f(<beta, delta>)` where
//! `delta_j = |x_j - x'_j|^q`. `f` must be increasing with a strictly
//! completely monotone derivative; the two shipped families satisfy this.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SQRT_EPSILON: f64 = 1e-8;

/// Exponent applied to coordinate differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Exponent {
    /// Laplace-type (`l1`) kernel.
    One,
    /// Gaussian-type (`l2`) kernel.
    Two,
}

impl Exponent {
    #[inline(always)]
    pub fn apply(self, d: f64) -> f64 {
        match self {
            Exponent::One => d.abs(),
            Exponent::Two => d * d,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Exponent::One => 1,
            Exponent::Two => 2,
        }
    }
}

impl TryFrom<u8> for Exponent {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Exponent::One),
            2 => Ok(Exponent::Two),
            other => Err(format!("q must be 1 or 2, got {other}")),
        }
    }
}

impl From<Exponent> for u8 {
    fn from(q: Exponent) -> u8 {
        q.as_u8()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `f(x) = -exp(-x / scale)`
    NegExp { scale: f64 },
    /// `f(x) = sqrt(x + epsilon)`
    SqrtShift { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub q: Exponent,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::laplace()
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, q: Exponent) -> Result<Self> {
        let spec = KernelSpec { family, q };
        spec.validate()?;
        Ok(spec)
    }

    /// `f(x) = -e^{-x}` with `q = 1`.
    pub fn laplace() -> Self {
        KernelSpec {
            family: KernelFamily::NegExp { scale: 1.0 },
            q: Exponent::One,
        }
    }

    /// `f(x) = -e^{-x}` with `q = 2`.
    pub fn gaussian() -> Self {
        KernelSpec {
            family: KernelFamily::NegExp { scale: 1.0 },
            q: Exponent::Two,
        }
    }

    pub fn neg_exp(scale: f64, q: Exponent) -> Result<Self> {
        Self::new(KernelFamily::NegExp { scale }, q)
    }

    pub fn sqrt_shift(epsilon: f64, q: Exponent) -> Result<Self> {
        Self::new(KernelFamily::SqrtShift { epsilon }, q)
    }

    pub fn with_q(self, q: Exponent) -> Self {
        KernelSpec { q, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::NegExp { scale } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "NegExp scale must be positive and finite, got {scale}"
                    )));
                }
            }
            KernelFamily::SqrtShift { epsilon } => {
                // epsilon = 0 would make f'(0) infinite at tied pairs.
                if !(epsilon.is_finite() && epsilon > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "SqrtShift epsilon must be positive and finite, got {epsilon}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn f_eval(&self, x: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(self.f_unchecked(x))
    }

    pub fn f_prime(&self, x: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(self.f_prime_unchecked(x))
    }

    /// `f'(0)`, the slope that scales main-effect signal strength.
    pub fn f_prime_at_zero(&self) -> f64 {
        self.f_prime_unchecked(0.0)
    }

    #[inline(always)]
    pub fn f_unchecked(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::NegExp { scale } => -(-x / scale).exp(),
            KernelFamily::SqrtShift { epsilon } => (x + epsilon).sqrt(),
        }
    }

    #[inline(always)]
    pub fn f_prime_unchecked(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::NegExp { scale } => (-x / scale).exp() / scale,
            KernelFamily::SqrtShift { epsilon } => 0.5 / (x + epsilon).sqrt(),
        }
    }

    /// `(f(x), f'(x))` sharing the transcendental evaluation.
    #[inline(always)]
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        match self.family {
            KernelFamily::NegExp { scale } => {
                let e = (-x / scale).exp();
                (-e, e / scale)
            }
            KernelFamily::SqrtShift { epsilon } => {
                let r = (x + epsilon).sqrt();
                (r, 0.5 / r)
            }
        }
    }
}

#[inline]
fn check_domain(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        Err(Error::Domain(format!(
            "kernel argument must be >= 0, got {x}"
        )))
    } else {
        Ok(())
    }
}

/// Coordinate-wise pair differences `|x_j - x'_j|^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDelta(pub Vec<f64>);

impl PairDelta {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `<beta, delta>`.
    pub fn weighted_sum(&self, beta: &[f64]) -> f64 {
        self.0.iter().zip(beta).map(|(d, b)| d * b).sum()
    }
}

pub fn pair_delta(x: &[f64], x_prime: &[f64], q: Exponent) -> Result<PairDelta> {
    if x.len() != x_prime.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    Ok(PairDelta(
        x.iter().zip(x_prime).map(|(a, b)| q.apply(a - b)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sqrt_limit() -> KernelSpec {
        // Smallest admissible shift; indistinguishable from 0 at these magnitudes.
        KernelSpec::sqrt_shift(1e-300, Exponent::One).unwrap()
    }

    #[test]
    fn neg_exp_values() {
        let k = KernelSpec::laplace();
        assert_eq!(k.f_eval(0.0).unwrap(), -1.0);
        assert!((k.f_eval(2f64.ln()).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(k.f_prime(0.0).unwrap(), 1.0);
        assert!((k.f_prime(1.0).unwrap() - 0.36787944).abs() < 1e-8);
    }

    #[test]
    fn sqrt_shift_values() {
        let k = sqrt_limit();
        assert!((k.f_eval(2.25).unwrap() - 1.5).abs() < 1e-15);
        assert!((k.f_prime(1.0).unwrap() - 0.5).abs() < 1e-15);
        // default shift keeps f'(0) finite
        let d = KernelSpec::sqrt_shift(DEFAULT_SQRT_EPSILON, Exponent::One).unwrap();
        assert!(d.f_prime(0.0).unwrap().is_finite());
    }

    #[test]
    fn negative_argument_is_domain_error() {
        let k = KernelSpec::laplace();
        assert!(matches!(k.f_eval(-0.1), Err(Error::Domain(_))));
        assert!(matches!(k.f_prime(-1.0), Err(Error::Domain(_))));
        assert!(matches!(k.f_eval(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::neg_exp(0.0, Exponent::One).is_err());
        assert!(KernelSpec::neg_exp(-1.0, Exponent::Two).is_err());
        assert!(KernelSpec::sqrt_shift(0.0, Exponent::One).is_err());
        assert!(Exponent::try_from(3).is_err());
    }

    #[test]
    fn pair_delta_examples() {
        let d2 = pair_delta(&[3.0, -1.0], &[1.0, 0.0], Exponent::Two).unwrap();
        assert_eq!(d2.0, vec![4.0, 1.0]);
        let d1 = pair_delta(&[3.0, -1.0], &[1.0, 0.0], Exponent::One).unwrap();
        assert_eq!(d1.0, vec![2.0, 1.0]);
        let z = pair_delta(&[0.3, 7.0], &[0.3, 7.0], Exponent::One).unwrap();
        assert_eq!(z.0, vec![0.0, 0.0]);
        assert!(matches!(
            pair_delta(&[1.0], &[1.0, 2.0], Exponent::One),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn serde_shape() {
        let k = KernelSpec::gaussian();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"family":"neg_exp","scale":1.0,"q":2}"#);
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }

    /// Central finite difference of order k with step h.
    fn nth_derivative(f: &dyn Fn(f64) -> f64, x: f64, k: u32, h: f64) -> f64 {
        // binomial stencil: sum_i (-1)^i C(k,i) f(x + (k/2 - i) h) / h^k
        let mut acc = 0.0;
        let mut binom = 1.0;
        for i in 0..=k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * f(x + (k as f64 / 2.0 - i as f64) * h);
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
        acc / h.powi(k as i32)
    }

    #[test]
    fn neg_exp_sampled_complete_monotonicity() {
        let k = KernelSpec::laplace();
        let f = |x: f64| k.f_unchecked(x);
        for step in 0..=50 {
            let x = step as f64 * 0.1;
            for order in 1..=4u32 {
                // one-sided room near 0: shift stencil centre so all nodes are >= 0
                let h = 0.02;
                let centre = x.max(order as f64 * h / 2.0);
                let d = nth_derivative(&f, centre, order, h);
                let sign = if order % 2 == 1 { 1.0 } else { -1.0 };
                assert!(sign * d > 0.0, "order {order} at {x}: {d}");
            }
        }
    }

    #[test]
    fn sqrt_shift_slope_positive_and_decreasing() {
        let k = KernelSpec::sqrt_shift(DEFAULT_SQRT_EPSILON, Exponent::Two).unwrap();
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        for w in grid.windows(2) {
            let (a, b) = (k.f_prime(w[0]).unwrap(), k.f_prime(w[1]).unwrap());
            assert!(a > 0.0 && b > 0.0 && a > b);
        }
    }

    proptest! {
        #[test]
        fn pair_delta_symmetric(
            x in proptest::collection::vec(-10.0f64..10.0, 1..12),
            shift in proptest::collection::vec(-10.0f64..10.0, 12),
            q in prop_oneof![Just(Exponent::One), Just(Exponent::Two)],
        ) {
            let y: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
            let a = pair_delta(&x, &y, q).unwrap();
            let b = pair_delta(&y, &x, q).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.0.iter().all(|d| *d >= 0.0));
        }

        #[test]
        fn f_strictly_increasing(a in 0.0f64..20.0, gap in 1e-6f64..5.0, laplace in any::<bool>()) {
            let k = if laplace {
                KernelSpec::laplace()
            } else {
                KernelSpec::sqrt_shift(DEFAULT_SQRT_EPSILON, Exponent::One).unwrap()
            };
            prop_assert!(k.f_eval(a).unwrap() < k.f_eval(a + gap).unwrap());
        }
    }
}
