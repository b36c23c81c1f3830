//! Multinary activation units.
//!
//! A multinary unit takes integer values `0..=N` and is modelled as `N`
//! weight-sharing binary copies, copy `n` carrying an extra offset bias `o_n`.
//! Its mean activity `Σ_n σ(x − o_n)` is approximated by a smooth activation
//! `f(x) = N·g(k·x)`; the offsets are chosen as `o_n = f⁻¹(n − ½)` so that the
//! copies switch on where `f` crosses each half-integer.
//!
//! Training and inference use the smooth `f` family ([`f_mean`],
//! [`f_variance`], [`f_integral`]). The exact copy sums ([`sum_sigmoid_mean`],
//! [`sum_sigmoid_var`], [`sum_softplus`]) describe the distribution the
//! sampler actually draws from and serve as the reference the smooth family
//! is measured against.

use std::fmt;

use crate::error::{Error, Result};

/// Above this magnitude of `k·x` the softplus branches switch to their
/// asymptotic forms; the discarded term is below `e^-30 ≈ 1e-13`.
pub const SOFTPLUS_SWITCH: f64 = 30.0;

/// The unit function `g` of an activation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Sigmoid,
}

impl UnitKind {
    pub fn code(self) -> u8 {
        match self {
            UnitKind::Sigmoid => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(UnitKind::Sigmoid),
            _ => None,
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

/// A multinary unit family: values `0..=n_levels`, mean `n_levels·g(scale·x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    n_levels: u32,
    scale: f64,
    unit: UnitKind,
}

impl ActivationSpec {
    pub fn new(n_levels: u32, scale: f64, unit: UnitKind) -> Result<Self> {
        if n_levels == 0 {
            return Err(Error::InvalidArgument("n_levels must be at least 1".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must be a positive finite number, got {scale}"
            )));
        }
        Ok(ActivationSpec {
            n_levels,
            scale,
            unit,
        })
    }

    /// Sigmoid unit with the given level count and scale.
    pub fn sigmoid(n_levels: u32, scale: f64) -> Result<Self> {
        Self::new(n_levels, scale, UnitKind::Sigmoid)
    }

    /// The ordinary binary unit: `N = 1`, `k = 1`, `g = σ`.
    pub fn binary() -> Self {
        ActivationSpec {
            n_levels: 1,
            scale: 1.0,
            unit: UnitKind::Sigmoid,
        }
    }

    pub fn n_levels(&self) -> u32 {
        self.n_levels
    }

    /// `N` as a float.
    pub fn max_value(&self) -> f64 {
        f64::from(self.n_levels)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn unit(&self) -> UnitKind {
        self.unit
    }

    pub fn is_binary(&self) -> bool {
        self.n_levels == 1
    }

    /// Mean activity `f(x)`.
    #[inline]
    pub fn mean(&self, x: f64) -> f64 {
        f_mean(self, x)
    }

    /// Variance `f'(x)`.
    #[inline]
    pub fn variance(&self, x: f64) -> f64 {
        f_variance(self, x)
    }

    /// Antiderivative of `f`, vanishing at `-∞`.
    #[inline]
    pub fn integral(&self, x: f64) -> f64 {
        f_integral(self, x)
    }

    /// `f⁻¹(y)` for `y ∈ (0, N)`.
    pub fn inverse(&self, y: f64) -> f64 {
        match self.unit {
            UnitKind::Sigmoid => logit(y / self.max_value()) / self.scale,
        }
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(N={}, k={})", self.unit, self.n_levels, self.scale)
    }
}

/// Logistic sigmoid, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_SWITCH {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `f(x) = N·g(k·x)`.
#[inline]
pub fn f_mean(spec: &ActivationSpec, x: f64) -> f64 {
    match spec.unit {
        UnitKind::Sigmoid => spec.max_value() * sigmoid(spec.scale * x),
    }
}

/// `f'(x) = N·k·g'(k·x)`, which is also the variance the smooth family
/// attributes to a unit with pre-activation `x`.
#[inline]
pub fn f_variance(spec: &ActivationSpec, x: f64) -> f64 {
    match spec.unit {
        UnitKind::Sigmoid => {
            let s = sigmoid(spec.scale * x);
            spec.max_value() * spec.scale * s * (1.0 - s)
        }
    }
}

/// `∫_{-∞}^x f`. For sigmoid units this is `(N/k)·softplus(k·x)`.
#[inline]
pub fn f_integral(spec: &ActivationSpec, x: f64) -> f64 {
    match spec.unit {
        UnitKind::Sigmoid => {
            let n = spec.max_value();
            let kx = spec.scale * x;
            if kx > SOFTPLUS_SWITCH {
                n * x + n / spec.scale * softplus(-kx)
            } else {
                n / spec.scale * softplus(kx)
            }
        }
    }
}

/// Per-copy offset biases `o_1 < … < o_N` of a multinary unit.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetVector(Vec<f64>);

impl OffsetVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl std::ops::Deref for OffsetVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `o_n = f⁻¹(n − ½)` for `n = 1..=N`.
pub fn offsets(spec: &ActivationSpec) -> OffsetVector {
    let n_levels = spec.max_value();
    let k = spec.scale;
    let o = (1..=spec.n_levels)
        .map(|n| {
            let n = f64::from(n);
            match spec.unit {
                // Written as a ratio of the two half-integer distances so the
                // sequence is exactly antisymmetric about N/2.
                UnitKind::Sigmoid => ((n - 0.5) / (n_levels - n + 0.5)).ln() / k,
            }
        })
        .collect();
    OffsetVector(o)
}

/// Exact copy-model mean `Σ_n σ(x − o_n)`.
pub fn sum_sigmoid_mean(offsets: &[f64], x: f64) -> f64 {
    offsets.iter().map(|&o| sigmoid(x - o)).sum()
}

/// Exact copy-model variance `Σ_n σ(x − o_n)(1 − σ(x − o_n))`.
pub fn sum_sigmoid_var(offsets: &[f64], x: f64) -> f64 {
    offsets
        .iter()
        .map(|&o| {
            let s = sigmoid(x - o);
            s * (1.0 - s)
        })
        .sum()
}

/// Exact copy-model hidden free-energy term `Σ_n softplus(x − o_n)`.
pub fn sum_softplus(offsets: &[f64], x: f64) -> f64 {
    offsets.iter().map(|&o| softplus(x - o)).sum()
}

/// Largest absolute difference between two functions on an evenly spaced grid.
pub fn sup_gap(lo: f64, hi: f64, points: usize, a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64) -> f64 {
    assert!(points >= 2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = lo + step * i as f64;
            (a(x) - b(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Measured sup-norm gaps between the smooth family and the exact copy sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationGap {
    pub n_levels: u32,
    /// `sup |Σσ(x − o_n) − f(x)|`.
    pub mean: f64,
    /// `sup |Σσ(x − o_n)(1 − σ(x − o_n)) − f'(x)|`.
    pub variance: f64,
    /// `sup |Σ softplus(x − o_n) − ∫f|`.
    pub integral: f64,
}

/// Measures the approximation gaps of `spec` over `[lo, hi]`.
pub fn approximation_gap(spec: &ActivationSpec, lo: f64, hi: f64, points: usize) -> ApproximationGap {
    let o = offsets(spec);
    ApproximationGap {
        n_levels: spec.n_levels,
        mean: sup_gap(lo, hi, points, |x| sum_sigmoid_mean(&o, x), |x| f_mean(spec, x)),
        variance: sup_gap(lo, hi, points, |x| sum_sigmoid_var(&o, x), |x| f_variance(spec, x)),
        integral: sup_gap(lo, hi, points, |x| sum_softplus(&o, x), |x| f_integral(spec, x)),
    }
}
