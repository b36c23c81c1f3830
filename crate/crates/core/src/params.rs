//! Parameter containers for a single dense RBM layer.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};

/// One dense RBM layer.
///
/// `visible_bias` has length `V`, `hidden_bias` length `H` and `weights` is
/// `V × H`. Visible vectors are row vectors, so hidden pre-activations are
/// `b + v·W` and visible pre-activations are `a + h·Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub weights: Array2<f64>,
    pub visible_spec: ActivationSpec,
    pub hidden_spec: ActivationSpec,
}

impl RbmParams {
    /// Builds a layer from explicit tensors, rejecting inconsistent shapes or
    /// non-finite entries.
    pub fn new(
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        weights: Array2<f64>,
        visible_spec: ActivationSpec,
        hidden_spec: ActivationSpec,
    ) -> Result<Self> {
        let params = RbmParams {
            visible_bias,
            hidden_bias,
            weights,
            visible_spec,
            hidden_spec,
        };
        match validate(&params) {
            Ok(()) => Ok(params),
            Err(v) => Err(Error::Invalid(v)),
        }
    }

    /// All-zero layer of the given size.
    pub fn zeros(visible: usize, hidden: usize, visible_spec: ActivationSpec, hidden_spec: ActivationSpec) -> Self {
        RbmParams {
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
            weights: Array2::zeros((visible, hidden)),
            visible_spec,
            hidden_spec,
        }
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.visible_bias.len() + self.hidden_bias.len() + self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads parameter `index` in the flat order `a`, `b`, `W` (row-major).
    pub fn get_flat(&self, index: usize) -> f64 {
        let (na, nb) = (self.visible_bias.len(), self.hidden_bias.len());
        if index < na {
            self.visible_bias[index]
        } else if index < na + nb {
            self.hidden_bias[index - na]
        } else {
            let k = index - na - nb;
            self.weights[(k / self.n_hidden(), k % self.n_hidden())]
        }
    }

    /// Writes parameter `index` in the flat order of [`RbmParams::get_flat`].
    pub fn set_flat(&mut self, index: usize, value: f64) {
        let (na, nb) = (self.visible_bias.len(), self.hidden_bias.len());
        if index < na {
            self.visible_bias[index] = value;
        } else if index < na + nb {
            self.hidden_bias[index - na] = value;
        } else {
            let k = index - na - nb;
            let h = self.n_hidden();
            self.weights[(k / h, k % h)] = value;
        }
    }
}

/// Gradients with respect to `(a, b, W)` of some scalar objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_visible_bias: Array1<f64>,
    pub d_hidden_bias: Array1<f64>,
    pub d_weights: Array2<f64>,
}

impl GradientSet {
    pub fn zeros(visible: usize, hidden: usize) -> Self {
        GradientSet {
            d_visible_bias: Array1::zeros(visible),
            d_hidden_bias: Array1::zeros(hidden),
            d_weights: Array2::zeros((visible, hidden)),
        }
    }

    pub fn zeros_like(params: &RbmParams) -> Self {
        Self::zeros(params.n_visible(), params.n_hidden())
    }

    pub fn len(&self) -> usize {
        self.d_visible_bias.len() + self.d_hidden_bias.len() + self.d_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All entries in the flat order `a`, `b`, `W` (row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.d_visible_bias
            .iter()
            .chain(self.d_hidden_bias.iter())
            .chain(self.d_weights.iter())
            .copied()
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_visible_bias *= factor;
        self.d_hidden_bias *= factor;
        self.d_weights *= factor;
    }

    pub fn negated(&self) -> Self {
        let mut g = self.clone();
        g.scale(-1.0);
        g
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn matches(&self, params: &RbmParams) -> bool {
        self.d_visible_bias.len() == params.n_visible()
            && self.d_hidden_bias.len() == params.n_hidden()
            && self.d_weights.dim() == params.weights.dim()
    }
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Two tensors disagree on a shared dimension.
    Shape { tensor: &'static str, other: &'static str, detail: String },
    /// A tensor has a zero-sized dimension.
    Empty { tensor: &'static str },
    /// A non-finite entry; `index` is the flat row-major index within the tensor.
    NonFinite { tensor: &'static str, index: usize, value: f64 },
    /// A structural parameter outside its legal range.
    Range { what: &'static str, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { tensor, other, detail } => write!(f, "shape of {tensor} inconsistent with {other}: {detail}"),
            Violation::Empty { tensor } => write!(f, "{tensor} has a zero dimension"),
            Violation::NonFinite { tensor, index, value } => write!(f, "{tensor}[{index}] is not finite ({value})"),
            Violation::Range { what, detail } => write!(f, "{what} out of range: {detail}"),
        }
    }
}

pub(crate) fn finiteness<'a>(tensor: &'static str, values: impl Iterator<Item = &'a f64>, out: &mut Vec<Violation>) {
    out.extend(values.enumerate().filter(|(_, v)| !v.is_finite()).map(|(index, &value)| Violation::NonFinite {
        tensor,
        index,
        value,
    }));
}

/// Reports every shape and finiteness problem in `params`.
pub fn validate(params: &RbmParams) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let (rows, cols) = params.weights.dim();
    if params.visible_bias.len() != rows {
        out.push(Violation::Shape {
            tensor: "visible_bias",
            other: "weights",
            detail: format!("len(a)={} but W has {rows} rows", params.visible_bias.len()),
        });
    }
    if params.hidden_bias.len() != cols {
        out.push(Violation::Shape {
            tensor: "hidden_bias",
            other: "weights",
            detail: format!("len(b)={} but W has {cols} columns", params.hidden_bias.len()),
        });
    }
    if rows == 0 || cols == 0 {
        out.push(Violation::Empty { tensor: "weights" });
    }
    finiteness("visible_bias", params.visible_bias.iter(), &mut out);
    finiteness("hidden_bias", params.hidden_bias.iter(), &mut out);
    finiteness("weights", params.weights.iter(), &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Standard deviation of the initial weights: `0.01 / (k_h · N_v)`.
///
/// With visible values spanning `0..=N_v`, this keeps the initial hidden
/// pre-activations within a few units of zero, where `g` is not saturated.
pub fn init_weight_std(visible_spec: &ActivationSpec, hidden_spec: &ActivationSpec) -> f64 {
    0.01 / (hidden_spec.scale() * visible_spec.max_value())
}

/// Zero biases and i.i.d. Gaussian weights; a pure function of its arguments.
pub fn init_params(visible: usize, hidden: usize, visible_spec: ActivationSpec, hidden_spec: ActivationSpec, seed: u64) -> Result<RbmParams> {
    if visible == 0 || hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer dimensions must be positive, got {visible}×{hidden}"
        )));
    }
    let std = init_weight_std(&visible_spec, &hidden_spec);
    let normal = Normal::new(0.0, std).expect("positive finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array2::from_shape_simple_fn((visible, hidden), || normal.sample(&mut rng));
    Ok(RbmParams {
        visible_bias: Array1::zeros(visible),
        hidden_bias: Array1::zeros(hidden),
        weights,
        visible_spec,
        hidden_spec,
    })
}
