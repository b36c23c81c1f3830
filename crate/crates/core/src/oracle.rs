//! Exact quantities for tiny models, by enumeration.
//!
//! The visible layer must be binary so that the `2^V` visible states can be
//! listed; the hidden layer may be multinary because the free energy
//! marginalises it in closed form over the exact copy model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::activation::{offsets, sigmoid, softplus, sum_sigmoid_mean, sum_softplus};
use crate::error::{Error, Result};
use crate::params::{GradientSet, RbmParams};

/// Largest visible layer the enumeration accepts.
pub const MAX_ENUM_VISIBLE: usize = 20;
/// Largest hidden layer [`free_energy_by_enumeration`] accepts.
pub const MAX_ENUM_HIDDEN: usize = 20;

/// Exact log partition function and per-sample log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactModelReport {
    pub log_partition: f64,
    pub log_likelihoods: Vec<f64>,
    pub mean_log_likelihood: f64,
}

fn check_len(what: &str, x: &ArrayView1<'_, f64>, expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Shape(format!("{what} has length {}, expected {expected}", x.len())));
    }
    Ok(())
}

fn check_binary(what: &str, x: &ArrayView1<'_, f64>) -> Result<()> {
    if let Some((i, &bad)) = x.iter().enumerate().find(|(_, &x)| x != 0.0 && x != 1.0) {
        return Err(Error::OutOfRange(format!("{what}[{i}] = {bad} is not binary")));
    }
    Ok(())
}

fn check_visible_range(params: &RbmParams, v: &ArrayView1<'_, f64>) -> Result<()> {
    check_len("visible vector", v, params.n_visible())?;
    let n = params.visible_spec.max_value();
    if let Some((i, &bad)) = v.iter().enumerate().find(|(_, &x)| !(0.0..=n).contains(&x)) {
        return Err(Error::OutOfRange(format!("v[{i}] = {bad} outside [0, {n}]")));
    }
    Ok(())
}

/// `E(v, h) = −a·vᵀ − b·hᵀ − v·W·hᵀ` for binary `v` and `h`.
pub fn energy(params: &RbmParams, v: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>) -> Result<f64> {
    if !params.visible_spec.is_binary() || !params.hidden_spec.is_binary() {
        return Err(Error::InvalidArgument("energy is defined here for binary layers only".into()));
    }
    check_len("visible vector", &v, params.n_visible())?;
    check_len("hidden vector", &h, params.n_hidden())?;
    check_binary("v", &v)?;
    check_binary("h", &h)?;
    Ok(-params.visible_bias.dot(&v) - params.hidden_bias.dot(&h) - v.dot(&params.weights).dot(&h))
}

/// Exact free energy `−a·vᵀ − Σ_j Σ_n softplus(x_j − o_n)` of the copy model.
pub fn free_energy(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<f64> {
    check_visible_range(params, &v)?;
    let o = offsets(&params.hidden_spec);
    let x = v.dot(&params.weights) + &params.hidden_bias;
    Ok(-params.visible_bias.dot(&v) - x.iter().map(|&x| sum_softplus(&o, x)).sum::<f64>())
}

/// Smooth free energy `−a·vᵀ − Σ_j ∫^{x_j} f`, the form training minimises.
pub fn free_energy_integral(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<f64> {
    check_visible_range(params, &v)?;
    let x = v.dot(&params.weights) + &params.hidden_bias;
    Ok(-params.visible_bias.dot(&v) - x.iter().map(|&x| params.hidden_spec.integral(x)).sum::<f64>())
}

/// `−log Σ_h exp(−E(v, h))` by listing all `2^H` binary hidden states.
pub fn free_energy_by_enumeration(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<f64> {
    let h_count = params.n_hidden();
    if h_count > MAX_ENUM_HIDDEN {
        return Err(Error::TooLarge(format!("H = {h_count} exceeds {MAX_ENUM_HIDDEN}")));
    }
    let energies = BinaryStates::new(h_count)
        .map(|h| energy(params, v, h.view()).map(|e| -e))
        .collect::<Result<Vec<_>>>()?;
    Ok(-log_sum_exp(&energies))
}

/// Sequential, max-shifted `log Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// All binary vectors of a given length, in counting order: state `s` has
/// `v_i = (s >> i) & 1`.
#[derive(Debug, Clone)]
pub struct BinaryStates {
    len: usize,
    next: u64,
    end: u64,
}

impl BinaryStates {
    pub fn new(len: usize) -> Self {
        assert!(len < 64);
        BinaryStates { len, next: 0, end: 1u64 << len }
    }
}

impl Iterator for BinaryStates {
    type Item = Array1<f64>;

    fn next(&mut self) -> Option<Array1<f64>> {
        if self.next == self.end {
            return None;
        }
        let s = self.next;
        self.next += 1;
        Some(state_vector(s, self.len))
    }
}

/// The binary vector of state index `s`.
pub fn state_vector(s: u64, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |i| ((s >> i) & 1) as f64)
}

/// The state index of a binary vector.
pub fn state_index(v: ArrayView1<'_, f64>) -> u64 {
    v.iter().enumerate().fold(0, |acc, (i, &x)| acc | (u64::from(x != 0.0) << i))
}

fn check_enumerable(params: &RbmParams) -> Result<()> {
    if !params.visible_spec.is_binary() {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration needs a binary visible layer, got N_v = {}",
            params.visible_spec.n_levels()
        )));
    }
    if params.n_visible() > MAX_ENUM_VISIBLE {
        return Err(Error::TooLarge(format!(
            "V = {} exceeds the enumeration limit {MAX_ENUM_VISIBLE}",
            params.n_visible()
        )));
    }
    Ok(())
}

/// Negative free energy of every visible state, in [`BinaryStates`] order.
fn neg_free_energies(params: &RbmParams) -> Result<Vec<f64>> {
    check_enumerable(params)?;
    BinaryStates::new(params.n_visible())
        .map(|v| free_energy(params, v.view()).map(|f| -f))
        .collect()
}

/// `log Z = log Σ_v exp(−F(v))` over all binary visible states.
pub fn log_partition_exact(params: &RbmParams) -> Result<f64> {
    Ok(log_sum_exp(&neg_free_energies(params)?))
}

/// Model probability of every visible state, in [`BinaryStates`] order.
pub fn visible_distribution(params: &RbmParams) -> Result<Vec<f64>> {
    let neg_f = neg_free_energies(params)?;
    let log_z = log_sum_exp(&neg_f);
    Ok(neg_f.into_iter().map(|x| (x - log_z).exp()).collect())
}

/// `log p(v) = −F(v) − log Z` for every row of `data`.
pub fn log_likelihood_exact(params: &RbmParams, data: ArrayView2<'_, f64>) -> Result<ExactModelReport> {
    let log_partition = log_partition_exact(params)?;
    let log_likelihoods = data
        .rows()
        .into_iter()
        .map(|v| {
            check_binary("v", &v)?;
            free_energy(params, v).map(|f| -f - log_partition)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_log_likelihood = if log_likelihoods.is_empty() {
        0.0
    } else {
        log_likelihoods.iter().sum::<f64>() / log_likelihoods.len() as f64
    };
    Ok(ExactModelReport {
        log_partition,
        log_likelihoods,
        mean_log_likelihood,
    })
}

/// Sufficient statistics `(v, s, vᵀs)` with `s_j = Σ_n σ(x_j − o_n)`, i.e. `−∇F(v)`.
fn neg_free_energy_gradient(params: &RbmParams, o: &[f64], v: ArrayView1<'_, f64>, weight: f64, acc: &mut GradientSet) {
    let x = v.dot(&params.weights) + &params.hidden_bias;
    let s = x.mapv(|x| sum_sigmoid_mean(o, x));
    acc.d_visible_bias.scaled_add(weight, &v);
    acc.d_hidden_bias.scaled_add(weight, &s);
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            acc.d_weights.row_mut(i).scaled_add(weight * vi, &s);
        }
    }
}

/// Exact gradient of the mean log-likelihood of `data`:
/// `mean_data(−∇F) − E_model(−∇F)`.
pub fn exact_loglik_gradient(params: &RbmParams, data: ArrayView2<'_, f64>) -> Result<GradientSet> {
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let probs = visible_distribution(params)?;
    let o = offsets(&params.hidden_spec);
    let mut grad = GradientSet::zeros_like(params);
    let w = 1.0 / data.nrows() as f64;
    for v in data.rows() {
        check_visible_range(params, &v)?;
        check_binary("v", &v)?;
        neg_free_energy_gradient(params, &o, v, w, &mut grad);
    }
    for (v, p) in BinaryStates::new(params.n_visible()).zip(probs) {
        neg_free_energy_gradient(params, &o, v.view(), -p, &mut grad);
    }
    Ok(grad)
}

/// Exact conditional mean of a stochastic reconstruction of binary `v`:
/// `E[v′ | v] = Σ_h p(h | v) f_v(a + h·Wᵀ)` over all binary hidden states.
pub fn expected_stochastic_reconstruction(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if !params.hidden_spec.is_binary() || params.n_hidden() > MAX_ENUM_HIDDEN {
        return Err(Error::InvalidArgument("needs a small binary hidden layer".into()));
    }
    check_visible_range(params, &v)?;
    let p_on = (v.dot(&params.weights) + &params.hidden_bias).mapv(sigmoid);
    let mut out = Array1::zeros(params.n_visible());
    for h in BinaryStates::new(params.n_hidden()) {
        let p: f64 = h.iter().zip(&p_on).map(|(&h, &q)| if h == 1.0 { q } else { 1.0 - q }).product();
        let mean = (h.dot(&params.weights.t()) + &params.visible_bias).mapv(|x| params.visible_spec.mean(x));
        out.scaled_add(p, &mean);
    }
    Ok(out)
}

/// Total-variation distance between two distributions over the same states.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Per-unit `log(1 + e^x)` summed, the binary hidden free-energy term.
pub fn binary_hidden_term(x: &Array1<f64>) -> f64 {
    x.iter().map(|&x| softplus(x)).sum()
}

/// Empirical distribution of rows of binary `samples` over `2^len` states.
pub fn empirical_distribution(samples: ArrayView2<'_, f64>) -> Vec<f64> {
    let mut counts = vec![0.0; 1 << samples.ncols()];
    for row in samples.rows() {
        counts[state_index(row) as usize] += 1.0;
    }
    let n = samples.nrows() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Every visible state paired with its exact model probability.
pub fn weighted_states(params: &RbmParams) -> Result<(Array2<f64>, Vec<f64>)> {
    let probs = visible_distribution(params)?;
    let v = params.n_visible();
    let states = Array2::from_shape_fn((1 << v, v), |(s, i)| ((s >> i) & 1) as f64);
    Ok((states, probs))
}

/// `|a − b| / max(|a|, |b|)`, zero when the two are equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Fourth-order central difference of `f` at `x` with step `h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}
