//! Conditional means, copy-model sampling and Gibbs chains.
//!
//! A multinary unit with pre-activation `x` is sampled exactly as the sum of
//! its `N` binary copies, copy `n` being on with probability `σ(x − o_n)`.
//! The mean-field functions use the smooth activation `f` instead. The two
//! agree exactly for binary units; for `N > 1` the gap is the approximation
//! error measured by [`crate::activation::approximation_gap`].
//!
//! Every stochastic function is a pure function of its inputs and an
//! [`RngStream`]. Batched sampling gives row `i` its own stream
//! [`RngStream::fork(i)`](RngStream::fork), so results do not depend on how
//! rows are scheduled.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::{offsets, sigmoid, ActivationSpec};
use crate::error::{Error, Result};
use crate::layer::RbmLayer;
use crate::stack::DbnModel;

/// A seeded, splittable random stream.
///
/// Identical `(seed, stream_id)` pairs produce identical draws. Distinct
/// stream ids select distinct ChaCha streams under the same key.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream `index` of this stream, independent of how much of the
    /// parent has been consumed.
    pub fn fork(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(self.stream_id)), index)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// How integer unit values are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMethod {
    /// Sum of `N` Bernoulli copies with their offset biases. Exact.
    #[default]
    Copies,
    /// `round(clip(𝒩(f(x), f'(x)), 0, N))`. Approximate, `O(1)` per unit.
    Gaussian,
}

/// Gibbs update style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GibbsMode {
    /// Propagate expectations without sampling.
    #[default]
    MeanField,
    /// Sample both directions.
    Stochastic,
}

/// Applies the mean activation of `spec` elementwise.
pub fn apply_mean(spec: &ActivationSpec, mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|x| spec.mean(x));
    x
}

/// `f_h(b + v·W)` for each row of `v`.
pub fn hidden_mean<L: RbmLayer + ?Sized>(layer: &L, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(apply_mean(layer.hidden_spec(), layer.hidden_input(v)?))
}

/// `f_v(a + h·Wᵀ)` for each row of `h`.
pub fn visible_mean<L: RbmLayer + ?Sized>(layer: &L, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(apply_mean(layer.visible_spec(), layer.visible_input(h)?))
}

/// Precomputed per-unit sampler for one activation family.
#[derive(Debug, Clone)]
pub struct UnitSampler {
    spec: ActivationSpec,
    offsets: Vec<f64>,
    method: SampleMethod,
}

impl UnitSampler {
    pub fn new(spec: ActivationSpec, method: SampleMethod) -> Self {
        UnitSampler {
            spec,
            offsets: offsets(&spec).as_slice().to_vec(),
            method,
        }
    }

    /// Draws one unit value given its pre-activation.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        match self.method {
            SampleMethod::Copies => {
                let mut count = 0u32;
                for &o in &self.offsets {
                    if rng.random::<f64>() < sigmoid(x - o) {
                        count += 1;
                    }
                }
                f64::from(count)
            }
            SampleMethod::Gaussian => {
                let mean = self.spec.mean(x);
                let std = self.spec.variance(x).sqrt();
                let draw = if std > 0.0 {
                    Normal::new(mean, std).map(|n| n.sample(rng)).unwrap_or(mean)
                } else {
                    mean
                };
                draw.clamp(0.0, self.spec.max_value()).round()
            }
        }
    }

    /// Draws a whole row in place.
    pub fn draw_row<R: Rng + ?Sized>(&self, mut row: ndarray::ArrayViewMut1<'_, f64>, rng: &mut R) {
        row.mapv_inplace(|x| self.draw(x, rng));
    }
}

fn sample_batch(sampler: &UnitSampler, mut x: Array2<f64>, rng: &RngStream) -> Array2<f64> {
    for (i, row) in x.rows_mut().into_iter().enumerate() {
        let mut r = rng.fork(i as u64);
        sampler.draw_row(row, &mut r);
    }
    x
}

/// Samples hidden unit values in `{0..N_h}` for each row of `v`.
pub fn sample_hidden<L: RbmLayer + ?Sized>(layer: &L, v: ArrayView2<'_, f64>, rng: &RngStream) -> Result<Array2<f64>> {
    sample_hidden_with(layer, v, SampleMethod::Copies, rng)
}

pub fn sample_hidden_with<L: RbmLayer + ?Sized>(
    layer: &L,
    v: ArrayView2<'_, f64>,
    method: SampleMethod,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    let sampler = UnitSampler::new(*layer.hidden_spec(), method);
    Ok(sample_batch(&sampler, layer.hidden_input(v)?, rng))
}

/// Samples visible unit values in `{0..N_v}` for each row of `h`.
pub fn sample_visible<L: RbmLayer + ?Sized>(layer: &L, h: ArrayView2<'_, f64>, rng: &RngStream) -> Result<Array2<f64>> {
    sample_visible_with(layer, h, SampleMethod::Copies, rng)
}

pub fn sample_visible_with<L: RbmLayer + ?Sized>(
    layer: &L,
    h: ArrayView2<'_, f64>,
    method: SampleMethod,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    let sampler = UnitSampler::new(*layer.visible_spec(), method);
    Ok(sample_batch(&sampler, layer.visible_input(h)?, rng))
}

/// A single Gibbs chain `v → h → v′ → …` that can be stepped and observed.
pub struct GibbsChain<'a, L: RbmLayer + ?Sized> {
    layer: &'a L,
    mode: GibbsMode,
    hidden: UnitSampler,
    visible: UnitSampler,
    state: Array2<f64>,
    rng: RngStream,
}

impl<'a, L: RbmLayer + ?Sized> GibbsChain<'a, L> {
    pub fn new(layer: &'a L, v0: ArrayView1<'_, f64>, mode: GibbsMode, method: SampleMethod, rng: RngStream) -> Result<Self> {
        if v0.len() != layer.n_visible() {
            return Err(Error::Shape(format!(
                "initial state has length {}, layer expects {}",
                v0.len(),
                layer.n_visible()
            )));
        }
        Ok(GibbsChain {
            layer,
            mode,
            hidden: UnitSampler::new(*layer.hidden_spec(), method),
            visible: UnitSampler::new(*layer.visible_spec(), method),
            state: v0.to_owned().insert_axis(ndarray::Axis(0)),
            rng,
        })
    }

    /// One full `v → h → v′` update; returns the hidden layer used.
    pub fn step(&mut self) -> Result<Array1<f64>> {
        let mut h = self.layer.hidden_input(self.state.view())?;
        match self.mode {
            GibbsMode::MeanField => h.mapv_inplace(|x| self.hidden.spec.mean(x)),
            GibbsMode::Stochastic => self.hidden.draw_row(h.row_mut(0), &mut self.rng),
        }
        let mut v = self.layer.visible_input(h.view())?;
        match self.mode {
            GibbsMode::MeanField => v.mapv_inplace(|x| self.visible.spec.mean(x)),
            GibbsMode::Stochastic => self.visible.draw_row(v.row_mut(0), &mut self.rng),
        }
        self.state = v;
        Ok(h.row(0).to_owned())
    }

    pub fn state(&self) -> ArrayView1<'_, f64> {
        self.state.row(0)
    }

    pub fn into_state(self) -> Array1<f64> {
        self.state.row(0).to_owned()
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }
}

/// Runs `steps` Gibbs updates from each row of `v0` and returns the final
/// visible states. Row `i` uses stream `rng.fork(i)`.
pub fn gibbs_chain<L: RbmLayer + ?Sized>(
    layer: &L,
    v0: ArrayView2<'_, f64>,
    steps: usize,
    mode: GibbsMode,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("a Gibbs chain needs at least one step".into()));
    }
    let mut out = Array2::zeros((v0.nrows(), layer.n_visible()));
    for (i, (row, mut dst)) in v0.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let mut chain = GibbsChain::new(layer, row, mode, SampleMethod::Copies, rng.fork(i as u64))?;
        for _ in 0..steps {
            chain.step()?;
        }
        dst.assign(&chain.state());
    }
    Ok(out)
}

/// Draws `count` samples from a stack.
///
/// Each sample starts the top layer from uniformly random integer visible
/// values, runs `steps` stochastic Gibbs updates there, draws one hidden
/// state from the result and takes the visible mean. That mean is then passed
/// down through the lower layers with [`visible_mean`], treating each lower
/// layer's hidden units as the visible units of the layer above. The output
/// rows are real-valued pixels in `[0, N_v]` of the bottom layer.
pub fn generate(model: &DbnModel, steps: usize, count: usize, rng: &RngStream) -> Result<Array2<f64>> {
    model.validate().map_err(Error::Invalid)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("generation needs at least one Gibbs step".into()));
    }
    let layers = model.layers();
    let top = layers.last().expect("validated model has layers");
    let n_top = top.n_visible();
    let levels = top.visible_spec().n_levels();
    let hidden = UnitSampler::new(*top.hidden_spec(), SampleMethod::Copies);

    let mut samples = Array2::zeros((count, n_top));
    for (i, mut dst) in samples.rows_mut().into_iter().enumerate() {
        let mut stream = rng.fork(i as u64);
        let v0 = Array1::from_shape_simple_fn(n_top, || f64::from(stream.random_range(0..=levels)));
        let mut chain = GibbsChain::new(top, v0.view(), GibbsMode::Stochastic, SampleMethod::Copies, stream)?;
        for _ in 0..steps {
            chain.step()?;
        }
        let mut h = top.hidden_input(chain.state().insert_axis(ndarray::Axis(0)))?;
        hidden.draw_row(h.row_mut(0), chain.rng_mut());
        dst.assign(&visible_mean(top, h.view())?.row(0));
    }
    for layer in layers[..layers.len() - 1].iter().rev() {
        samples = visible_mean(layer, samples.view())?;
    }
    Ok(samples)
}

/// Empirical per-unit mean and variance of `draws` repeated samples.
pub fn moment_estimate(draws: usize, mut sample: impl FnMut(u64) -> Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let first = sample(0);
    let mut sum = first.clone();
    let mut sq = first.mapv(|x| x * x);
    for i in 1..draws as u64 {
        let s = sample(i);
        Zip::from(&mut sum).and(&mut sq).and(&s).for_each(|a, b, &x| {
            *a += x;
            *b += x * x;
        });
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = Zip::from(&sq).and(&mean).map_collect(|&q, &m| (q / n - m * m) * n / (n - 1.0));
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{sum_sigmoid_mean, sum_sigmoid_var};
    use crate::params::RbmParams;
    use ndarray::{arr1, arr2, Array2};

    fn spec(n: u32) -> ActivationSpec {
        ActivationSpec::sigmoid(n, 1.0).unwrap()
    }

    #[test]
    fn rng_stream_is_reproducible() {
        let mut a = RngStream::new(5, 9);
        let mut b = RngStream::new(5, 9);
        let mut c = RngStream::new(5, 10);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        let mut f1 = a.fork(3);
        let mut f2 = RngStream::new(5, 9).fork(3);
        assert_eq!(f1.next_u64(), f2.next_u64());
    }

    #[test]
    fn hidden_mean_zero_params() {
        let p = RbmParams::zeros(4, 3, spec(255), spec(255));
        let m = hidden_mean(&p, Array2::from_elem((2, 4), 17.0).view()).unwrap();
        assert!(m.iter().all(|&x| x == 127.5));
    }

    #[test]
    fn hidden_mean_binary_balanced_input() {
        let mut p = RbmParams::zeros(2, 1, spec(1), spec(1));
        p.weights = arr2(&[[1.0], [-1.0]]);
        let m = hidden_mean(&p, arr2(&[[1.0, 1.0]]).view()).unwrap();
        assert_eq!(m[(0, 0)], 0.5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = RbmParams::zeros(4, 3, spec(1), spec(1));
        assert!(matches!(hidden_mean(&p, Array2::zeros((1, 5)).view()), Err(Error::Shape(_))));
        assert!(matches!(visible_mean(&p, Array2::zeros((1, 4)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn visible_mean_zero_params() {
        let p = RbmParams::zeros(5, 2, spec(255), spec(255));
        let m = visible_mean(&p, Array2::from_elem((1, 2), 3.0).view()).unwrap();
        assert!(m.iter().all(|&x| x == 127.5));
    }

    #[test]
    fn visible_mean_single_unit_is_sigmoid() {
        let mut p = RbmParams::zeros(1, 1, spec(1), spec(1));
        p.weights[(0, 0)] = 0.8;
        p.visible_bias[0] = -0.3;
        let m = visible_mean(&p, arr2(&[[1.0]]).view()).unwrap();
        assert_eq!(m[(0, 0)], sigmoid(0.5));
    }

    #[test]
    fn very_negative_input_never_fires() {
        let mut p = RbmParams::zeros(1, 3, spec(1), spec(255));
        p.hidden_bias.fill(-500.0);
        let rng = RngStream::new(1, 0);
        let h = sample_hidden(&p, Array2::zeros((64, 1)).view(), &rng).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn binary_copy_sampling_matches_mean() {
        let mut p = RbmParams::zeros(2, 3, spec(1), spec(1));
        p.weights = arr2(&[[0.5, -1.0, 2.0], [0.3, 0.2, -0.7]]);
        p.hidden_bias = arr1(&[0.1, 0.0, -0.4]);
        let v = arr2(&[[1.0, 0.0]]);
        let expected = hidden_mean(&p, v.view()).unwrap();
        let rng = RngStream::new(11, 0);
        let draws = 100_000;
        let (mean, var) = moment_estimate(draws, |i| sample_hidden(&p, v.view(), &rng.fork(i)).unwrap().row(0).to_owned());
        for j in 0..3 {
            let stderr = (var[j] / draws as f64).sqrt();
            assert!((mean[j] - expected[(0, j)]).abs() <= 4.0 * stderr, "unit {j}");
        }
    }

    #[test]
    fn multinary_copy_sampling_matches_copy_moments() {
        // For N > 1 the copy model's moments are the sigmoid sums, not f / f'.
        let s = spec(255);
        let o = offsets(&s);
        let mut p = RbmParams::zeros(1, 5, spec(1), s);
        p.hidden_bias = arr1(&[-2.0, -1.0, 0.0, 0.7, 2.0]);
        let v = arr2(&[[0.0]]);
        let rng = RngStream::new(3, 1);
        let draws = 100_000;
        let (mean, var) = moment_estimate(draws, |i| sample_hidden(&p, v.view(), &rng.fork(i)).unwrap().row(0).to_owned());
        for (j, &x) in p.hidden_bias.iter().enumerate() {
            let m = sum_sigmoid_mean(&o, x);
            let sv = sum_sigmoid_var(&o, x);
            let stderr = (var[j] / draws as f64).sqrt();
            assert!((mean[j] - m).abs() <= 4.0 * stderr, "mean x={x}: {} vs {m}", mean[j]);
            // Sample variance of a sum of Bernoullis; its standard error is
            // below 1% of the variance at 10^5 draws.
            assert!((var[j] - sv).abs() / sv < 0.03, "var x={x}: {} vs {sv}", var[j]);
        }
    }

    #[test]
    fn gaussian_sampling_stays_in_range() {
        let mut p = RbmParams::zeros(1, 4, spec(1), spec(255));
        p.hidden_bias = arr1(&[-8.0, -0.5, 0.5, 8.0]);
        let rng = RngStream::new(4, 0);
        let h = sample_hidden_with(&p, Array2::zeros((500, 1)).view(), SampleMethod::Gaussian, &rng).unwrap();
        assert!(h.iter().all(|&x| (0.0..=255.0).contains(&x) && x.fract() == 0.0));
        let col_mean = h.column(3).mean().unwrap();
        assert!(col_mean > 250.0);
    }

    #[test]
    fn one_mean_field_step_is_reconstruction() {
        let mut p = RbmParams::zeros(3, 2, spec(255), spec(255));
        p.weights = arr2(&[[1e-3, -2e-3], [5e-4, 1e-3], [-1e-3, 0.0]]);
        p.visible_bias = arr1(&[0.1, -0.2, 0.0]);
        p.hidden_bias = arr1(&[0.0, 0.3]);
        let v = arr2(&[[10.0, 200.0, 33.0]]);
        let out = gibbs_chain(&p, v.view(), 1, GibbsMode::MeanField, &RngStream::new(0, 0)).unwrap();
        let h = apply_mean(&p.hidden_spec, v.dot(&p.weights) + &p.hidden_bias);
        let expected = apply_mean(&p.visible_spec, h.dot(&p.weights.t()) + &p.visible_bias);
        assert_eq!(out, expected);
    }

    #[test]
    fn zero_weight_chain_is_factorised_bias_distribution() {
        let mut p = RbmParams::zeros(3, 2, spec(1), spec(1));
        p.visible_bias = arr1(&[-1.0, 0.0, 1.5]);
        let rng = RngStream::new(8, 0);
        let n = 50_000;
        let v0 = Array2::zeros((n, 3));
        let out = gibbs_chain(&p, v0.view(), 1, GibbsMode::Stochastic, &rng).unwrap();
        for i in 0..3 {
            let q = sigmoid(p.visible_bias[i]);
            let freq = out.column(i).mean().unwrap();
            let stderr = (q * (1.0 - q) / n as f64).sqrt();
            assert!((freq - q).abs() <= 4.0 * stderr, "unit {i}");
        }
    }

    #[test]
    fn chain_rejects_zero_steps() {
        let p = RbmParams::zeros(3, 2, spec(1), spec(1));
        assert!(gibbs_chain(&p, Array2::zeros((1, 3)).view(), 0, GibbsMode::MeanField, &RngStream::new(0, 0)).is_err());
    }
}
