//! Self-checks against independent oracles: finite differences, brute-force
//! enumeration and the textbook CD-1 statistics.
//!
//! Each check returns a [`CheckOutcome`] rather than panicking so the CLI can
//! print a table and the acceptance suite can pin its own parameters.

use std::fmt;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::{approximation_gap, f_integral, f_mean, f_variance, offsets, sigmoid, softplus, sum_sigmoid_mean, ActivationSpec};
use crate::conv::ConvRbmParams;
use crate::error::Result;
use crate::loss::{cd1_statistics, contrastive_loss, loss_gradient, ContrastiveLayer, ReconMode};
use crate::optim::AdamConfig;
use crate::oracle::{
    central_difference, free_energy, free_energy_by_enumeration, free_energy_integral, log_likelihood_exact, relative_error,
    state_index, total_variation, visible_distribution,
};
use crate::params::{init_params, GradientSet, RbmParams};
use crate::sampler::{hidden_mean, GibbsChain, GibbsMode, RngStream, SampleMethod};
use crate::stack::{train_epoch, DbnModel, ModelOptimizer, TrainConfig};

/// Signature of a loss-gradient implementation under test.
pub type GradientFn = fn(&RbmParams, ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Result<GradientSet>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<28} {:>8.2}s  {}", self.name, self.elapsed.as_secs_f64(), self.detail)
    }
}

fn timed(name: &str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// A random tiny RBM with weights of standard deviation
/// `scale / (k_h · max(N_v, 1))` and unit-scale biases.
pub fn random_rbm(visible: usize, hidden: usize, n_visible: u32, n_hidden: u32, scale: f64, seed: u64) -> Result<RbmParams> {
    let vs = ActivationSpec::sigmoid(n_visible, 1.0)?;
    let hs = ActivationSpec::sigmoid(n_hidden, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Normal::new(0.0, scale / f64::from(n_visible)).expect("finite std");
    let unit = Normal::new(0.0, 1.0).expect("finite std");
    let a = Array1::from_shape_simple_fn(visible, || unit.sample(&mut rng));
    let b = Array1::from_shape_simple_fn(hidden, || unit.sample(&mut rng));
    let weights = Array2::from_shape_simple_fn((visible, hidden), || w.sample(&mut rng));
    RbmParams::new(a, b, weights, vs, hs)
}

/// Integer data rows in `0..=n` and real reconstruction rows in `[0, n]`.
pub fn random_pair(rows: usize, cols: usize, n: u32, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Array2::from_shape_simple_fn((rows, cols), || f64::from(rng.random_range(0..=n)));
    let vr = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..=f64::from(n)));
    (v, vr)
}

const LEVELS: [u32; 3] = [1, 4, 255];

/// The `i`-th instance of the tiny-RBM family used by the gradient checks:
/// `V ≤ 8`, `H ≤ 6`, `N_v, N_h ∈ {1, 4, 255}`, a batch of three rows.
pub fn gradient_instance(i: usize, seed: u64) -> Result<(RbmParams, Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
    let visible = rng.random_range(1..=8);
    let hidden = rng.random_range(1..=6);
    let n_v = LEVELS[i % 3];
    let n_h = LEVELS[(i / 3) % 3];
    let params = random_rbm(visible, hidden, n_v, n_h, 1.0, rng.random())?;
    let (v, vr) = random_pair(3, visible, n_v, rng.random());
    Ok((params, v, vr))
}

/// Per-coordinate step sizes: the hidden input moves by about `1e-3 / k_h`.
fn fd_steps(params: &RbmParams, v: ArrayView2<'_, f64>, vr: ArrayView2<'_, f64>) -> Vec<f64> {
    let k = params.hidden_spec.scale();
    let base = 1e-3 / k;
    let mut steps = vec![1e-3; params.n_visible()];
    steps.extend(std::iter::repeat_n(base, params.n_hidden()));
    for i in 0..params.n_visible() {
        let vmax = v.column(i).iter().chain(vr.column(i).iter()).fold(1.0f64, |m, &x| m.max(x.abs()));
        steps.extend(std::iter::repeat_n(base / vmax, params.n_hidden()));
    }
    steps
}

/// Worst relative error between `gradient` and fourth-order central
/// differences of the contrastive loss with `v′` held fixed.
pub fn gradient_fd_error(params: &RbmParams, v: ArrayView2<'_, f64>, vr: ArrayView2<'_, f64>, gradient: GradientFn) -> Result<f64> {
    let g = gradient(params, v, vr)?.to_flat();
    let steps = fd_steps(params, v, vr);
    let mut worst = 0.0f64;
    for (i, (&gi, &h)) in g.iter().zip(&steps).enumerate() {
        let mut q = params.clone();
        let fd = central_difference(
            |x| {
                q.set_flat(i, x);
                contrastive_loss(&q, v, vr).unwrap_or(f64::NAN)
            },
            params.get_flat(i),
            h,
        );
        worst = worst.max(relative_error(fd, gi));
        if worst.is_nan() {
            return Ok(f64::INFINITY);
        }
    }
    Ok(worst)
}

pub fn check_gradient_fd(instances: usize, seed: u64, tolerance: f64, gradient: GradientFn) -> CheckOutcome {
    timed("gradient vs finite diff", || {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let (p, v, vr) = gradient_instance(i, seed)?;
            worst = worst.max(gradient_fd_error(&p, v.view(), vr.view(), gradient)?);
        }
        Ok((worst <= tolerance, format!("{instances} instances, max rel err {worst:.2e} (tol {tolerance:.0e})")))
    })
}

pub fn check_cd1_equivalence(instances: usize, seed: u64, tolerance: f64, gradient: GradientFn) -> CheckOutcome {
    timed("CD1 equivalence", || {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let (p, v, vr) = gradient_instance(i, seed)?;
            let g = gradient(&p, v.view(), vr.view())?.to_flat();
            let cd = cd1_statistics(&p, v.view(), vr.view())?.to_flat();
            for (a, b) in g.iter().zip(&cd) {
                worst = worst.max(relative_error(-a, *b));
            }
        }
        Ok((worst <= tolerance, format!("{instances} instances, max rel err {worst:.2e} (tol {tolerance:.0e})")))
    })
}

/// Binary models with `H ≤ 12`: closed-form free energy against the sum over
/// hidden states, and normalization of the enumerated visible distribution.
pub fn check_free_energy_oracle(instances: usize, seed: u64, tolerance: f64) -> CheckOutcome {
    timed("free energy oracle", || {
        let mut worst_f = 0.0f64;
        let mut worst_sum = 0.0f64;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let visible = rng.random_range(1..=8);
            let hidden = rng.random_range(1..=12);
            let p = random_rbm(visible, hidden, 1, 1, 1.0, rng.random())?;
            let (v, _) = random_pair(4, visible, 1, rng.random());
            for row in v.rows() {
                worst_f = worst_f.max(relative_error(free_energy(&p, row)?, free_energy_by_enumeration(&p, row)?));
            }
            let total: f64 = visible_distribution(&p)?.iter().sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
        Ok((
            worst_f <= tolerance && worst_sum <= tolerance,
            format!("{instances} models, free energy rel err {worst_f:.2e}, |Σp − 1| {worst_sum:.2e} (tol {tolerance:.0e})"),
        ))
    })
}

/// `|a − b| / max(|a|, |b|, 1)`: relative above one, absolute below, so
/// that exact zeros reached by different summation orders still compare.
pub fn floored_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Every multinary path at `N = 1, k = 1` against the plain binary formula.
pub fn check_binary_reduction(instances: usize, seed: u64, tolerance: f64) -> CheckOutcome {
    timed("binary reduction", || {
        let spec = ActivationSpec::sigmoid(1, 1.0)?;
        let o = offsets(&spec);
        // The single offset is ln(½ / ½) = 0; compared absolutely.
        let mut worst = o[0].abs();
        let mut track = |a: f64, b: f64| worst = worst.max(floored_error(a, b));
        for i in 0..=400 {
            let x = -20.0 + 0.1 * f64::from(i);
            let s = sigmoid(x);
            track(f_mean(&spec, x), s);
            track(f_variance(&spec, x), s * (1.0 - s));
            track(f_integral(&spec, x), softplus(x));
            track(sum_sigmoid_mean(&o, x), s);
        }
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let (nv, nh) = (rng.random_range(1..=8), rng.random_range(1..=6));
            let p = random_rbm(nv, nh, 1, 1, 1.0, rng.random())?;
            let (v, vr) = random_pair(3, nv, 1, rng.random());
            let vr = vr.mapv(f64::round);
            let x = v.dot(&p.weights) + &p.hidden_bias;
            let xr = vr.dot(&p.weights) + &p.hidden_bias;
            let hm = hidden_mean(&p, v.view())?;
            for (a, b) in hm.iter().zip(x.iter()) {
                track(*a, sigmoid(*b));
            }
            let mut binary_loss = 0.0;
            for (r, (vrow, vrrow)) in v.rows().into_iter().zip(vr.rows()).enumerate() {
                let fb = -p.visible_bias.dot(&vrow) - x.row(r).iter().map(|&x| softplus(x)).sum::<f64>();
                let fbr = -p.visible_bias.dot(&vrrow) - xr.row(r).iter().map(|&x| softplus(x)).sum::<f64>();
                track(free_energy(&p, vrow)?, fb);
                track(free_energy_integral(&p, vrow)?, fb);
                binary_loss += fb - fbr;
            }
            track(contrastive_loss(&p, v.view(), vr.view())?, binary_loss);
            let g = loss_gradient(&p, v.view(), vr.view())?;
            let (s, sr) = (x.mapv(sigmoid), xr.mapv(sigmoid));
            let classic_w = vr.t().dot(&sr) - v.t().dot(&s);
            for (a, b) in g.d_weights.iter().zip(classic_w.iter()) {
                track(*a, *b);
            }
            for (a, b) in g.d_hidden_bias.iter().zip((sr.sum_axis(ndarray::Axis(0)) - s.sum_axis(ndarray::Axis(0))).iter()) {
                track(*a, *b);
            }
        }
        Ok((worst <= tolerance, format!("max floored rel err {worst:.2e} (tol {tolerance:.0e})")))
    })
}

/// Offsets, derivative identities and the measured copy-model gaps.
pub fn check_activation_identities(offset_tolerance: f64, fd_tolerance: f64) -> CheckOutcome {
    timed("activation identities", || {
        let mut worst_o = 0.0f64;
        let mut worst_fd = 0.0f64;
        for n in [1, 2, 16, 255] {
            for k in [0.5, 1.0, 2.0] {
                let s = ActivationSpec::sigmoid(n, k)?;
                for (i, &o) in offsets(&s).iter().enumerate() {
                    worst_o = worst_o.max(relative_error(f_mean(&s, o), i as f64 + 0.5));
                }
                // kx ∈ [−15, 15]; further out f′ drops below the roundoff
                // floor of differencing f ≈ N.
                for j in 0..=120 {
                    let x = (-15.0 + 0.25 * f64::from(j)) / k;
                    let h = 0.02 / k;
                    let d_int = central_difference(|x| f_integral(&s, x), x, h);
                    let d_mean = central_difference(|x| f_mean(&s, x), x, h);
                    worst_fd = worst_fd.max(relative_error(d_int, f_mean(&s, x)));
                    worst_fd = worst_fd.max(relative_error(d_mean, f_variance(&s, x)));
                }
            }
        }
        let gaps: Vec<String> = [2, 16, 255]
            .iter()
            .map(|&n| {
                let g = approximation_gap(&ActivationSpec::sigmoid(n, 1.0).expect("valid"), -10.0, 10.0, 20_001);
                format!("N={n}: mean {:.4} var {:.4} int {:.4}", g.mean, g.variance, g.integral)
            })
            .collect();
        Ok((
            worst_o <= offset_tolerance && worst_fd <= fd_tolerance,
            format!("offset rel err {worst_o:.2e}, derivative rel err {worst_fd:.2e}; sup gaps on [-10,10] {}", gaps.join(", ")),
        ))
    })
}

/// A single stochastic chain on a binary model, compared state by state
/// with the enumerated Boltzmann distribution.
pub fn check_gibbs_convergence(visible: usize, hidden: usize, steps: usize, seed: u64, max_tv: f64) -> CheckOutcome {
    timed("Gibbs convergence", || {
        let p = random_rbm(visible, hidden, 1, 1, 1.0, seed)?;
        let exact = visible_distribution(&p)?;
        let mut counts = vec![0u64; exact.len()];
        let v0 = Array1::zeros(visible);
        let mut chain = GibbsChain::new(&p, v0.view(), GibbsMode::Stochastic, SampleMethod::Copies, RngStream::new(seed, 0))?;
        for _ in 0..steps {
            chain.step()?;
            counts[state_index(chain.state()) as usize] += 1;
        }
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
        let tv = total_variation(&empirical, &exact);
        Ok((tv <= max_tv, format!("V={visible} H={hidden}, {steps} steps, TV {tv:.4} (max {max_tv})")))
    })
}

/// The three 3×3 training patterns: top row, centre column, main diagonal.
pub fn toy_patterns() -> Array2<f64> {
    ndarray::arr2(&[
        [1., 1., 1., 0., 0., 0., 0., 0., 0.],
        [0., 1., 0., 0., 1., 0., 0., 1., 0.],
        [1., 0., 0., 0., 1., 0., 0., 0., 1.],
    ])
}

/// Exact mean log-likelihood of the toy patterns before and after training
/// a `9 × hidden` binary RBM.
pub fn likelihood_gain(hidden: usize, epochs: usize, lr: f64, seed: u64) -> Result<(f64, f64)> {
    let data = toy_patterns();
    let spec = ActivationSpec::binary();
    let params = init_params(9, hidden, spec, spec, seed)?;
    let before = log_likelihood_exact(&params, data.view())?.mean_log_likelihood;
    let mut model = DbnModel::single(params)?;
    let mut opt = ModelOptimizer::new(&model);
    let config = TrainConfig {
        adam: AdamConfig::with_lr(lr),
        ..TrainConfig::default()
    };
    for epoch in 0..epochs {
        train_epoch(&mut model, data.view(), &mut opt, &config, &RngStream::new(seed, epoch as u64))?;
    }
    let crate::stack::Layer::Dense(trained) = &model.layers()[0] else { unreachable!("dense model") };
    let after = log_likelihood_exact(trained, data.view())?.mean_log_likelihood;
    Ok((before, after))
}

pub fn check_likelihood_ascent(seeds: u64, epochs: usize, lr: f64, min_gain: f64, min_passing: u64) -> CheckOutcome {
    timed("likelihood ascent", || {
        let mut gains = Vec::new();
        for seed in 0..seeds {
            let (before, after) = likelihood_gain(6, epochs, lr, seed)?;
            gains.push(after - before);
        }
        let passing = gains.iter().filter(|&&g| g >= min_gain).count() as u64;
        let shown: Vec<String> = gains.iter().map(|g| format!("{g:.2}")).collect();
        Ok((
            passing >= min_passing,
            format!("{passing}/{seeds} seeds gain ≥ {min_gain} nats (gains {})", shown.join(" ")),
        ))
    })
}

/// A 1×1 stride-1 convolution equals a dense layer applied per pixel, and
/// convolutional gradients match finite differences on 6×6 inputs.
pub fn check_conv(seed: u64, reduction_tolerance: f64, fd_tolerance: f64) -> CheckOutcome {
    timed("conv reduction + gradient", || {
        let mut worst_red = 0.0f64;
        let mut worst_fd = 0.0f64;
        for (t, n) in LEVELS.into_iter().enumerate() {
            let seed = seed.wrapping_add(t as u64 * 101);
            let spec = ActivationSpec::sigmoid(n, 1.0)?;
            let (c_in, c_out, side) = (3, 2, 4);
            let dense = random_rbm(c_in, c_out, n, n, 1.0, seed)?;
            let mut conv = ConvRbmParams::zeros(c_in, c_out, 1, 1, side, side, spec, spec);
            conv.visible_bias.assign(&dense.visible_bias);
            conv.hidden_bias.assign(&dense.hidden_bias);
            for o in 0..c_out {
                for c in 0..c_in {
                    conv.filters[(o, c, 0, 0)] = dense.weights[(c, o)];
                }
            }
            let px = side * side;
            let (v, vr) = random_pair(2, c_in * px, n, seed + 1);
            // Per-pixel rows for the dense layer.
            let to_pixels = |x: &Array2<f64>| Array2::from_shape_fn((2 * px, c_in), |(r, c)| x[(r / px, c * px + r % px)]);
            let (dv, dvr) = (to_pixels(&v), to_pixels(&vr));
            worst_red = worst_red.max(relative_error(
                conv.contrastive_loss(v.view(), vr.view())?,
                contrastive_loss(&dense, dv.view(), dvr.view())?,
            ));
            let gc = conv.loss_gradient(v.view(), vr.view())?;
            let gd = loss_gradient(&dense, dv.view(), dvr.view())?;
            for (a, b) in gc.d_visible_bias.iter().zip(&gd.d_visible_bias).chain(gc.d_hidden_bias.iter().zip(&gd.d_hidden_bias)) {
                worst_red = worst_red.max(relative_error(*a, *b));
            }
            for o in 0..c_out {
                for c in 0..c_in {
                    worst_red = worst_red.max(relative_error(gc.d_filters[(o, c, 0, 0)], gd.d_weights[(c, o)]));
                }
            }

            let mut p = crate::conv::init_conv_params(crate::conv::ImageShape::new(1, 6, 6), 2, 4, 2, spec, spec, seed + 2)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
            p.filters.mapv_inplace(|_| rng.random_range(-1.0..1.0) / f64::from(n) / 4.0);
            p.hidden_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            p.visible_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let (v, vr) = random_pair(2, 36, n, seed + 4);
            let g = p.loss_gradient(v.view(), vr.view())?.to_flat();
            let n_bias = p.visible_bias.len() + p.hidden_bias.len();
            for (i, &gi) in g.iter().enumerate() {
                let h = if i < n_bias { 1e-3 } else { 1e-3 / f64::from(n) };
                let fd = central_difference(
                    |x| {
                        let mut q = p.clone();
                        q.set_flat(i, x);
                        q.contrastive_loss(v.view(), vr.view()).unwrap_or(f64::NAN)
                    },
                    p.get_flat(i),
                    h,
                );
                worst_fd = worst_fd.max(relative_error(fd, gi));
            }
        }
        Ok((
            worst_red <= reduction_tolerance && worst_fd <= fd_tolerance,
            format!("1×1 reduction rel err {worst_red:.2e} (tol {reduction_tolerance:.0e}), 6×6 finite-diff rel err {worst_fd:.2e} (tol {fd_tolerance:.0e})"),
        ))
    })
}

/// Reconstruction mode used by the checks that train.
pub const CHECK_RECON: ReconMode = ReconMode::MeanField;

/// Everything [`run_all`] needs; `gradient` can be swapped for a faulty one
/// to confirm the checks notice.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub gradient: GradientFn,
    pub gibbs_steps: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            gradient: loss_gradient,
            gibbs_steps: 1_000_000,
            seed: 0,
        }
    }
}

/// The full suite with its standard tolerances.
pub fn run_all(options: &VerifyOptions) -> Vec<CheckOutcome> {
    let s = options.seed;
    vec![
        check_gradient_fd(24, s, 1e-6, options.gradient),
        check_cd1_equivalence(24, s, 1e-12, options.gradient),
        check_free_energy_oracle(20, s, 1e-10),
        check_binary_reduction(20, s, 1e-12),
        check_activation_identities(1e-12, 1e-6),
        check_gibbs_convergence(6, 4, options.gibbs_steps, s, 0.05),
        check_likelihood_ascent(10, 200, 0.01, 1.0, 9),
        check_conv(s, 1e-12, 1e-6),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped_hidden_bias(p: &RbmParams, v: ArrayView2<'_, f64>, vr: ArrayView2<'_, f64>) -> Result<GradientSet> {
        let mut g = loss_gradient(p, v, vr)?;
        g.d_hidden_bias.mapv_inplace(|x| -x);
        Ok(g)
    }

    #[test]
    fn gradient_checks_pass() {
        let fd = check_gradient_fd(24, 0, 1e-6, loss_gradient);
        assert!(fd.passed, "{fd}");
        let cd = check_cd1_equivalence(24, 0, 1e-12, loss_gradient);
        assert!(cd.passed, "{cd}");
    }

    #[test]
    fn sign_error_in_hidden_bias_is_caught() {
        assert!(!check_cd1_equivalence(24, 0, 1e-12, flipped_hidden_bias).passed);
        assert!(!check_gradient_fd(6, 0, 1e-6, flipped_hidden_bias).passed);
    }

    #[test]
    fn oracle_checks_pass() {
        for c in [
            check_free_energy_oracle(10, 1, 1e-10),
            check_binary_reduction(10, 1, 1e-12),
            check_activation_identities(1e-12, 1e-6),
            check_conv(1, 1e-12, 1e-6),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn short_gibbs_run_is_close() {
        let c = check_gibbs_convergence(4, 3, 200_000, 2, 0.05);
        assert!(c.passed, "{c}");
    }

    #[test]
    fn instances_cover_all_level_pairs() {
        let pairs: std::collections::BTreeSet<_> = (0..9)
            .map(|i| {
                let (p, _, _) = gradient_instance(i, 0).unwrap();
                (p.visible_spec.n_levels(), p.hidden_spec.n_levels())
            })
            .collect();
        assert_eq!(pairs.len(), 9);
    }
}
