//! The contrastive free-energy loss and its closed-form gradient.
//!
//! For a batch of data rows `v` and reconstructions `v′` the loss is
//!
//! ```text
//! L = Σ_batch F(v) − F(v′)
//!   = Σ_batch a·(v′ − v)ᵀ + Σ_j [∫^{x′_j} f − ∫^{x_j} f],   x = b + vW,  x′ = b + v′W
//! ```
//!
//! using the smooth free energy `F(v) = −a·vᵀ − Σ_j ∫^{x_j} f`. The
//! reconstructions are constants of the loss: no gradient flows through
//! them. With that convention the negated gradient is exactly the CD-1
//! update, so minimising `L` with any gradient method performs contrastive
//! divergence learning.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::layer::RbmLayer;
use crate::params::{GradientSet, RbmParams};
use crate::sampler::{hidden_mean, sample_hidden, sample_visible, visible_mean, GibbsMode, RngStream};

/// How `v′` is produced from `v`.
pub type ReconMode = GibbsMode;

/// Loss, the reconstructions it was computed against, and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatchResult<G = GradientSet> {
    pub loss: f64,
    pub reconstructions: Array2<f64>,
    pub gradients: G,
}

/// A layer with a contrastive loss and closed-form gradient.
pub trait ContrastiveLayer: RbmLayer {
    type Gradient;

    /// `Σ_batch F(v) − F(v′)` under the smooth free energy.
    fn contrastive_loss(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<f64>;

    /// Gradient of [`ContrastiveLayer::contrastive_loss`] with `v_recon` held fixed.
    fn loss_gradient(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<Self::Gradient>;
}

pub(crate) fn check_pair(v: &ArrayView2<'_, f64>, v_recon: &ArrayView2<'_, f64>) -> Result<()> {
    if v.dim() != v_recon.dim() {
        return Err(Error::Shape(format!(
            "data batch is {:?} but reconstruction batch is {:?}",
            v.dim(),
            v_recon.dim()
        )));
    }
    Ok(())
}

/// One reconstruction step `v → h → v′`.
///
/// Mean-field mode returns `f_v(a + f_h(b + vW)·Wᵀ)`. Stochastic mode samples
/// `h` and then `v′` from the copy model, using `rng.fork(0)` for the hidden
/// draws and `rng.fork(1)` for the visible draws.
pub fn reconstruct<L: RbmLayer + ?Sized>(layer: &L, v: ArrayView2<'_, f64>, mode: ReconMode, rng: &RngStream) -> Result<Array2<f64>> {
    match mode {
        GibbsMode::MeanField => {
            let h = hidden_mean(layer, v)?;
            visible_mean(layer, h.view())
        }
        GibbsMode::Stochastic => {
            let h = sample_hidden(layer, v, &rng.fork(0))?;
            sample_visible(layer, h.view(), &rng.fork(1))
        }
    }
}

impl ContrastiveLayer for RbmParams {
    type Gradient = GradientSet;

    fn contrastive_loss(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<f64> {
        check_pair(&v, &v_recon)?;
        let x = self.hidden_input(v)?;
        let x_recon = self.hidden_input(v_recon)?;
        let spec = &self.hidden_spec;
        let visible_term = (&v_recon - &v).dot(&self.visible_bias).sum();
        let hidden_term = Zip::from(&x_recon)
            .and(&x)
            .fold(0.0, |acc, &xr, &x| acc + (spec.integral(xr) - spec.integral(x)));
        Ok(visible_term + hidden_term)
    }

    fn loss_gradient(&self, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<GradientSet> {
        check_pair(&v, &v_recon)?;
        let spec = self.hidden_spec;
        let h = self.hidden_input(v)?.mapv_into(|x| spec.mean(x));
        let h_recon = self.hidden_input(v_recon)?.mapv_into(|x| spec.mean(x));
        Ok(GradientSet {
            d_visible_bias: (&v_recon - &v).sum_axis(Axis(0)),
            d_hidden_bias: (&h_recon - &h).sum_axis(Axis(0)),
            d_weights: v_recon.t().dot(&h_recon) - v.t().dot(&h),
        })
    }
}

/// `Σ_batch F(v) − F(v′)` for a dense layer.
pub fn contrastive_loss(params: &RbmParams, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<f64> {
    params.contrastive_loss(v, v_recon)
}

/// Closed-form gradient of [`contrastive_loss`] with `v_recon` detached:
///
/// ```text
/// ∂L/∂a_i  = Σ (v′_i − v_i)
/// ∂L/∂b_j  = Σ (f(x′_j) − f(x_j))
/// ∂L/∂W_ij = Σ (v′_i f(x′_j) − v_i f(x_j))
/// ```
pub fn loss_gradient(params: &RbmParams, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<GradientSet> {
    params.loss_gradient(v, v_recon)
}

/// Reconstructs `v`, then evaluates loss and gradient against that `v′`.
pub fn loss_and_grad<L: ContrastiveLayer + ?Sized>(
    layer: &L,
    v: ArrayView2<'_, f64>,
    mode: ReconMode,
    rng: &RngStream,
) -> Result<LossBatchResult<L::Gradient>> {
    let reconstructions = reconstruct(layer, v, mode, rng)?;
    let loss = layer.contrastive_loss(v, reconstructions.view())?;
    let gradients = layer.loss_gradient(v, reconstructions.view())?;
    Ok(LossBatchResult {
        loss,
        reconstructions,
        gradients,
    })
}

/// Textbook CD-1 statistics for given data and reconstruction rows.
///
/// Positive phase `⟨v, f(x)⟩` over the data minus negative phase
/// `⟨v′, f(x′)⟩` over the reconstructions, accumulated sample by sample.
/// The sign is the direction of likelihood ascent.
pub fn cd1_statistics(params: &RbmParams, v: ArrayView2<'_, f64>, v_recon: ArrayView2<'_, f64>) -> Result<GradientSet> {
    check_pair(&v, &v_recon)?;
    let h_pos = hidden_mean(params, v)?;
    let h_neg = hidden_mean(params, v_recon)?;
    let mut pos = GradientSet::zeros_like(params);
    let mut neg = GradientSet::zeros_like(params);
    for (phase, visible, hidden) in [(&mut pos, v, h_pos.view()), (&mut neg, v_recon, h_neg.view())] {
        for (vr, hr) in visible.rows().into_iter().zip(hidden.rows()) {
            phase.d_visible_bias += &vr;
            phase.d_hidden_bias += &hr;
            for (i, &vi) in vr.iter().enumerate() {
                for (j, &hj) in hr.iter().enumerate() {
                    phase.d_weights[(i, j)] += vi * hj;
                }
            }
        }
    }
    Ok(GradientSet {
        d_visible_bias: pos.d_visible_bias - neg.d_visible_bias,
        d_hidden_bias: pos.d_hidden_bias - neg.d_hidden_bias,
        d_weights: pos.d_weights - neg.d_weights,
    })
}

/// The CD-1 estimator: one reconstruction step in `mode`, mean-field hidden
/// activities in both phases.
pub fn cd1_reference(params: &RbmParams, v: ArrayView2<'_, f64>, mode: ReconMode, rng: &RngStream) -> Result<GradientSet> {
    let v_recon = reconstruct(params, v, mode, rng)?;
    cd1_statistics(params, v, v_recon.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{sigmoid, softplus, ActivationSpec};
    use crate::oracle::{expected_stochastic_reconstruction, free_energy_integral};
    use crate::params::init_params;
    use crate::sampler::moment_estimate;
    use ndarray::{arr1, arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: u32, k: f64) -> ActivationSpec {
        ActivationSpec::sigmoid(n, k).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if d == 0.0 {
            0.0
        } else {
            d / a.abs().max(b.abs())
        }
    }

    fn random_instance(v: usize, h: usize, nv: u32, nh: u32, seed: u64) -> (RbmParams, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(v, h, spec(nv, 1.0), spec(nh, 1.0), seed).unwrap();
        let w = 2.0 / f64::from(nv);
        p.weights.mapv_inplace(|_| rng.random_range(-w..w));
        p.visible_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p.hidden_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let n = f64::from(nv);
        let data = Array2::from_shape_simple_fn((3, v), || rng.random_range(0..=nv) as f64);
        let recon = Array2::from_shape_simple_fn((3, v), || rng.random_range(0.0..n));
        (p, data, recon)
    }

    #[test]
    fn identical_batches_give_zero() {
        let (p, v, _) = random_instance(5, 4, 255, 255, 1);
        assert_eq!(contrastive_loss(&p, v.view(), v.view()).unwrap(), 0.0);
        let g = loss_gradient(&p, v.view(), v.view()).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn loss_is_free_energy_difference() {
        for seed in 0..8 {
            let (p, v, vr) = random_instance(4, 3, 4, 16, seed);
            let mut expected = 0.0;
            for (a, b) in v.rows().into_iter().zip(vr.rows()) {
                expected += free_energy_integral(&p, a).unwrap() - free_energy_integral(&p, b).unwrap();
            }
            let loss = contrastive_loss(&p, v.view(), vr.view()).unwrap();
            assert!(rel_err(loss, expected) <= 1e-12, "seed {seed}: {loss} vs {expected}");
        }
    }

    #[test]
    fn binary_loss_is_softplus_form() {
        let (p, v, vr) = random_instance(4, 3, 1, 1, 4);
        let mut expected = 0.0;
        for (a, b) in v.rows().into_iter().zip(vr.rows()) {
            expected += p.visible_bias.dot(&(&b - &a));
            let x = a.dot(&p.weights) + &p.hidden_bias;
            let xr = b.dot(&p.weights) + &p.hidden_bias;
            for j in 0..3 {
                expected += softplus(xr[j]) - softplus(x[j]);
            }
        }
        let loss = contrastive_loss(&p, v.view(), vr.view()).unwrap();
        assert!(rel_err(loss, expected) <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, nh, k) in [(0, 1, 1.0), (1, 4, 1.0), (2, 255, 1.0), (3, 16, 0.3)] {
            let (mut p, v, vr) = random_instance(5, 4, 1, nh, seed);
            p.hidden_spec = spec(nh, k);
            let g = loss_gradient(&p, v.view(), vr.view()).unwrap().to_flat();
            let h = 1e-5;
            for (i, &gi) in g.iter().enumerate() {
                let mut up = p.clone();
                let mut down = p.clone();
                up.set_flat(i, p.get_flat(i) + h);
                down.set_flat(i, p.get_flat(i) - h);
                let fd = (contrastive_loss(&up, v.view(), vr.view()).unwrap()
                    - contrastive_loss(&down, v.view(), vr.view()).unwrap())
                    / (2.0 * h);
                assert!(rel_err(fd, gi) <= 1e-6, "seed {seed} coord {i}: {fd} vs {}", gi);
            }
        }
    }

    #[test]
    fn negated_gradient_is_cd1() {
        for (seed, nv, nh) in [(0, 1, 1), (1, 1, 4), (2, 255, 255), (3, 4, 2)] {
            let (p, v, vr) = random_instance(6, 5, nv, nh, seed);
            let g = loss_gradient(&p, v.view(), vr.view()).unwrap().negated().to_flat();
            let cd = cd1_statistics(&p, v.view(), vr.view()).unwrap().to_flat();
            for (i, (a, b)) in g.iter().zip(&cd).enumerate() {
                assert!(rel_err(*a, *b) <= 1e-12, "seed {seed} coord {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn binary_gradient_is_classic_cd1() {
        let (p, v, vr) = random_instance(3, 2, 1, 1, 7);
        let g = loss_gradient(&p, v.view(), vr.view()).unwrap().negated();
        for i in 0..3 {
            for j in 0..2 {
                let mut cd = 0.0;
                for (a, b) in v.rows().into_iter().zip(vr.rows()) {
                    let x = p.hidden_bias[j] + a.dot(&p.weights.column(j));
                    let xr = p.hidden_bias[j] + b.dot(&p.weights.column(j));
                    cd += a[i] * sigmoid(x) - b[i] * sigmoid(xr);
                }
                assert!(rel_err(g.d_weights[(i, j)], cd) <= 1e-12);
            }
        }
    }

    #[test]
    fn cd1_hand_computed_single_unit() {
        let p = RbmParams::new(arr1(&[0.2]), arr1(&[-0.1]), arr2(&[[0.5]]), spec(1, 1.0), spec(1, 1.0)).unwrap();
        let v = arr2(&[[1.0]]);
        let h_pos = sigmoid(-0.1 + 0.5);
        let v_neg = sigmoid(0.2 + 0.5 * h_pos);
        let h_neg = sigmoid(-0.1 + 0.5 * v_neg);
        let g = cd1_reference(&p, v.view(), GibbsMode::MeanField, &RngStream::new(0, 0)).unwrap();
        assert!((g.d_visible_bias[0] - (1.0 - v_neg)).abs() < 1e-15);
        assert!((g.d_hidden_bias[0] - (h_pos - h_neg)).abs() < 1e-15);
        assert!((g.d_weights[(0, 0)] - (h_pos - v_neg * h_neg)).abs() < 1e-15);
    }

    #[test]
    fn cd1_zero_weights_symmetric_data() {
        let p = RbmParams::zeros(2, 3, spec(1, 1.0), spec(1, 1.0));
        let v = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let g = cd1_reference(&p, v.view(), GibbsMode::MeanField, &RngStream::new(0, 0)).unwrap();
        assert!(g.d_weights.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn reconstruct_examples() {
        let p = RbmParams::zeros(4, 2, spec(255, 1.0), spec(255, 1.0));
        let v = Array2::from_elem((2, 4), 30.0);
        let r = reconstruct(&p, v.view(), GibbsMode::MeanField, &RngStream::new(0, 0)).unwrap();
        assert!(r.iter().all(|&x| x == 127.5));

        let (p, v, _) = random_instance(3, 2, 1, 1, 3);
        let r = reconstruct(&p, v.view(), GibbsMode::MeanField, &RngStream::new(0, 0)).unwrap();
        for (row, rr) in v.rows().into_iter().zip(r.rows()) {
            let h = (row.dot(&p.weights) + &p.hidden_bias).mapv(sigmoid);
            let expected = (h.dot(&p.weights.t()) + &p.visible_bias).mapv(sigmoid);
            for (a, b) in rr.iter().zip(&expected) {
                assert!(rel_err(*a, *b) <= 1e-15);
            }
        }
    }

    #[test]
    fn stochastic_reconstruction_mean() {
        let (mut p, _, _) = random_instance(4, 3, 1, 1, 12);
        p.weights *= 1.5;
        let v = arr2(&[[1.0, 0.0, 1.0, 1.0]]);
        let rng = RngStream::new(2, 0);
        let draws = 100_000;
        let (mean, var) = moment_estimate(draws, |i| {
            reconstruct(&p, v.view(), GibbsMode::Stochastic, &rng.fork(i)).unwrap().row(0).to_owned()
        });
        let exact = expected_stochastic_reconstruction(&p, v.row(0)).unwrap();
        for i in 0..4 {
            let stderr = (var[i] / draws as f64).sqrt();
            assert!((mean[i] - exact[i]).abs() <= 4.0 * stderr, "unit {i}: {} vs {}", mean[i], exact[i]);
        }

        // With weak weights the mean-field formula is the stochastic mean to
        // well within Monte-Carlo resolution.
        p.weights.mapv_inplace(|w| w * 0.01);
        let mf = reconstruct(&p, v.view(), GibbsMode::MeanField, &rng).unwrap();
        let (mean, var) = moment_estimate(draws, |i| {
            reconstruct(&p, v.view(), GibbsMode::Stochastic, &rng.fork(i)).unwrap().row(0).to_owned()
        });
        for i in 0..4 {
            let stderr = (var[i] / draws as f64).sqrt();
            assert!((mean[i] - mf[(0, i)]).abs() <= 4.0 * stderr);
        }
    }

    #[test]
    fn shape_mismatch() {
        let (p, v, _) = random_instance(3, 2, 1, 1, 3);
        let short = Array2::zeros((2, 3));
        assert!(matches!(contrastive_loss(&p, v.view(), short.view()), Err(Error::Shape(_))));
        assert!(matches!(loss_gradient(&p, v.view(), short.view()), Err(Error::Shape(_))));
    }
}
