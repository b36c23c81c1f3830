use ndarray::Array1;

use mrbm::oracle::{empirical_distribution, total_variation, visible_distribution};
use mrbm::sampler::{gibbs_chain, moment_estimate, UnitSampler};
use mrbm::verify::random_rbm;
use mrbm::{ActivationSpec, GibbsMode, RngStream, SampleMethod};

#[test]
fn parallel_chains_reach_the_exact_distribution() {
    let params = random_rbm(4, 3, 1, 1, 2.0, 8).unwrap();
    let starts = ndarray::Array2::zeros((20_000, 4));
    let ends = gibbs_chain(&params, starts.view(), 50, GibbsMode::Stochastic, &RngStream::new(1, 0)).unwrap();
    let tv = total_variation(&empirical_distribution(ends.view()), &visible_distribution(&params).unwrap());
    assert!(tv < 0.03, "TV {tv}");
}

#[test]
fn copy_sampler_matches_exact_moments() {
    let spec = ActivationSpec::sigmoid(6, 0.7).unwrap();
    let offsets = mrbm::activation::offsets(&spec);
    let sampler = UnitSampler::new(spec, SampleMethod::Copies);
    for x in [-3.0, 0.0, 1.5] {
        let rng = RngStream::new(4, 0);
        let (mean, var) = moment_estimate(40_000, |i| {
            let mut r = rng.fork(i);
            Array1::from_elem(1, sampler.draw(x, &mut r))
        });
        let want_mean = mrbm::activation::sum_sigmoid_mean(offsets.as_slice(), x);
        let want_var = mrbm::activation::sum_sigmoid_var(offsets.as_slice(), x);
        assert!((mean[0] - want_mean).abs() < 0.03, "x={x}: mean {} vs {want_mean}", mean[0]);
        assert!((var[0] - want_var).abs() < 0.05 * want_var.max(0.2), "x={x}: var {} vs {want_var}", var[0]);
    }
}

#[test]
fn gaussian_sampler_stays_on_the_integer_grid_near_the_mean() {
    let spec = ActivationSpec::sigmoid(20, 0.3).unwrap();
    let sampler = UnitSampler::new(spec, SampleMethod::Gaussian);
    let rng = RngStream::new(6, 0);
    for x in [-8.0, 0.0, 4.0] {
        let (mean, _) = moment_estimate(20_000, |i| {
            let v = sampler.draw(x, &mut rng.fork(i));
            assert!(v.fract() == 0.0 && (0.0..=20.0).contains(&v));
            Array1::from_elem(1, v)
        });
        assert!((mean[0] - spec.mean(x)).abs() < 0.1, "x={x}: {} vs {}", mean[0], spec.mean(x));
    }
}
