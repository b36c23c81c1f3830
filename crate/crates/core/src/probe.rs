//! Multinomial logistic regression on frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};

/// Full-batch ADAM on mean cross-entropy plus `l2/2 · ‖W‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
    /// Leading fraction of samples used for fitting; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            lr: 0.05,
            l2: 1e-4,
            train_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `features × classes`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

impl LinearProbe {
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    /// Objective and its gradient with respect to weights and bias.
    pub fn objective(&self, x: ArrayView2<'_, f64>, labels: &[usize], l2: f64) -> (f64, Array2<f64>, Array1<f64>) {
        let n = x.nrows() as f64;
        let p = softmax_rows(self.logits(x));
        let mut loss = 0.0;
        let mut delta = p;
        for (i, &y) in labels.iter().enumerate() {
            loss -= delta[(i, y)].max(f64::MIN_POSITIVE).ln();
            delta[(i, y)] -= 1.0;
        }
        delta /= n;
        let gw = x.t().dot(&delta) + l2 * &self.weights;
        let gb = delta.sum_axis(Axis(0));
        (loss / n + 0.5 * l2 * self.weights.mapv(|w| w * w).sum(), gw, gb)
    }

    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, config: &ProbeConfig) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(Error::Shape(format!("{} labels for {} feature rows", labels.len(), x.nrows())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::OutOfRange(format!("label {y} with {n_classes} classes")));
        }
        let mut probe = LinearProbe {
            weights: Array2::zeros((x.ncols(), n_classes)),
            bias: Array1::zeros(n_classes),
        };
        let adam = AdamConfig::with_lr(config.lr);
        let mut sw = AdamState::new("probe.weights", probe.weights.len());
        let mut sb = AdamState::new("probe.bias", n_classes);
        for _ in 0..config.steps {
            let (_, gw, gb) = probe.objective(x, labels, config.l2);
            sw.step(&adam, probe.weights.as_slice_mut().expect("contiguous"), gw.as_slice().expect("contiguous"))?;
            sb.step(&adam, probe.bias.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous"))?;
        }
        Ok(probe)
    }

    /// Arg-max class per row; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best }).0)
            .collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let hits = self.predict(x).iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Held-out accuracy of always predicting the most frequent training label.
    pub majority_accuracy: f64,
}

/// Fits a probe on the leading rows and scores it on the rest.
pub fn probe_accuracy(features: ArrayView2<'_, f64>, labels: &[usize], config: &ProbeConfig) -> Result<ProbeReport> {
    if labels.len() != features.nrows() {
        return Err(Error::Shape(format!("{} labels for {} feature rows", labels.len(), features.nrows())));
    }
    let n_train = (features.nrows() as f64 * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= features.nrows() {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} leaves no train or test rows out of {}",
            config.train_fraction,
            features.nrows()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let (xtr, xte) = features.split_at(Axis(0), n_train);
    let (ytr, yte) = labels.split_at(n_train);
    let probe = LinearProbe::fit(xtr, ytr, n_classes, config)?;

    let mut counts = vec![0usize; n_classes];
    ytr.iter().for_each(|&y| counts[y] += 1);
    let majority = (0..n_classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    Ok(ProbeReport {
        n_train,
        n_test: yte.len(),
        train_accuracy: probe.accuracy(xtr, ytr),
        test_accuracy: probe.accuracy(xte, yte),
        majority_accuracy: yte.iter().filter(|&&y| y == majority).count() as f64 / yte.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = [[2.0, 0.0], [-2.0, 1.0], [0.0, -2.5]];
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| centres[labels[i]][j] + rng.random_range(-0.5..0.5));
        (x, labels)
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (x, y) = blobs(12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LinearProbe {
            weights: Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0)),
        };
        let (_, gw, gb) = p.objective(x.view(), &y, 0.1);
        for idx in 0..6 {
            let (r, c) = (idx / 3, idx % 3);
            let fd = central_difference(
                |w| {
                    let mut q = p.clone();
                    q.weights[(r, c)] = w;
                    q.objective(x.view(), &y, 0.1).0
                },
                p.weights[(r, c)],
                1e-4,
            );
            assert!(relative_error(fd, gw[(r, c)]) <= 1e-8);
        }
        for c in 0..3 {
            let fd = central_difference(
                |b| {
                    let mut q = p.clone();
                    q.bias[c] = b;
                    q.objective(x.view(), &y, 0.1).0
                },
                p.bias[c],
                1e-4,
            );
            assert!(relative_error(fd, gb[c]) <= 1e-8);
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(90, 3);
        let r = probe_accuracy(x.view(), &y, &ProbeConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!((r.n_train, r.n_test), (68, 22));
    }

    #[test]
    fn constant_features_give_majority_rate() {
        let x = Array2::from_elem((40, 3), 0.5);
        let y: Vec<usize> = (0..40).map(|i| usize::from(i % 4 == 0)).collect();
        let r = probe_accuracy(x.view(), &y, &ProbeConfig::default()).unwrap();
        assert_eq!(r.test_accuracy, r.majority_accuracy);
    }

    #[test]
    fn bad_inputs() {
        let x = Array2::zeros((4, 2));
        assert!(probe_accuracy(x.view(), &[0, 1, 0], &ProbeConfig::default()).is_err());
        let cfg = ProbeConfig { train_fraction: 1.0, ..Default::default() };
        assert!(probe_accuracy(x.view(), &[0, 1, 0, 1], &cfg).is_err());
        assert!(LinearProbe::fit(x.view(), &[0, 1, 0, 5], 2, &ProbeConfig::default()).is_err());
    }
}
