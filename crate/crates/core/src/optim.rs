//! Bias-corrected ADAM, one state per parameter tensor.

use crate::error::{Error, Result};

/// ADAM hyperparameters. Defaults: `lr = 0.03`, `β₁ = 0.9`, `β₂ = 0.999`,
/// `ε = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.03,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid ADAM hyperparameters {self:?}")))
        }
    }
}

/// Moment accumulators for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        AdamState {
            name: name.into(),
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One descent step on `param` along `grad`.
    ///
    /// A non-finite gradient entry is reported and leaves both state and
    /// parameter untouched.
    pub fn step(&mut self, config: &AdamConfig, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "ADAM state `{}` has {} entries, parameter {}, gradient {}",
                self.name,
                self.m.len(),
                param.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: self.name.clone(),
                index,
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for ((p, &g), (m, v)) in param.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        Ok(())
    }
}

/// Scales `grads` in place so that their joint Euclidean norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_by_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|g| *g *= s);
    }
    norm
}
