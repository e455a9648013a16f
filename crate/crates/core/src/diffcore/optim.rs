use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{FivesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Gradient-descent optimizer over a subset of a [`ParamStore`].
///
/// Weight decay adds `weight_decay * theta` to the gradient before the
/// update. Adam uses beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub rule: UpdateRule,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, lr: f64, weight_decay: f64) -> Self {
        Self {
            rule,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `ids` and zeroes their gradients. A non-finite
    /// gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if let Some(pos) = store.grad(id).data().iter().position(|g| !g.is_finite()) {
                return Err(FivesError::Numeric(format!(
                    "non-finite gradient in {:?} at index {pos}",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for &id in ids {
            let grad: Vec<f64> = store
                .grad(id)
                .data()
                .iter()
                .zip(store.value(id).data())
                .map(|(g, w)| g + self.weight_decay * w)
                .collect();
            match self.rule {
                UpdateRule::Sgd => {
                    for (w, g) in store.value_mut(id).data_mut().iter_mut().zip(&grad) {
                        *w -= self.lr * g;
                    }
                }
                UpdateRule::Adam => {
                    let n = grad.len();
                    let mo = self.moments.entry(id).or_insert_with(|| Moments {
                        first: vec![0.0; n],
                        second: vec![0.0; n],
                    });
                    let bc1 = 1.0 - self.beta1.powi(t);
                    let bc2 = 1.0 - self.beta2.powi(t);
                    let values = store.value_mut(id).data_mut();
                    for i in 0..n {
                        let g = grad[i];
                        mo.first[i] = self.beta1 * mo.first[i] + (1.0 - self.beta1) * g;
                        mo.second[i] = self.beta2 * mo.second[i] + (1.0 - self.beta2) * g * g;
                        let mhat = mo.first[i] / bc1;
                        let vhat = mo.second[i] / bc2;
                        values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        store.zero_grad_of(ids);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::vector(vec![value])).unwrap();
        s.grad_mut(id).data_mut()[0] = grad;
        (s, id)
    }

    #[test]
    fn sgd_step() {
        let (mut s, id) = store_with(1.0, 2.0);
        Optimizer::new(UpdateRule::Sgd, 0.1, 0.0).step(&mut s, &[id]).unwrap();
        assert!((s.value(id).data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.grad(id).data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for rule in [UpdateRule::Sgd, UpdateRule::Adam] {
            let (mut s, id) = store_with(1.5, 0.0);
            let mut opt = Optimizer::new(rule, 0.1, 0.0);
            for _ in 0..3 {
                opt.step(&mut s, &[id]).unwrap();
            }
            assert_eq!(s.value(id).data()[0], 1.5);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = store_with(0.0, 1.0);
        Optimizer::new(UpdateRule::Adam, 0.001, 0.0).step(&mut s, &[id]).unwrap();
        // m_hat = v_hat = 1 at t = 1, so the step is lr / (1 + eps).
        assert!((s.value(id).data()[0] + 0.000_999_999_990_000_000_3).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let (mut s, id) = store_with(2.0, 0.0);
        Optimizer::new(UpdateRule::Sgd, 0.5, 0.1).step(&mut s, &[id]).unwrap();
        assert!((s.value(id).data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let (mut s, id) = store_with(1.0, f64::NAN);
        let mut opt = Optimizer::new(UpdateRule::Adam, 0.1, 0.0);
        assert!(matches!(opt.step(&mut s, &[id]), Err(FivesError::Numeric(_))));
        assert_eq!(s.value(id).data()[0], 1.0);
        assert_eq!(opt.steps_taken(), 0);
    }
}
