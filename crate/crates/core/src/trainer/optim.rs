//! First-order optimizers over a flat list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::net::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn momentum() -> Self {
        Optimizer::Momentum { beta: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers; empty until the first step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    /// Applies one update in place.
    pub fn step(&mut self, opt: &Optimizer, lr: f64, params: &mut [&mut Tensor], grads: &[Tensor]) {
        debug_assert_eq!(params.len(), grads.len());
        self.steps += 1;
        match *opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.axpy(-lr, g);
                }
            }
            Optimizer::Momentum { beta } => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
                }
                for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                        *mi = beta * *mi + gi;
                    }
                    p.axpy(-lr, m);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    let pd = p.data_mut();
                    for (i, gi) in g.data().iter().enumerate() {
                        let mi = &mut m.data_mut()[i];
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        let vi = &mut v.data_mut()[i];
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        pd[i] -= lr * (m.data()[i] / c1) / ((v.data()[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
