//! Weighted L1 trajectory losses, scalar and on the tape.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dynamics::VehicleState;
use crate::net::{Tape, Tensor, Var};
use crate::predictor::TapeState;

/// Per-channel weights over `(x, y, θ, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: [f64; 4],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: [1.0, 1.0, 4.0, 0.0],
        }
    }
}

impl LossWeights {
    pub fn new(lambda: [f64; 4]) -> Result<Self, TrainError> {
        let w = Self { lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(TrainError::InvalidConfig(format!("loss weights must be nonnegative, got {:?}", self.lambda)));
        }
        Ok(())
    }

    fn step_error(&self, t: &VehicleState, p: &VehicleState) -> f64 {
        let (t, p) = (t.to_array(), p.to_array());
        (0..4).map(|c| self.lambda[c] * (t[c] - p[c]).abs()).sum()
    }
}

/// `(1/n) Σ_k Σ_c λ_c |F_kc − F̂_kc|` over the whole horizon.
pub fn weighted_l1_loss(truth: &[VehicleState], pred: &[VehicleState], w: &LossWeights) -> Result<f64, TrainError> {
    curriculum_loss(truth, pred, w, truth.len())
}

/// Same as [`weighted_l1_loss`] restricted to the first `h` steps.
pub fn curriculum_loss(
    truth: &[VehicleState],
    pred: &[VehicleState],
    w: &LossWeights,
    h: usize,
) -> Result<f64, TrainError> {
    if truth.len() != pred.len() {
        return Err(TrainError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if h == 0 || h > truth.len() {
        return Err(TrainError::HorizonOutOfRange { h, n: truth.len() });
    }
    Ok(truth[..h].iter().zip(&pred[..h]).map(|(t, p)| w.step_error(t, p)).sum::<f64>() / h as f64)
}

/// Batch mean of [`curriculum_loss`] recorded on the tape. `targets[b][k]`
/// is the truth for row `b`, step `k`; `norm` is the number of rows the
/// mean is taken over (larger than `targets.len()` when a batch is split).
pub fn tape_curriculum_loss(
    tape: &mut Tape,
    pred: &[TapeState],
    targets: &[&[VehicleState]],
    w: &LossWeights,
    h: usize,
    norm: usize,
) -> Result<Var, TrainError> {
    if h == 0 || h > pred.len() {
        return Err(TrainError::HorizonOutOfRange { h, n: pred.len() });
    }
    if let Some(t) = targets.iter().find(|t| t.len() < h) {
        return Err(TrainError::LengthMismatch {
            truth: t.len(),
            pred: pred.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (k, s) in pred.iter().take(h).enumerate() {
        for (c, node) in s.channels().iter().enumerate() {
            let lam = w.lambda[c];
            if lam == 0.0 {
                continue;
            }
            let col: Vec<f64> = targets.iter().map(|t| t[k].to_array()[c]).collect();
            let tgt = tape.leaf(Tensor::column(&col));
            let d = tape.sub(*node, tgt);
            let a = tape.abs(d);
            let sm = tape.sum(a);
            let term = tape.scale(sm, lam);
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => tape.leaf(Tensor::scalar(0.0)),
    };
    Ok(tape.scale(total, 1.0 / (h as f64 * norm as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: f64, y: f64, th: f64, v: f64) -> VehicleState {
        VehicleState::new(x, y, th, v)
    }

    #[test]
    fn examples() {
        let w = LossWeights::default();
        let a = vec![st(1.0, 2.0, 0.3, 4.0); 5];
        assert_eq!(weighted_l1_loss(&a, &a, &w).unwrap(), 0.0);
        let z = [st(0.0, 0.0, 0.0, 0.0)];
        assert_eq!(weighted_l1_loss(&[st(1.0, 0.0, 0.0, 5.0)], &z, &w).unwrap(), 1.0);
        assert_eq!(weighted_l1_loss(&[st(0.0, 0.0, 0.5, 0.0)], &z, &w).unwrap(), 2.0);
        assert!(weighted_l1_loss(&a, &a[..3], &w).is_err());
        assert!(LossWeights::new([1.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn curriculum_examples() {
        let w = LossWeights::default();
        let n = 8;
        let truth: Vec<_> = (0..n).map(|k| st(k as f64, 0.0, 0.0, 0.0)).collect();
        let zero = vec![st(0.0, 0.0, 0.0, 0.0); n];
        assert_eq!(
            curriculum_loss(&truth, &zero, &w, n).unwrap(),
            weighted_l1_loss(&truth, &zero, &w).unwrap()
        );
        // Linearly growing error k: mean of 0..h is (h-1)/2.
        let mut prev = f64::NEG_INFINITY;
        for h in 1..=n {
            let l = curriculum_loss(&truth, &zero, &w, h).unwrap();
            assert_eq!(l, (h as f64 - 1.0) / 2.0);
            assert!(l > prev);
            prev = l;
        }
        let mut moved = truth.clone();
        for s in &mut moved[1..] {
            s.x += 10.0;
        }
        assert_eq!(
            curriculum_loss(&truth, &zero, &w, 1).unwrap(),
            curriculum_loss(&moved, &zero, &w, 1).unwrap()
        );
        assert!(curriculum_loss(&truth, &zero, &w, 0).is_err());
        assert!(curriculum_loss(&truth, &zero, &w, n + 1).is_err());
    }

    #[test]
    fn tape_loss_matches_scalar() {
        let w = LossWeights::new([1.0, 0.5, 4.0, 0.0]).unwrap();
        let truth: Vec<Vec<VehicleState>> = (0..3)
            .map(|b| (0..4).map(|k| st(0.1 * k as f64, b as f64, 0.01 * k as f64, 2.0)).collect())
            .collect();
        let pred: Vec<Vec<VehicleState>> = (0..3)
            .map(|b| (0..4).map(|k| st(0.12 * k as f64, 0.9 * b as f64, -0.01, 1.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let nodes: Vec<TapeState> = (0..4)
            .map(|k| {
                let col = |c: usize| pred.iter().map(|p| p[k].to_array()[c]).collect::<Vec<_>>();
                TapeState {
                    x: tape.leaf(Tensor::column(&col(0))),
                    y: tape.leaf(Tensor::column(&col(1))),
                    theta: tape.leaf(Tensor::column(&col(2))),
                    v: tape.leaf(Tensor::column(&col(3))),
                }
            })
            .collect();
        let refs: Vec<&[VehicleState]> = truth.iter().map(|t| t.as_slice()).collect();
        for h in 1..=4 {
            let l = tape_curriculum_loss(&mut tape, &nodes, &refs, &w, h, 3).unwrap();
            let want: f64 = (0..3).map(|b| curriculum_loss(&truth[b], &pred[b], &w, h).unwrap()).sum::<f64>() / 3.0;
            assert!((tape.value(l).item() - want).abs() < 1e-14);
        }
    }
}
