//! Physics-constrained motion prediction.
//!
//! Control intents predicted by a small recurrent network are bounded and
//! decoded through a kinematic bicycle model, so every predicted trajectory
//! is dynamically feasible. Prediction uncertainty is quantified with
//! conformalized quantile regression over rotated-rectangle and Frenet
//! regions.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod experiment;
pub mod net;
pub mod conformal;
pub mod metrics;
pub mod predictor;
pub mod simkit;
pub mod trainer;
