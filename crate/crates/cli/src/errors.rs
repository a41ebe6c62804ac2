//! Exit codes: 2 configuration, 3 data, 4 numerical failure.

use pcmp_core::conformal::ConformalError;
use pcmp_core::dynamics::DynamicsError;
use pcmp_core::experiment::ExperimentError;
use pcmp_core::metrics::MetricsError;
use pcmp_core::net::NetError;
use pcmp_core::predictor::PredictError;
use pcmp_core::simkit::SimError;
use pcmp_core::trainer::TrainError;

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// Raised by the CLI itself for bad flag combinations or config files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn net(e: &NetError) -> u8 {
    match e {
        NetError::TanGuard { .. } | NetError::NonFiniteGradient { .. } => NUMERICAL,
        NetError::MissingParam(_) | NetError::ParamShape { .. } => DATA,
        _ => CONFIG,
    }
}

fn dynamics(_: &DynamicsError) -> u8 {
    NUMERICAL
}

fn predict(e: &PredictError) -> u8 {
    match e {
        PredictError::InvalidConfig(_) => CONFIG,
        PredictError::Net(n) => net(n),
        PredictError::Dynamics(d) => dynamics(d),
        _ => DATA,
    }
}

fn train(e: &TrainError) -> u8 {
    match e {
        TrainError::InvalidConfig(_) | TrainError::HorizonOutOfRange { .. } => CONFIG,
        TrainError::Diverged { .. } => NUMERICAL,
        TrainError::Predict(p) => predict(p),
        TrainError::Net(n) => net(n),
        _ => DATA,
    }
}

fn conformal(e: &ConformalError) -> u8 {
    match e {
        ConformalError::InvalidDelta(_) => CONFIG,
        ConformalError::NonFinite(_) => NUMERICAL,
        _ => DATA,
    }
}

fn sim(e: &SimError) -> u8 {
    match e {
        SimError::InvalidConfig(_) | SimError::InvalidTrack(_) => CONFIG,
        SimError::Dynamics(d) => dynamics(d),
        SimError::OffTrack { .. } => NUMERICAL,
        _ => DATA,
    }
}

fn experiment(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::TooFewWheelbases(_) => CONFIG,
        ExperimentError::Predict(p) => predict(p),
        ExperimentError::Train(t) => train(t),
        ExperimentError::Conformal(c) => conformal(c),
        ExperimentError::Dynamics(d) => dynamics(d),
        ExperimentError::Metrics(MetricsError::DegenerateBox { .. }) => CONFIG,
        _ => DATA,
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return experiment(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train(e);
        }
        if let Some(e) = cause.downcast_ref::<PredictError>() {
            return predict(e);
        }
        if let Some(e) = cause.downcast_ref::<ConformalError>() {
            return conformal(e);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return sim(e);
        }
        if let Some(e) = cause.downcast_ref::<NetError>() {
            return net(e);
        }
        if let Some(e) = cause.downcast_ref::<DynamicsError>() {
            return dynamics(e);
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification() {
        let cfg: anyhow::Error = anyhow::Error::new(ConfigError("bad".into())).context("while parsing");
        assert_eq!(exit_code(&cfg), CONFIG);
        let empty = anyhow::Error::new(SimError::EmptyDataset);
        assert_eq!(exit_code(&empty), DATA);
        let r: Result<(), TrainError> = Err(TrainError::Net(NetError::NonFiniteGradient { node: 1, op: "tan" }));
        assert_eq!(exit_code(&r.context("training").unwrap_err()), NUMERICAL);
        let cal = ExperimentError::Conformal(ConformalError::InsufficientCalibration {
            required: 19,
            got: 3,
            delta_bar: 0.025,
        });
        assert_eq!(exit_code(&anyhow::Error::new(cal)), DATA);
    }
}
