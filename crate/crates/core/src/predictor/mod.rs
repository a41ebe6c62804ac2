//! Prediction heads: physics-constrained intent decoding (PCMP), a direct
//! LSTM baseline, and constant turn rate and velocity (CTRV).

mod io;
mod tape_rollout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::LocalFrame;
use crate::dynamics::{
    rollout, BicycleParams, ControlInput, CtrvParams, DynamicsError, IntegratorConfig, VehicleState, DEFAULT_A_MAX,
    DEFAULT_DELTA_MAX, TRUE_WHEELBASE,
};
use crate::net::{
    BoundedActivation, IntentNetwork, NetError, NetworkVars, Tape, Tensor, Var, ACCEL_CHANNEL, STEER_CHANNEL,
};
use crate::simkit::{wrap_angle, Sample, DEFAULT_HORIZON, DEFAULT_OBS_LEN};

pub use io::{read_windows_csv, write_predictions_csv};
pub use tape_rollout::{rollout_on_tape, step_on_tape, TapeState};

/// Per-step input features: local `x, y, θ`, speed, context.
pub const INPUT_FEATURES: usize = 5;

/// Rows per tape when predicting outside training.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("observation window has {got} states, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("CTRV needs at least two observed states")]
    CtrvWindow,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Pcmp,
    Lstm,
    Ctrv,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Pcmp => "pcmp",
            HeadKind::Lstm => "lstm",
            HeadKind::Ctrv => "ctrv",
        }
    }
}

/// Fixed multipliers applied to the localized inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub position: f64,
    pub heading: f64,
    pub speed: f64,
    pub context: f64,
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self {
            position: 2.0,
            heading: 5.0,
            speed: 0.2,
            context: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub obs_len: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub decoder_widths: Vec<usize>,
    pub wheelbase: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub integrator: IntegratorConfig,
    pub features: FeatureScale,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_len: DEFAULT_OBS_LEN,
            horizon: DEFAULT_HORIZON,
            hidden: 16,
            decoder_widths: vec![64],
            wheelbase: TRUE_WHEELBASE,
            a_max: DEFAULT_A_MAX,
            delta_max: DEFAULT_DELTA_MAX,
            integrator: IntegratorConfig::default(),
            features: FeatureScale::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |m: &str| Err(PredictError::InvalidConfig(m.to_string()));
        if self.obs_len == 0 || self.horizon == 0 || self.hidden == 0 {
            return bad("obs_len, horizon and hidden must be positive");
        }
        if !(self.wheelbase > 0.0) {
            return bad("wheelbase must be positive");
        }
        if !(self.a_max > 0.0 && self.delta_max > 0.0 && self.delta_max < std::f64::consts::FRAC_PI_2) {
            return bad("need a_max > 0 and 0 < delta_max < pi/2");
        }
        if !(self.integrator.ts > 0.0) {
            return bad("ts must be positive");
        }
        Ok(())
    }

    pub fn bicycle(&self) -> Result<BicycleParams, PredictError> {
        Ok(BicycleParams::new(self.wheelbase)?)
    }
}

/// Observed history plus context, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub states: Vec<VehicleState>,
    pub context: f64,
}

impl ObservationWindow {
    pub fn last(&self) -> VehicleState {
        self.states[self.states.len() - 1]
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::at(&self.last())
    }
}

impl From<&Sample> for ObservationWindow {
    fn from(s: &Sample) -> Self {
        Self {
            states: s.obs.clone(),
            context: s.context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub source: HeadKind,
    pub states: Vec<VehicleState>,
    /// Decoded intents (PCMP only).
    pub controls: Option<Vec<ControlInput>>,
}

/// A trained (or freshly initialised) neural head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub head: HeadKind,
    pub config: ModelConfig,
    pub net: IntentNetwork,
}

fn output_width(head: HeadKind, horizon: usize) -> Result<usize, PredictError> {
    match head {
        HeadKind::Pcmp => Ok(2 * horizon),
        HeadKind::Lstm => Ok(4 * horizon),
        HeadKind::Ctrv => Err(PredictError::InvalidConfig("CTRV has no network".into())),
    }
}

impl Model {
    pub fn new(head: HeadKind, config: ModelConfig, seed: u64) -> Result<Self, PredictError> {
        config.validate()?;
        let out = output_width(head, config.horizon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = IntentNetwork::init(INPUT_FEATURES, config.hidden, &config.decoder_widths, out, &mut rng);
        Ok(Self { head, config, net })
    }

    pub fn zeros(head: HeadKind, config: ModelConfig) -> Result<Self, PredictError> {
        config.validate()?;
        let out = output_width(head, config.horizon)?;
        let net = IntentNetwork::zeros(INPUT_FEATURES, config.hidden, &config.decoder_widths, out);
        Ok(Self { head, config, net })
    }

    pub fn activation(&self) -> BoundedActivation {
        BoundedActivation::controls(self.config.a_max, self.config.delta_max).expect("validated bounds")
    }

    /// Localized, scaled features for one window (`obs_len × INPUT_FEATURES`).
    pub fn features(&self, w: &ObservationWindow) -> Result<Vec<[f64; INPUT_FEATURES]>, PredictError> {
        if w.states.len() != self.config.obs_len {
            return Err(PredictError::WindowLength {
                expected: self.config.obs_len,
                got: w.states.len(),
            });
        }
        let f = w.frame();
        let sc = &self.config.features;
        Ok(w.states
            .iter()
            .map(|s| {
                let l = f.to_local(s);
                [
                    sc.position * l.x,
                    sc.position * l.y,
                    sc.heading * wrap_angle(l.theta),
                    sc.speed * l.v,
                    sc.context * w.context,
                ]
            })
            .collect())
    }

    /// Records the head on `tape` for a batch and returns local-frame
    /// predicted states (excluding the start) and, for PCMP, the bounded
    /// `B × 2n` control node.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        vars: &NetworkVars,
        windows: &[&ObservationWindow],
    ) -> Result<BatchForward, PredictError> {
        let b = windows.len();
        let l = self.config.obs_len;
        let feats = windows
            .iter()
            .map(|w| self.features(w))
            .collect::<Result<Vec<_>, _>>()?;
        let mut inputs = Vec::with_capacity(l);
        for t in 0..l {
            let mut data = Vec::with_capacity(b * INPUT_FEATURES);
            for f in &feats {
                data.extend_from_slice(&f[t]);
            }
            inputs.push(tape.leaf(Tensor::from_vec(b, INPUT_FEATURES, data)));
        }
        let raw = self.net.forward(tape, vars, &inputs)?;
        let zeros = Tensor::zeros(b, 1);
        let v0: Vec<f64> = windows.iter().map(|w| w.last().v).collect();
        let s0 = TapeState {
            x: tape.leaf(zeros.clone()),
            y: tape.leaf(zeros.clone()),
            theta: tape.leaf(zeros),
            v: tape.leaf(Tensor::column(&v0)),
        };
        let n = self.config.horizon;
        let cfg = &self.config;
        match self.head {
            HeadKind::Pcmp => {
                let u = self.activation().apply_on_tape(tape, raw);
                let mut deltas = Vec::with_capacity(n);
                let mut accels = Vec::with_capacity(n);
                for k in 0..n {
                    accels.push(tape.select(u, 2 * k + ACCEL_CHANNEL, 1));
                    deltas.push(tape.select(u, 2 * k + STEER_CHANNEL, 1));
                }
                let states = rollout_on_tape(
                    tape,
                    s0,
                    &deltas,
                    &accels,
                    cfg.wheelbase,
                    cfg.integrator.method,
                    cfg.integrator.ts,
                )?;
                Ok(BatchForward {
                    states,
                    raw,
                    controls: Some(u),
                })
            }
            HeadKind::Lstm => {
                let ts = cfg.integrator.ts;
                let mut s = s0;
                let mut states = Vec::with_capacity(n);
                for k in 0..n {
                    let mut ch = s.channels();
                    for (c, slot) in ch.iter_mut().enumerate() {
                        let rate = tape.select(raw, 4 * k + c, 1);
                        let inc = tape.scale(rate, ts);
                        *slot = tape.add(*slot, inc);
                    }
                    s = TapeState {
                        x: ch[0],
                        y: ch[1],
                        theta: ch[2],
                        v: ch[3],
                    };
                    states.push(s);
                }
                Ok(BatchForward {
                    states,
                    raw,
                    controls: None,
                })
            }
            HeadKind::Ctrv => unreachable!("models are never CTRV"),
        }
    }

    /// Predicts a batch of windows in world coordinates.
    pub fn predict_many(&self, windows: &[ObservationWindow]) -> Result<Vec<PredictedTrajectory>, PredictError> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.net.bind(&mut tape);
            let refs: Vec<&ObservationWindow> = chunk.iter().collect();
            let fwd = self.forward_batch(&mut tape, &vars, &refs)?;
            for (r, w) in chunk.iter().enumerate() {
                out.push(self.finish(&tape, &fwd, r, w)?);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, w: &ObservationWindow) -> Result<PredictedTrajectory, PredictError> {
        Ok(self.predict_many(std::slice::from_ref(w))?.remove(0))
    }

    fn finish(
        &self,
        tape: &Tape,
        fwd: &BatchForward,
        row: usize,
        w: &ObservationWindow,
    ) -> Result<PredictedTrajectory, PredictError> {
        let frame = w.frame();
        match self.head {
            HeadKind::Pcmp => {
                // Controls are re-bounded from the raw outputs so they stay
                // strictly inside the limits even where tanh rounds to ±1.
                let raw = tape.value(fwd.raw).row_slice(row);
                let u = self.activation().apply(raw);
                let controls: Vec<ControlInput> = u
                    .chunks(2)
                    .map(|p| ControlInput::new(p[STEER_CHANNEL], p[ACCEL_CHANNEL]))
                    .collect();
                let states = rollout(&w.last(), &controls, &self.config.bicycle()?, &self.config.integrator)?;
                Ok(PredictedTrajectory {
                    source: HeadKind::Pcmp,
                    states,
                    controls: Some(controls),
                })
            }
            _ => {
                let states = fwd
                    .states
                    .iter()
                    .map(|s| {
                        let g = |v: Var| tape.value(v).get(row, 0);
                        frame.from_local(&VehicleState::new(g(s.x), g(s.y), g(s.theta), g(s.v)))
                    })
                    .collect();
                Ok(PredictedTrajectory {
                    source: self.head,
                    states,
                    controls: None,
                })
            }
        }
    }
}

/// Tape nodes produced by [`Model::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub states: Vec<TapeState>,
    /// Undecoded network output.
    pub raw: Var,
    pub controls: Option<Var>,
}

pub fn pcmp_predict(w: &ObservationWindow, model: &Model) -> Result<PredictedTrajectory, PredictError> {
    debug_assert_eq!(model.head, HeadKind::Pcmp);
    model.predict(w)
}

pub fn lstm_predict(w: &ObservationWindow, model: &Model) -> Result<PredictedTrajectory, PredictError> {
    debug_assert_eq!(model.head, HeadKind::Lstm);
    model.predict(w)
}

/// Extrapolates the least-squares yaw rate and mean speed of the window.
pub fn ctrv_predict(
    w: &ObservationWindow,
    cfg: &IntegratorConfig,
    horizon: usize,
) -> Result<PredictedTrajectory, PredictError> {
    if w.states.len() < 2 {
        return Err(PredictError::CtrvWindow);
    }
    let params = CtrvParams::estimate(&w.states, cfg.ts).unwrap_or(CtrvParams {
        omega: 0.0,
        v: w.last().v,
    });
    let controls = vec![ControlInput::new(0.0, 0.0); horizon];
    let mut start = w.last();
    start.v = params.v;
    let states = rollout(&start, &controls, &params, cfg)?;
    Ok(PredictedTrajectory {
        source: HeadKind::Ctrv,
        states,
        controls: None,
    })
}

/// Any of the three heads behind one interface.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Predictor {
    Neural(Model),
    Ctrv { integrator: IntegratorConfig, horizon: usize },
}

impl Predictor {
    pub fn kind(&self) -> HeadKind {
        match self {
            Predictor::Neural(m) => m.head,
            Predictor::Ctrv { .. } => HeadKind::Ctrv,
        }
    }

    pub fn predict_many(&self, windows: &[ObservationWindow]) -> Result<Vec<PredictedTrajectory>, PredictError> {
        match self {
            Predictor::Neural(m) => m.predict_many(windows),
            Predictor::Ctrv { integrator, horizon } => {
                windows.iter().map(|w| ctrv_predict(w, integrator, *horizon)).collect()
            }
        }
    }

    pub fn predict_samples(&self, samples: &[Sample]) -> Result<Vec<PredictedTrajectory>, PredictError> {
        let w: Vec<ObservationWindow> = samples.iter().map(ObservationWindow::from).collect();
        self.predict_many(&w)
    }
}

/// Turn direction read off a steering sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnIntent {
    Left,
    Right,
    Straight,
    Mixed,
}

/// Which steering sign is reported as a left turn.
///
/// With `θ̇ = v·tanδ/L` in a y-up frame, negative steering rotates the
/// heading clockwise. `NegativeIsLeft` keeps the labelling used by the
/// original intent plots; `PositiveIsLeft` is the y-up physical reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringConvention {
    #[default]
    NegativeIsLeft,
    PositiveIsLeft,
}

pub fn turn_intent(controls: &[ControlInput], deadband: f64, convention: SteeringConvention) -> TurnIntent {
    let pos = controls.iter().all(|u| u.delta > deadband);
    let neg = controls.iter().all(|u| u.delta < -deadband);
    let straight = controls.iter().all(|u| u.delta.abs() <= deadband);
    let (left, right) = match convention {
        SteeringConvention::NegativeIsLeft => (neg, pos),
        SteeringConvention::PositiveIsLeft => (pos, neg),
    };
    if controls.is_empty() || straight {
        TurnIntent::Straight
    } else if left {
        TurnIntent::Left
    } else if right {
        TurnIntent::Right
    } else {
        TurnIntent::Mixed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{is_feasible, rotate_state, ControlBounds, IntegrationMethod};
    use approx::assert_abs_diff_eq;

    fn window() -> ObservationWindow {
        ObservationWindow {
            states: (0..10)
                .map(|k| VehicleState::new(1.0 + 0.05 * k as f64, 2.0 + 0.01 * k as f64, 0.2 + 0.01 * k as f64, 5.0))
                .collect(),
            context: 0.1,
        }
    }

    fn bounds(cfg: &ModelConfig) -> ControlBounds {
        ControlBounds {
            delta_max: cfg.delta_max,
            a_max: cfg.a_max,
        }
    }

    #[test]
    fn zero_pcmp_drives_straight_at_constant_speed() {
        let m = Model::zeros(HeadKind::Pcmp, ModelConfig::default()).unwrap();
        let w = window();
        let p = pcmp_predict(&w, &m).unwrap();
        let last = w.last();
        assert_eq!(p.states.len(), 60);
        for (k, s) in p.states.iter().enumerate() {
            assert_eq!(s.v, last.v);
            assert_eq!(s.theta, last.theta);
            let dist = (k + 1) as f64 * 0.01 * (last.v + TRUE_WHEELBASE / 2.0);
            assert_abs_diff_eq!(s.x, last.x + dist * last.theta.cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(s.y, last.y + dist * last.theta.sin(), epsilon = 1e-12);
        }
        assert!(p.controls.unwrap().iter().all(|u| u.a == 0.0 && u.delta == 0.0));
    }

    #[test]
    fn zero_lstm_stays_at_the_last_state() {
        let m = Model::zeros(HeadKind::Lstm, ModelConfig::default()).unwrap();
        let w = window();
        let p = lstm_predict(&w, &m).unwrap();
        for s in &p.states {
            assert_abs_diff_eq!(s.x, w.last().x, epsilon = 1e-12);
            assert_abs_diff_eq!(s.y, w.last().y, epsilon = 1e-12);
            assert_abs_diff_eq!(s.theta, w.last().theta, epsilon = 1e-12);
            assert_abs_diff_eq!(s.v, w.last().v, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_pcmp_is_feasible_with_its_controls_as_witnesses() {
        let cfg = ModelConfig::default();
        for seed in 0..3 {
            let m = Model::new(HeadKind::Pcmp, cfg.clone(), seed).unwrap();
            let w = window();
            let p = m.predict(&w).unwrap();
            let mut traj = vec![w.last()];
            traj.extend(&p.states);
            let rep = is_feasible(&traj, &cfg.bicycle().unwrap(), &cfg.integrator, &bounds(&cfg), 1e-6).unwrap();
            assert!(rep.is_feasible());
            for (a, b) in rep.witnesses().iter().zip(p.controls.as_ref().unwrap()) {
                assert!((a.delta - b.delta).abs() < 1e-6 && (a.a - b.a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pcmp_is_rotation_equivariant() {
        let m = Model::new(HeadKind::Pcmp, ModelConfig::default(), 5).unwrap();
        let w = window();
        let phi = -2.3;
        let rw = ObservationWindow {
            states: w.states.iter().map(|s| rotate_state(s, phi)).collect(),
            context: w.context,
        };
        let a = m.predict(&w).unwrap();
        let b = m.predict(&rw).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            let xr = rotate_state(x, phi);
            for (p, q) in xr.to_array().iter().zip(y.to_array()) {
                assert!((p - q).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn ctrv_examples() {
        let cfg = IntegratorConfig::rk4(0.01);
        let straight = ObservationWindow {
            states: (0..10).map(|k| VehicleState::new(0.03 * k as f64, 0.0, 0.0, 3.0)).collect(),
            context: 0.0,
        };
        let p = ctrv_predict(&straight, &cfg, 60).unwrap();
        for (k, s) in p.states.iter().enumerate() {
            assert_abs_diff_eq!(s.x, 0.27 + 0.03 * (k + 1) as f64, epsilon = 1e-12);
            assert_eq!(s.y, 0.0);
        }
        // Constant yaw rate on a circle of radius v/ω.
        let (v, om, r) = (2.0, 0.5, 4.0);
        let circ = |t: f64| VehicleState::new(r * (om * t).sin(), r - r * (om * t).cos(), om * t, v);
        let hist = ObservationWindow {
            states: (0..10).map(|k| circ(k as f64 * 0.01)).collect(),
            context: 0.0,
        };
        let p = ctrv_predict(&hist, &cfg, 60).unwrap();
        for (k, s) in p.states.iter().enumerate() {
            let want = circ((k + 10) as f64 * 0.01);
            assert!((s.x - want.x).abs() <= 1e-6 && (s.y - want.y).abs() <= 1e-6);
        }
        let deg = ObservationWindow {
            states: vec![VehicleState::new(1.0, 1.0, 0.3, 0.0); 10],
            context: 0.0,
        };
        assert!(ctrv_predict(&deg, &cfg, 5).unwrap().states.iter().all(|s| s.x == 1.0));
    }

    #[test]
    fn pcmp_rate_envelopes() {
        let cfg = ModelConfig {
            integrator: IntegratorConfig {
                method: IntegrationMethod::Euler,
                ts: 0.01,
            },
            ..ModelConfig::default()
        };
        let m = Model::new(HeadKind::Pcmp, cfg.clone(), 9).unwrap();
        let w = window();
        let p = m.predict(&w).unwrap();
        let mut prev = w.last();
        let vmax = p.states.iter().chain([&prev]).map(|s| s.v.abs()).fold(0.0, f64::max);
        for s in &p.states {
            assert!((s.v - prev.v).abs() <= cfg.a_max * cfg.integrator.ts + 1e-12);
            assert!((s.theta - prev.theta).abs() <= cfg.integrator.ts * vmax * cfg.delta_max.tan() / cfg.wheelbase + 1e-12);
            prev = *s;
        }
    }

    #[test]
    fn turn_labels_follow_steering_sign() {
        let u = |d: f64| ControlInput::new(d, 0.0);
        let neg = SteeringConvention::NegativeIsLeft;
        assert_eq!(turn_intent(&[u(-0.1), u(-0.2)], 1e-3, neg), TurnIntent::Left);
        assert_eq!(turn_intent(&[u(0.1), u(0.2)], 1e-3, neg), TurnIntent::Right);
        assert_eq!(turn_intent(&[u(0.0), u(1e-4)], 1e-3, neg), TurnIntent::Straight);
        assert_eq!(turn_intent(&[u(-0.1), u(0.2)], 1e-3, neg), TurnIntent::Mixed);
        let pos = SteeringConvention::PositiveIsLeft;
        assert_eq!(turn_intent(&[u(0.1), u(0.2)], 1e-3, pos), TurnIntent::Left);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let m = Model::zeros(HeadKind::Pcmp, ModelConfig::default()).unwrap();
        let mut w = window();
        w.states.pop();
        assert!(matches!(m.predict(&w), Err(PredictError::WindowLength { .. })));
    }
}
