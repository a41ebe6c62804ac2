//! Surrogate vehicle dynamics and fixed-step integrators.
//!
//! The kinematic bicycle model here is the one used both to generate training
//! data and to decode predicted control intents into trajectories. Its
//! position equations carry a `(v + L/2)` term exactly as the model is
//! written in the method description; no attempt is made to "correct" the
//! units of that term.

mod feasibility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use feasibility::{is_feasible, FeasibilityReport, TransitionCheck, Violation};

/// Default sample interval (100 Hz).
pub const DEFAULT_TS: f64 = 0.01;

/// Wheelbase of the 1/10-scale vehicle used throughout (m).
pub const TRUE_WHEELBASE: f64 = 0.3302;

/// Acceleration bound used by the intent decoder and controllers (m/s²).
pub const DEFAULT_A_MAX: f64 = 20.0;

/// Steering bound, kept away from the `tan` singularity at π/2.
pub const DEFAULT_DELTA_MAX: f64 = 7.0 * std::f64::consts::PI / 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("steering angle {delta} is at or beyond the tan singularity (|delta| >= pi/2)")]
    SteeringSingularity { delta: f64 },
    #[error("non-finite state derivative {deriv:?}")]
    NonFinite { deriv: [f64; 4] },
    #[error("integrator step must be positive, got {ts}")]
    InvalidStep { ts: f64 },
    #[error("wheelbase must be positive and finite, got {0}")]
    InvalidWheelbase(f64),
    #[error("feasibility check needs at least two states, got {0}")]
    TrajectoryTooShort(usize),
    #[error("rollout needs at least one control")]
    EmptyControls,
    #[error("rollout failed at step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<DynamicsError>,
    },
}

/// Pose and speed of an agent at one instant.
///
/// `theta` is an unwrapped accumulator; nothing in this module reduces it
/// modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.theta, self.v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    fn add_scaled(self, d: [f64; 4], h: f64) -> Self {
        Self::new(
            self.x + h * d[0],
            self.y + h * d[1],
            self.theta + h * d[2],
            self.v + h * d[3],
        )
    }
}

/// Steering angle (rad) and longitudinal acceleration (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub a: f64,
}

impl ControlInput {
    pub const fn new(delta: f64, a: f64) -> Self {
        Self { delta, a }
    }
}

/// Symmetric box bounds on the controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlBounds {
    pub delta_max: f64,
    pub a_max: f64,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            delta_max: DEFAULT_DELTA_MAX,
            a_max: DEFAULT_A_MAX,
        }
    }
}

impl ControlBounds {
    pub fn contains(&self, u: &ControlInput) -> bool {
        u.delta.abs() <= self.delta_max && u.a.abs() <= self.a_max
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.delta.clamp(-self.delta_max, self.delta_max),
            u.a.clamp(-self.a_max, self.a_max),
        )
    }
}

/// Kinematic bicycle model parameters. The reference point sits midway
/// between the axle centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams {
    wheelbase: f64,
}

impl BicycleParams {
    pub fn new(wheelbase: f64) -> Result<Self, DynamicsError> {
        if !(wheelbase.is_finite() && wheelbase > 0.0) {
            return Err(DynamicsError::InvalidWheelbase(wheelbase));
        }
        Ok(Self { wheelbase })
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            wheelbase: TRUE_WHEELBASE,
        }
    }
}

/// Constant turn rate and velocity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrvParams {
    pub omega: f64,
    pub v: f64,
}

impl CtrvParams {
    /// Least-squares fit of yaw rate (slope of heading against time) and speed
    /// (mean of the measured speeds) over an evenly sampled window.
    ///
    /// A window of identical headings yields `omega = 0`.
    pub fn estimate(window: &[VehicleState], ts: f64) -> Option<Self> {
        if window.len() < 2 || !(ts > 0.0) {
            return None;
        }
        let n = window.len() as f64;
        let t_mean = ts * (n - 1.0) / 2.0;
        let th_mean = window.iter().map(|s| s.theta).sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for (k, s) in window.iter().enumerate() {
            let dt = k as f64 * ts - t_mean;
            sxy += dt * (s.theta - th_mean);
            sxx += dt * dt;
        }
        let omega = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let v = window.iter().map(|s| s.v).sum::<f64>() / n;
        let omega = if omega.is_finite() { omega } else { 0.0 };
        v.is_finite().then_some(Self { omega, v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: IntegrationMethod,
    pub ts: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Rk4,
            ts: DEFAULT_TS,
        }
    }
}

impl IntegratorConfig {
    pub fn euler(ts: f64) -> Self {
        Self {
            method: IntegrationMethod::Euler,
            ts,
        }
    }

    pub fn rk4(ts: f64) -> Self {
        Self {
            method: IntegrationMethod::Rk4,
            ts,
        }
    }
}

/// A continuous-time state derivative `ṗ = D(p, u)`.
pub trait Dynamics {
    fn deriv(&self, state: &VehicleState, u: &ControlInput) -> Result<[f64; 4], DynamicsError>;
}

impl Dynamics for BicycleParams {
    fn deriv(&self, state: &VehicleState, u: &ControlInput) -> Result<[f64; 4], DynamicsError> {
        bicycle_deriv(state, u, self)
    }
}

impl Dynamics for CtrvParams {
    fn deriv(&self, state: &VehicleState, _u: &ControlInput) -> Result<[f64; 4], DynamicsError> {
        ctrv_deriv(state, self)
    }
}

fn check_finite(deriv: [f64; 4]) -> Result<[f64; 4], DynamicsError> {
    if deriv.iter().all(|d| d.is_finite()) {
        Ok(deriv)
    } else {
        Err(DynamicsError::NonFinite { deriv })
    }
}

/// Kinematic bicycle derivative:
/// `ẋ = (v + L/2)cosθ, ẏ = (v + L/2)sinθ, θ̇ = v·tanδ/L, v̇ = a`.
pub fn bicycle_deriv(
    state: &VehicleState,
    u: &ControlInput,
    params: &BicycleParams,
) -> Result<[f64; 4], DynamicsError> {
    if !(u.delta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(DynamicsError::SteeringSingularity { delta: u.delta });
    }
    let l = params.wheelbase;
    let speed = state.v + l / 2.0;
    let (sin_t, cos_t) = state.theta.sin_cos();
    check_finite([
        speed * cos_t,
        speed * sin_t,
        state.v * u.delta.tan() / l,
        u.a,
    ])
}

/// CTRV derivative: `ẋ = v·cosθ, ẏ = v·sinθ, θ̇ = ω, v̇ = 0`, with `v` and `ω`
/// frozen in the parameters.
pub fn ctrv_deriv(state: &VehicleState, params: &CtrvParams) -> Result<[f64; 4], DynamicsError> {
    let (sin_t, cos_t) = state.theta.sin_cos();
    check_finite([params.v * cos_t, params.v * sin_t, params.omega, 0.0])
}

/// One integrator step with `u` held constant over the interval.
pub fn step<D: Dynamics + ?Sized>(
    state: &VehicleState,
    u: &ControlInput,
    dynamics: &D,
    cfg: &IntegratorConfig,
) -> Result<VehicleState, DynamicsError> {
    let h = cfg.ts;
    if !(h > 0.0 && h.is_finite()) {
        return Err(DynamicsError::InvalidStep { ts: h });
    }
    match cfg.method {
        IntegrationMethod::Euler => Ok(state.add_scaled(dynamics.deriv(state, u)?, h)),
        IntegrationMethod::Rk4 => {
            let k1 = dynamics.deriv(state, u)?;
            let k2 = dynamics.deriv(&state.add_scaled(k1, h / 2.0), u)?;
            let k3 = dynamics.deriv(&state.add_scaled(k2, h / 2.0), u)?;
            let k4 = dynamics.deriv(&state.add_scaled(k3, h), u)?;
            let mut avg = [0.0; 4];
            for i in 0..4 {
                avg[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
            }
            Ok(state.add_scaled(avg, h))
        }
    }
}

/// Applies `step` once per control. The returned trajectory excludes
/// `state0`; element `k` is the state after `k + 1` steps.
pub fn rollout<D: Dynamics + ?Sized>(
    state0: &VehicleState,
    controls: &[ControlInput],
    dynamics: &D,
    cfg: &IntegratorConfig,
) -> Result<Vec<VehicleState>, DynamicsError> {
    if controls.is_empty() {
        return Err(DynamicsError::EmptyControls);
    }
    let mut out = Vec::with_capacity(controls.len());
    let mut state = *state0;
    for (index, u) in controls.iter().enumerate() {
        state = step(&state, u, dynamics, cfg).map_err(|e| DynamicsError::AtStep {
            index,
            source: Box::new(e),
        })?;
        out.push(state);
    }
    Ok(out)
}

/// Rotates `(x, y, θ)` of a state about the origin by `phi`.
pub fn rotate_state(s: &VehicleState, phi: f64) -> VehicleState {
    let (sp, cp) = phi.sin_cos();
    VehicleState::new(cp * s.x - sp * s.y, sp * s.x + cp * s.y, s.theta + phi, s.v)
}
