//! Dynamic-feasibility checking for the kinematic bicycle model.
//!
//! A transition `p → q` is feasible when some bounded control `u` reproduces
//! `q` from `p` in one integrator step. Acceleration follows from `Δv` in
//! closed form, steering from `Δθ`; under RK4 the closed form seeds a small
//! Newton solve on the `(θ, v)` residual, which also covers any mismatch
//! between the closed form and the integrator.

use super::{step, BicycleParams, ControlBounds, ControlInput, DynamicsError, IntegratorConfig, VehicleState};

const INVERSION_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 25;
const DEGENERATE_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Zero speed but a nonzero heading change: no steering angle explains it.
    Degenerate { index: usize, dtheta: f64 },
    ControlOutOfBounds { index: usize, witness: ControlInput },
    Residual { index: usize, residual: f64, witness: ControlInput },
    Dynamics { index: usize, error: DynamicsError },
}

impl Violation {
    pub fn index(&self) -> usize {
        match self {
            Violation::Degenerate { index, .. }
            | Violation::ControlOutOfBounds { index, .. }
            | Violation::Residual { index, .. }
            | Violation::Dynamics { index, .. } => *index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionCheck {
    pub witness: ControlInput,
    /// Max-abs difference between the reproduced and the observed next state.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// One entry per transition checked before the first violation.
    pub transitions: Vec<TransitionCheck>,
    pub violation: Option<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violation.is_none()
    }

    pub fn witnesses(&self) -> Vec<ControlInput> {
        self.transitions.iter().map(|t| t.witness).collect()
    }
}

fn max_abs_diff(a: &VehicleState, b: &VehicleState) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Closed-form witness. Exact under Euler; under RK4 the heading integrates
/// the speed at the interval midpoint, which is also exact for constant `a`.
fn closed_form_guess(
    p: &VehicleState,
    q: &VehicleState,
    params: &BicycleParams,
    cfg: &IntegratorConfig,
) -> Result<ControlInput, f64> {
    let ts = cfg.ts;
    let a = (q.v - p.v) / ts;
    let speed = match cfg.method {
        super::IntegrationMethod::Euler => p.v,
        super::IntegrationMethod::Rk4 => p.v + 0.5 * ts * a,
    };
    let dtheta = q.theta - p.theta;
    if speed.abs() < DEGENERATE_SPEED {
        return if dtheta.abs() <= INVERSION_TOL {
            Ok(ControlInput::new(0.0, a))
        } else {
            Err(dtheta)
        };
    }
    let delta = (dtheta * params.wheelbase() / (ts * speed)).atan();
    Ok(ControlInput::new(delta, a))
}

/// Newton refinement of `(δ, a)` on the `(θ, v)` components of one step.
fn refine(
    p: &VehicleState,
    q: &VehicleState,
    mut u: ControlInput,
    params: &BicycleParams,
    cfg: &IntegratorConfig,
) -> Result<ControlInput, DynamicsError> {
    let lim = std::f64::consts::FRAC_PI_2 - 1e-6;
    let residual = |u: &ControlInput| -> Result<[f64; 2], DynamicsError> {
        let r = step(p, u, params, cfg)?;
        Ok([r.theta - q.theta, r.v - q.v])
    };
    for _ in 0..MAX_NEWTON_ITERS {
        let r = residual(&u)?;
        if r[0].abs().max(r[1].abs()) <= INVERSION_TOL {
            break;
        }
        let hd = 1e-7 * (1.0 + u.delta.abs());
        let ha = 1e-7 * (1.0 + u.a.abs());
        let rd = residual(&ControlInput::new(u.delta + hd, u.a))?;
        let ra = residual(&ControlInput::new(u.delta, u.a + ha))?;
        let j = [
            [(rd[0] - r[0]) / hd, (ra[0] - r[0]) / ha],
            [(rd[1] - r[1]) / hd, (ra[1] - r[1]) / ha],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let dd = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let da = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        u = ControlInput::new((u.delta - dd).clamp(-lim, lim), u.a - da);
    }
    Ok(u)
}

/// Checks every transition of `traj` under the bicycle model and returns the
/// recovered controls, stopping at the first violation.
pub fn is_feasible(
    traj: &[VehicleState],
    params: &BicycleParams,
    cfg: &IntegratorConfig,
    bounds: &ControlBounds,
    tol: f64,
) -> Result<FeasibilityReport, DynamicsError> {
    if traj.len() < 2 {
        return Err(DynamicsError::TrajectoryTooShort(traj.len()));
    }
    if !(cfg.ts > 0.0 && cfg.ts.is_finite()) {
        return Err(DynamicsError::InvalidStep { ts: cfg.ts });
    }
    let mut transitions = Vec::with_capacity(traj.len() - 1);
    for (index, pair) in traj.windows(2).enumerate() {
        let (p, q) = (&pair[0], &pair[1]);
        let fail = |violation| {
            Ok(FeasibilityReport {
                transitions: transitions.clone(),
                violation: Some(violation),
            })
        };
        let guess = match closed_form_guess(p, q, params, cfg) {
            Ok(u) => u,
            Err(dtheta) => return fail(Violation::Degenerate { index, dtheta }),
        };
        let witness = match refine(p, q, guess, params, cfg) {
            Ok(u) => u,
            Err(error) => return fail(Violation::Dynamics { index, error }),
        };
        // A tiny relative slack on the bound absorbs inversion round-off.
        let slack = ControlBounds {
            delta_max: bounds.delta_max * (1.0 + 1e-12),
            a_max: bounds.a_max * (1.0 + 1e-12) + 1e-9,
        };
        if !slack.contains(&witness) {
            return fail(Violation::ControlOutOfBounds { index, witness });
        }
        let reproduced = match step(p, &witness, params, cfg) {
            Ok(s) => s,
            Err(error) => return fail(Violation::Dynamics { index, error }),
        };
        let residual = max_abs_diff(&reproduced, q);
        if !(residual <= tol) {
            return fail(Violation::Residual { index, residual, witness });
        }
        transitions.push(TransitionCheck { witness, residual });
    }
    Ok(FeasibilityReport {
        transitions,
        violation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, TRUE_WHEELBASE};

    fn bike() -> BicycleParams {
        BicycleParams::new(TRUE_WHEELBASE).unwrap()
    }

    fn controls() -> Vec<ControlInput> {
        (0..60)
            .map(|k| {
                let t = k as f64 * 0.01;
                ControlInput::new(0.3 * (3.0 * t).sin(), 4.0 * (2.0 * t).cos())
            })
            .collect()
    }

    #[test]
    fn rollout_is_feasible_with_original_witnesses() {
        for cfg in [IntegratorConfig::euler(0.01), IntegratorConfig::rk4(0.01)] {
            let s0 = VehicleState::new(3.0, -1.0, 0.7, 4.0);
            let u = controls();
            let mut traj = vec![s0];
            traj.extend(rollout(&s0, &u, &bike(), &cfg).unwrap());
            let rep = is_feasible(&traj, &bike(), &cfg, &ControlBounds::default(), 1e-6).unwrap();
            assert!(rep.is_feasible(), "{:?}", rep.violation);
            for (w, u) in rep.witnesses().iter().zip(&u) {
                assert!((w.delta - u.delta).abs() <= 1e-6, "{w:?} {u:?}");
                assert!((w.a - u.a).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn teleport_is_infeasible() {
        let p = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let q = VehicleState::new(10.0, 0.0, 0.0, 1.0);
        let rep = is_feasible(&[p, q], &bike(), &IntegratorConfig::rk4(0.01), &ControlBounds::default(), 1e-6).unwrap();
        assert!(matches!(rep.violation, Some(Violation::Residual { index: 0, .. })));
    }

    #[test]
    fn excessive_acceleration_is_out_of_bounds() {
        let p = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let q = VehicleState::new(0.011651, 0.0, 0.0, 1.5);
        let rep = is_feasible(&[p, q], &bike(), &IntegratorConfig::euler(0.01), &ControlBounds::default(), 1e-6).unwrap();
        assert!(matches!(rep.violation, Some(Violation::ControlOutOfBounds { .. })));
    }

    #[test]
    fn turning_in_place_at_zero_speed_is_degenerate() {
        let p = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let q = VehicleState::new(0.001651, 0.0, 0.1, 0.0);
        let rep = is_feasible(&[p, q], &bike(), &IntegratorConfig::euler(0.01), &ControlBounds::default(), 1e-6).unwrap();
        assert!(matches!(rep.violation, Some(Violation::Degenerate { index: 0, .. })));
    }

    #[test]
    fn short_trajectory_rejected() {
        let p = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        assert!(is_feasible(&[p], &bike(), &IntegratorConfig::euler(0.01), &ControlBounds::default(), 1e-6).is_err());
    }
}
