use serde::{Deserialize, Serialize};

use super::RaceLine;
use crate::dynamics::{ControlBounds, ControlInput, VehicleState};

/// Floor on the Stanley denominator so the cross-track term stays finite as
/// `v → 0`.
pub const STANLEY_MIN_DENOM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    PurePursuit,
    Stanley,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 2] = [ControllerKind::PurePursuit, ControllerKind::Stanley];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::PurePursuit => "pure_pursuit",
            ControllerKind::Stanley => "stanley",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Pure pursuit lookahead `ℓ_d = base + per_speed·v` (m).
    pub lookahead_base: f64,
    pub lookahead_per_speed: f64,
    pub stanley_gain: f64,
    /// Added to `v` in the Stanley cross-track denominator.
    pub stanley_softening: f64,
    /// Proportional speed-tracking gain (1/s).
    pub speed_gain: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            lookahead_base: 0.6,
            lookahead_per_speed: 0.15,
            stanley_gain: 2.0,
            stanley_softening: 0.0,
            speed_gain: 3.0,
        }
    }
}

/// Geometric pure-pursuit steering towards `goal`:
/// `δ = atan(2L·sin α / ℓ_d)` with `α` the bearing of the goal in the
/// vehicle frame.
pub fn pure_pursuit_steer(state: &VehicleState, goal: [f64; 2], lookahead: f64, wheelbase: f64) -> f64 {
    let alpha = (goal[1] - state.y).atan2(goal[0] - state.x) - state.theta;
    (2.0 * wheelbase * alpha.sin() / lookahead).atan()
}

/// Stanley steering: heading error plus `atan2(k·e, v + softening)`, where
/// `e > 0` means the path lies to the vehicle's left.
pub fn stanley_steer(heading_error: f64, cross_track: f64, v: f64, gain: f64, softening: f64) -> f64 {
    let denom = (v + softening).max(STANLEY_MIN_DENOM);
    heading_error + (gain * cross_track).atan2(denom)
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

/// Stateful path tracker; remembers the last matched path index so that
/// nearest-point queries stay local.
#[derive(Debug, Clone)]
pub struct Tracker<'a> {
    pub kind: ControllerKind,
    pub params: ControllerParams,
    pub line: &'a RaceLine,
    pub speed_scale: f64,
    pub wheelbase: f64,
    pub bounds: ControlBounds,
    hint: Option<usize>,
}

const SEARCH_WINDOW: usize = 40;

impl<'a> Tracker<'a> {
    pub fn new(
        kind: ControllerKind,
        params: ControllerParams,
        line: &'a RaceLine,
        speed_scale: f64,
        wheelbase: f64,
        bounds: ControlBounds,
    ) -> Self {
        Self {
            kind,
            params,
            line,
            speed_scale,
            wheelbase,
            bounds,
            hint: None,
        }
    }

    pub fn control(&mut self, state: &VehicleState) -> ControlInput {
        let p = &self.params;
        let (delta, target) = match self.kind {
            ControllerKind::PurePursuit => {
                let pr = self.line.project([state.x, state.y], self.hint, SEARCH_WINDOW);
                self.hint = Some(pr.segment);
                let ld = p.lookahead_base + p.lookahead_per_speed * state.v.max(0.0);
                let goal = self.line.goal_point([state.x, state.y], pr.segment, ld);
                (pure_pursuit_steer(state, goal, ld, self.wheelbase), pr.speed)
            }
            ControllerKind::Stanley => {
                let (s, c) = state.theta.sin_cos();
                let front = [state.x + c * self.wheelbase / 2.0, state.y + s * self.wheelbase / 2.0];
                let pr = self.line.project(front, self.hint, SEARCH_WINDOW);
                self.hint = Some(pr.segment);
                let heading_error = wrap_angle(pr.heading - state.theta);
                // The path is left of the vehicle when the vehicle is right of the path.
                let e = -pr.lateral;
                (
                    stanley_steer(heading_error, e, state.v, p.stanley_gain, p.stanley_softening),
                    pr.speed,
                )
            }
        };
        let a = p.speed_gain * (target * self.speed_scale - state.v);
        self.bounds.clamp(ControlInput::new(delta, a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TRUE_WHEELBASE;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn pure_pursuit_examples() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 2.0);
        assert_eq!(pure_pursuit_steer(&s, [1.0, 0.0], 1.0, TRUE_WHEELBASE), 0.0);
        let d = pure_pursuit_steer(&s, [0.0, 1.2], 1.2, TRUE_WHEELBASE);
        assert_abs_diff_eq!(d, (2.0 * TRUE_WHEELBASE / 1.2f64).atan(), epsilon = 1e-12);
        // Rotated vehicle, goal straight ahead.
        let r = VehicleState::new(1.0, 1.0, FRAC_PI_2, 2.0);
        assert_abs_diff_eq!(pure_pursuit_steer(&r, [1.0, 3.0], 2.0, TRUE_WHEELBASE), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stanley_examples() {
        assert_eq!(stanley_steer(0.0, 0.0, 3.0, 1.0, 0.0), 0.0);
        assert_abs_diff_eq!(stanley_steer(0.0, 1.0, 1.0, 1.0, 0.0), FRAC_PI_4, epsilon = 1e-15);
        let slow = stanley_steer(0.0, 1.0, 0.0, 1.0, 0.0);
        assert!(slow.is_finite() && slow < FRAC_PI_2);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-7.0, -3.2, 0.0, 3.2, 9.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert_abs_diff_eq!(((a - w) / (2.0 * std::f64::consts::PI)).fract().abs(), 0.0, epsilon = 1e-12);
        }
    }
}
