use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControllerKind, ControllerParams, LineKind, RaceLine, SimError, Track, Tracker};
use crate::conformal::to_frenet;
use crate::dynamics::{step, BicycleParams, ControlBounds, ControlInput, IntegratorConfig, VehicleState};

/// Identifies one generation cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub line: LineKind,
    pub controller: ControllerKind,
    pub speed: f64,
}

impl Stratum {
    pub fn label(&self) -> String {
        format!("{}/{}/{:.2}", self.line.as_str(), self.controller.as_str(), self.speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub stratum: Stratum,
    pub ts: f64,
    /// `controls.len() + 1` states; `states[k + 1]` follows `states[k]`
    /// under `controls[k]`.
    pub states: Vec<VehicleState>,
    pub controls: Vec<ControlInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub wheelbase: f64,
    pub integrator: IntegratorConfig,
    pub bounds: ControlBounds,
    pub controller: ControllerParams,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            wheelbase: crate::dynamics::TRUE_WHEELBASE,
            integrator: IntegratorConfig::default(),
            bounds: ControlBounds::default(),
            controller: ControllerParams::default(),
        }
    }
}

/// Closed-loop simulation from a seed-chosen point on the line, starting at
/// the line's heading and scaled target speed.
pub fn simulate(
    track: &Track,
    line: &RaceLine,
    controller: ControllerKind,
    speed_scale: f64,
    duration: f64,
    seed: u64,
    settings: &SimSettings,
) -> Result<Trace, SimError> {
    let ts = settings.integrator.ts;
    let steps = (duration / ts).round().max(0.0) as usize;
    let bike = BicycleParams::new(settings.wheelbase)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..line.len());
    let p0 = line.points()[start];
    let mut state = VehicleState::new(p0[0], p0[1], line.headings()[start], line.speeds()[start] * speed_scale);
    let mut tracker = Tracker::new(
        controller,
        settings.controller,
        line,
        speed_scale,
        settings.wheelbase,
        settings.bounds,
    );
    let limit = 2.0 * 2.0 * track.min_half_width();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(state);
    for k in 0..steps {
        let u = tracker.control(&state);
        state = step(&state, &u, &bike, &settings.integrator)?;
        if k % 10 == 9 {
            let f = to_frenet([state.x, state.y], track);
            if f.d.abs() > limit {
                return Err(SimError::OffTrack {
                    time: (k + 1) as f64 * ts,
                    lateral: f.d,
                });
            }
        }
        controls.push(u);
        states.push(state);
    }
    Ok(Trace {
        stratum: Stratum {
            line: line.kind(),
            controller,
            speed: speed_scale,
        },
        ts,
        states,
        controls,
    })
}

impl Trace {
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "# line={} controller={} speed={} ts={}",
            self.stratum.line.as_str(),
            self.stratum.controller.as_str(),
            self.stratum.speed,
            self.ts
        )?;
        let mut wr = csv::Writer::from_writer(f);
        wr.write_record(["t", "x", "y", "theta", "v", "delta", "a"])?;
        for (k, s) in self.states.iter().enumerate() {
            let (d, a) = self
                .controls
                .get(k)
                .map_or((String::new(), String::new()), |u| (u.delta.to_string(), u.a.to_string()));
            wr.write_record([
                (k as f64 * self.ts).to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.theta.to_string(),
                s.v.to_string(),
                d,
                a,
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
