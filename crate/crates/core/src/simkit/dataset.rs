use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ControllerKind, LineKind, SimError, Stratum, Trace, Track};
use crate::conformal::to_frenet;
use crate::dynamics::VehicleState;

pub const DEFAULT_OBS_LEN: usize = 10;
pub const DEFAULT_HORIZON: usize = 60;
/// Standard deviation of the observation noise (variance 0.01).
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
/// Arclength over which the forward curvature context is averaged (m).
pub const DEFAULT_CONTEXT_LOOKAHEAD: f64 = 5.0;

/// One dataset element: noisy observations, a context scalar, and the clean
/// future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub stratum: Stratum,
    pub obs: Vec<VehicleState>,
    pub context: f64,
    pub future: Vec<VehicleState>,
}

impl Sample {
    /// The last observed (noisy) state.
    pub fn last_obs(&self) -> VehicleState {
        self.obs[self.obs.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub obs_len: usize,
    pub horizon: usize,
    pub noise_sigma: f64,
    pub context_lookahead: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            obs_len: DEFAULT_OBS_LEN,
            horizon: DEFAULT_HORIZON,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            context_lookahead: DEFAULT_CONTEXT_LOOKAHEAD,
        }
    }
}

/// Cuts a trace into non-overlapping `obs_len + horizon` windows. Gaussian
/// noise goes on `x`, `y`, `v` of the observations only.
pub fn window(trace: &Trace, track: &Track, spec: &WindowSpec, seed: u64) -> Result<Vec<Sample>, SimError> {
    if spec.obs_len == 0 || spec.horizon == 0 {
        return Err(SimError::InvalidConfig("obs_len and horizon must be positive".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SimError::InvalidConfig(format!("bad noise sigma {}", spec.noise_sigma)));
    }
    let span = spec.obs_len + spec.horizon;
    let count = trace.states.len() / span;
    if count == 0 {
        log::warn!(
            "trace of {} states is shorter than one {span}-state window",
            trace.states.len()
        );
        return Ok(Vec::new());
    }
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let base = w * span;
        let obs: Vec<VehicleState> = trace.states[base..base + spec.obs_len]
            .iter()
            .map(|s| {
                if spec.noise_sigma == 0.0 {
                    *s
                } else {
                    VehicleState::new(
                        s.x + noise.sample(&mut rng),
                        s.y + noise.sample(&mut rng),
                        s.theta,
                        s.v + noise.sample(&mut rng),
                    )
                }
            })
            .collect();
        let last = obs[obs.len() - 1];
        let f = to_frenet([last.x, last.y], track);
        let context = track.forward_curvature(f.s * track.total_length(), spec.context_lookahead);
        out.push(Sample {
            stratum: trace.stratum,
            obs,
            context,
            future: trace.states[base + spec.obs_len..base + span].to_vec(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = [self.train, self.val, self.test].iter().all(|r| (0.0..=1.0).contains(r))
            && (self.train + self.val + self.test - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!(
                "split ratios must be in [0, 1] and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified split: within each stratum, `round(n·val)` samples go to
/// validation, `round(n·test)` to test and the rest to training.
pub fn split(samples: Vec<Sample>, spec: &SplitSpec, seed: u64) -> Result<Splits, SimError> {
    spec.validate()?;
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.stratum.label()).or_default().push(s);
    }
    let mut out = Splits::default();
    for (cell, (_, mut group)) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cell as u64);
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let n_val = ((n * spec.val).round() as usize).min(group.len());
        let n_test = ((n * spec.test).round() as usize).min(group.len() - n_val);
        let test = group.split_off(group.len() - n_test);
        let val = group.split_off(group.len() - n_val);
        out.train.extend(group);
        out.val.extend(val);
        out.test.extend(test);
    }
    Ok(out)
}

/// Per-stratum sample counts of each split.
pub fn stratum_counts(splits: &Splits) -> BTreeMap<String, [usize; 3]> {
    let mut m: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (k, part) in [&splits.train, &splits.val, &splits.test].into_iter().enumerate() {
        for s in part {
            m.entry(s.stratum.label()).or_default()[k] += 1;
        }
    }
    m
}

fn header(obs_len: usize, horizon: usize) -> Vec<String> {
    let mut h = vec!["line".to_string(), "controller".into(), "speed".into(), "context".into()];
    for (prefix, n) in [("o", obs_len), ("f", horizon)] {
        for k in 0..n {
            for c in ["x", "y", "theta", "v"] {
                h.push(format!("{prefix}{k}_{c}"));
            }
        }
    }
    h
}

/// One row per sample: stratum, context, then flattened observations and
/// future states.
pub fn write_samples_csv<W: std::io::Write>(w: W, samples: &[Sample]) -> Result<(), SimError> {
    let mut wr = csv::Writer::from_writer(w);
    let (ol, h) = samples
        .first()
        .map_or((DEFAULT_OBS_LEN, DEFAULT_HORIZON), |s| (s.obs.len(), s.future.len()));
    wr.write_record(header(ol, h))?;
    for s in samples {
        if s.obs.len() != ol || s.future.len() != h {
            return Err(SimError::InvalidData("samples have mixed window sizes".into()));
        }
        let mut rec = vec![
            s.stratum.line.as_str().to_string(),
            s.stratum.controller.as_str().to_string(),
            s.stratum.speed.to_string(),
            s.context.to_string(),
        ];
        for st in s.obs.iter().chain(&s.future) {
            rec.extend(st.to_array().iter().map(f64::to_string));
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: std::io::Read>(r: R) -> Result<Vec<Sample>, SimError> {
    let mut rd = csv::Reader::from_reader(r);
    let hdr = rd.headers()?.clone();
    let obs_len = hdr.iter().filter(|h| h.starts_with('o') && h.ends_with("_x")).count();
    let horizon = hdr.iter().filter(|h| h.starts_with('f') && h.ends_with("_x")).count();
    if hdr.len() != 4 + 4 * (obs_len + horizon) || obs_len == 0 || horizon == 0 {
        return Err(SimError::InvalidData("unrecognised sample header".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| SimError::InvalidData(format!("row {}: bad {what}", row + 1));
        let line = LineKind::parse(&rec[0]).ok_or_else(|| bad("line"))?;
        let controller = ControllerKind::parse(&rec[1]).ok_or_else(|| bad("controller"))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&hdr[i]));
        let speed = num(2)?;
        let context = num(3)?;
        let mut states = Vec::with_capacity(obs_len + horizon);
        for k in 0..obs_len + horizon {
            let b = 4 + 4 * k;
            states.push(VehicleState::new(num(b)?, num(b + 1)?, num(b + 2)?, num(b + 3)?));
        }
        let future = states.split_off(obs_len);
        out.push(Sample {
            stratum: Stratum {
                line,
                controller,
                speed,
            },
            obs: states,
            context,
            future,
        });
    }
    Ok(out)
}

pub fn save_samples(path: &Path, samples: &[Sample]) -> Result<(), SimError> {
    write_samples_csv(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}

pub fn load_samples(path: &Path) -> Result<Vec<Sample>, SimError> {
    read_samples_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlInput;

    fn trace(len: usize) -> Trace {
        Trace {
            stratum: Stratum {
                line: LineKind::Center,
                controller: ControllerKind::Stanley,
                speed: 1.0,
            },
            ts: 0.01,
            states: (0..len).map(|k| VehicleState::new(k as f64 * 0.05, 0.0, 0.0, 5.0)).collect(),
            controls: vec![ControlInput::new(0.0, 0.0); len.saturating_sub(1)],
        }
    }

    fn line_track() -> Track {
        Track::build(&crate::simkit::TrackSpec::circle(30.0)).unwrap()
    }

    #[test]
    fn window_counts_and_noise_free_inputs() {
        let t = line_track();
        let spec = WindowSpec {
            noise_sigma: 0.0,
            ..WindowSpec::default()
        };
        let tr = trace(140);
        let s = window(&tr, &t, &spec, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].obs[..], tr.states[70..80]);
        assert_eq!(s[1].future[..], tr.states[80..140]);
        assert!(window(&trace(69), &t, &spec, 0).unwrap().is_empty());
    }

    #[test]
    fn noise_touches_only_observed_position_and_speed() {
        let t = line_track();
        let tr = trace(210);
        let clean = window(&tr, &t, &WindowSpec { noise_sigma: 0.0, ..Default::default() }, 4).unwrap();
        let noisy = window(&tr, &t, &WindowSpec::default(), 4).unwrap();
        for (c, n) in clean.iter().zip(&noisy) {
            assert_eq!(c.future, n.future);
            for (a, b) in c.obs.iter().zip(&n.obs) {
                assert_eq!(a.theta, b.theta);
                assert!(a.x != b.x && a.y != b.y && a.v != b.v);
            }
        }
    }

    #[test]
    fn split_is_a_stratified_partition() {
        let t = line_track();
        let mut samples = Vec::new();
        for (i, line) in [LineKind::Center, LineKind::Race].into_iter().enumerate() {
            let mut tr = trace(70 * 57);
            tr.stratum.line = line;
            for s in &mut tr.states {
                s.y = i as f64;
            }
            samples.extend(window(&tr, &t, &WindowSpec::default(), i as u64).unwrap());
        }
        let a = split(samples.clone(), &SplitSpec::default(), 9).unwrap();
        let b = split(samples.clone(), &SplitSpec::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), samples.len());
        for counts in stratum_counts(&a).values() {
            assert_eq!(counts[1], 6);
            assert_eq!(counts[2], 6);
            assert_eq!(counts[0], 45);
        }
        for s in &a.val {
            assert!(!a.train.contains(s) && !a.test.contains(s));
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = line_track();
        let s = window(&trace(210), &t, &WindowSpec::default(), 1).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &s).unwrap();
        let back = read_samples_csv(&buf[..]).unwrap();
        assert_eq!(back, s);
    }
}
