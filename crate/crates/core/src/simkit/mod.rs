//! Synthetic racing data: tracks, reference lines, path-tracking controllers,
//! closed-loop simulation, windowing and stratified splits.

mod control;
mod dataset;
mod raceline;
mod sim;
mod track;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;

pub use control::{
    pure_pursuit_steer, stanley_steer, wrap_angle, ControllerKind, ControllerParams, Tracker, STANLEY_MIN_DENOM,
};
pub use dataset::{
    load_samples, read_samples_csv, save_samples, split, stratum_counts, window, write_samples_csv, Sample,
    SplitSpec, Splits, WindowSpec, DEFAULT_CONTEXT_LOOKAHEAD, DEFAULT_HORIZON, DEFAULT_NOISE_SIGMA, DEFAULT_OBS_LEN,
};
pub use raceline::{speed_profile, LineKind, LineParams, Projection, RaceLine};
pub use sim::{simulate, SimSettings, Stratum, Trace};
pub use track::{Segment, Track, TrackShape, TrackSpec, DEFAULT_HALF_WIDTH, DEFAULT_SPACING};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("vehicle left the track at t={time:.2}s (lateral offset {lateral:.2} m)")]
    OffTrack { time: f64, lateral: f64 },
    #[error("generation produced no samples")]
    EmptyDataset,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub track: TrackSpec,
    pub lines: Vec<LineKind>,
    pub controllers: Vec<ControllerKind>,
    pub speeds: Vec<f64>,
    /// Simulated seconds per (line, controller, speed) cell.
    pub duration: f64,
    pub window: WindowSpec,
    pub split: SplitSpec,
    pub line_params: LineParams,
    pub sim: SimSettings,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            track: TrackSpec::default_circuit(),
            lines: LineKind::ALL.to_vec(),
            controllers: ControllerKind::ALL.to_vec(),
            speeds: vec![0.75, 0.85, 1.0],
            duration: 60.0,
            window: WindowSpec::default(),
            split: SplitSpec::default(),
            line_params: LineParams::default(),
            sim: SimSettings::default(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn cells(&self) -> Vec<Stratum> {
        let mut v = Vec::new();
        for &line in &self.lines {
            for &controller in &self.controllers {
                for &speed in &self.speeds {
                    v.push(Stratum { line, controller, speed });
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.split.validate()?;
        if self.cells().is_empty() {
            return Err(SimError::InvalidConfig("no (line, controller, speed) cells".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(SimError::InvalidConfig(format!("bad duration {}", self.duration)));
        }
        if self.speeds.iter().any(|s| !(*s > 0.0)) {
            return Err(SimError::InvalidConfig("speed scales must be positive".into()));
        }
        Ok(())
    }
}

/// Generated data plus the geometry it was generated on.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub track: Track,
    pub splits: Splits,
}

/// Summary written next to the dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub noise_sigma: f64,
    pub obs_len: usize,
    pub horizon: usize,
    pub counts: BTreeMap<String, [usize; 3]>,
    pub totals: [usize; 3],
    pub config: GenConfig,
}

impl DatasetManifest {
    pub fn new(cfg: &GenConfig, splits: &Splits) -> Self {
        Self {
            seed: cfg.seed,
            noise_sigma: cfg.window.noise_sigma,
            obs_len: cfg.window.obs_len,
            horizon: cfg.window.horizon,
            counts: stratum_counts(splits),
            totals: [splits.train.len(), splits.val.len(), splits.test.len()],
            config: cfg.clone(),
        }
    }
}

fn simulate_cell(cfg: &GenConfig, track: &Track, lines: &[RaceLine], id: usize, cell: Stratum) -> Result<Vec<Sample>, SimError> {
    let line = lines
        .iter()
        .find(|l| l.kind() == cell.line)
        .expect("every configured line is built");
    let cell_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64);
    let trace = simulate(track, line, cell.controller, cell.speed, cfg.duration, cell_seed, &cfg.sim)?;
    window(&trace, track, &cfg.window, cell_seed ^ 0x5EED)
}

/// Simulates every cell (on up to `jobs` threads), windows the traces and
/// splits the result.
pub fn generate(cfg: &GenConfig, jobs: usize) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let track = Track::build(&cfg.track)?;
    let mut kinds = cfg.lines.clone();
    kinds.sort();
    kinds.dedup();
    let lines = kinds
        .iter()
        .map(|&k| RaceLine::build(&track, k, &cfg.line_params))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = cfg.cells();
    let jobs = jobs.clamp(1, cells.len());
    let mut per_cell: Vec<Option<Result<Vec<Sample>, SimError>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = per_cell.chunks_mut(cells.len().div_ceil(jobs)).enumerate().collect();
        let chunk_len = cells.len().div_ceil(jobs);
        for (c, slots) in chunks {
            let (track, lines, cells) = (&track, &lines, &cells);
            scope.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    let id = c * chunk_len + k;
                    *slot = Some(simulate_cell(cfg, track, lines, id, cells[id]));
                }
            });
        }
    });
    let mut samples = Vec::new();
    for r in per_cell {
        samples.extend(r.expect("every cell ran")?);
    }
    if samples.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let splits = split(samples, &cfg.split, cfg.seed)?;
    Ok(Dataset { track, splits })
}
