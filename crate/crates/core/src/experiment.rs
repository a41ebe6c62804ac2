//! Glue shared by the CLI and the end-to-end tests: batch prediction,
//! metric and feasibility summaries, conformal scoring and the wheelbase
//! sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{
    coverage_report, cqr_calibrate, score_frenet, score_rotated_rect, CalibratedRegion, CalibrationMode, ConformalError,
    CoverageRow, LocalFrame, Score, ScoreKind,
};
use crate::dynamics::{is_feasible, ControlBounds, DynamicsError, VehicleState, TRUE_WHEELBASE};
use crate::metrics::{pearson, MetricReport, MetricsError, DEFAULT_LENGTH, DEFAULT_WIDTH};
use crate::predictor::{HeadKind, ModelConfig, ObservationWindow, PredictError, PredictedTrajectory, Predictor};
use crate::simkit::{wrap_angle, Sample, Track};
use crate::trainer::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0} predictions for {1} samples")]
    CountMismatch(usize, usize),
    #[error("need at least two wheelbases, got {0}")]
    TooFewWheelbases(usize),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_count(preds: &[PredictedTrajectory], samples: &[Sample]) -> Result<(), ExperimentError> {
    if preds.len() != samples.len() {
        return Err(ExperimentError::CountMismatch(preds.len(), samples.len()));
    }
    Ok(())
}

/// Predicts every sample, fanning out over up to `jobs` threads. Output
/// order matches input order.
pub fn predict_all(p: &Predictor, samples: &[Sample], jobs: usize) -> Result<Vec<PredictedTrajectory>, ExperimentError> {
    let windows: Vec<ObservationWindow> = samples.iter().map(ObservationWindow::from).collect();
    if jobs <= 1 || windows.len() < 2 * jobs {
        return Ok(p.predict_many(&windows)?);
    }
    let chunk = windows.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<PredictedTrajectory>, PredictError>> = std::thread::scope(|sc| {
        let hs: Vec<_> = windows.chunks(chunk).map(|c| sc.spawn(move || p.predict_many(c))).collect();
        hs.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(windows.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

pub fn metric_report(preds: &[PredictedTrajectory], samples: &[Sample]) -> Result<MetricReport, ExperimentError> {
    check_count(preds, samples)?;
    Ok(MetricReport::evaluate(
        preds.iter().zip(samples).map(|(p, s)| (p.states.as_slice(), s.future.as_slice())),
        DEFAULT_LENGTH,
        DEFAULT_WIDTH,
    )?)
}

/// True when the ground-truth heading turns by at least `min_turn` rad
/// over the horizon.
pub fn is_curved(s: &Sample, min_turn: f64) -> bool {
    match (s.obs.last(), s.future.last()) {
        (Some(a), Some(b)) => wrap_angle(b.theta - a.theta).abs() >= min_turn,
        _ => false,
    }
}

/// Heading change that marks a sample as curved in feasibility summaries.
pub const CURVED_MIN_TURN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilitySummary {
    pub checked: usize,
    pub feasible: usize,
    pub curved_checked: usize,
    pub curved_feasible: usize,
}

impl FeasibilitySummary {
    pub fn feasible_rate(&self) -> f64 {
        self.feasible as f64 / self.checked.max(1) as f64
    }

    pub fn curved_violation_rate(&self) -> f64 {
        1.0 - self.curved_feasible as f64 / self.curved_checked.max(1) as f64
    }
}

/// Runs the feasibility checker on `[p_t, p̂_{t+1}, …]` for every
/// prediction under the surrogate dynamics described by `cfg`.
pub fn feasibility(
    preds: &[PredictedTrajectory],
    samples: &[Sample],
    cfg: &ModelConfig,
    tol: f64,
) -> Result<FeasibilitySummary, ExperimentError> {
    check_count(preds, samples)?;
    let params = cfg.bicycle()?;
    let bounds = ControlBounds {
        delta_max: cfg.delta_max,
        a_max: cfg.a_max,
    };
    let mut out = FeasibilitySummary {
        checked: 0,
        feasible: 0,
        curved_checked: 0,
        curved_feasible: 0,
    };
    for (p, s) in preds.iter().zip(samples) {
        let mut traj = Vec::with_capacity(p.states.len() + 1);
        traj.push(s.last_obs());
        traj.extend_from_slice(&p.states);
        let ok = is_feasible(&traj, &params, &cfg.integrator, &bounds, tol)?.is_feasible();
        out.checked += 1;
        out.feasible += ok as usize;
        if is_curved(s, CURVED_MIN_TURN) {
            out.curved_checked += 1;
            out.curved_feasible += ok as usize;
        }
    }
    Ok(out)
}

/// Per-sample score sequences. Rotated-rectangle scores live in the frame
/// of the last observed pose; Frenet scores need the track.
pub fn scores(
    kind: ScoreKind,
    preds: &[PredictedTrajectory],
    samples: &[Sample],
    track: &Track,
) -> Result<Vec<Vec<Score>>, ExperimentError> {
    check_count(preds, samples)?;
    preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            Ok(match kind {
                ScoreKind::RotatedRect => score_rotated_rect(&p.states, &s.future, &LocalFrame::at(&s.last_obs()))?,
                ScoreKind::Frenet => score_frenet(&p.states, &s.future, track)?,
            })
        })
        .collect()
}

/// Scores of one predictor on all three splits.
#[derive(Debug, Clone)]
pub struct SplitScores {
    pub train: Vec<Vec<Score>>,
    pub val: Vec<Vec<Score>>,
    pub test: Vec<Vec<Score>>,
}

/// Single- and multi-step regions plus their test coverage for one score
/// kind.
#[derive(Debug, Clone)]
pub struct ConformalResult {
    pub single: CalibratedRegion,
    pub multi: CalibratedRegion,
    pub row: CoverageRow,
}

pub fn calibrate_and_cover(scores: &SplitScores, kind: ScoreKind, delta: f64) -> Result<ConformalResult, ExperimentError> {
    let single = cqr_calibrate(&scores.train, &scores.val, delta, CalibrationMode::SingleStep, kind)?;
    let multi = cqr_calibrate(&scores.train, &scores.val, delta, CalibrationMode::MultiStep, kind)?;
    let row = coverage_report(&single, &multi, &scores.test)?;
    Ok(ConformalResult { single, multi, row })
}

/// Coverage table with one line per dimension and the joint event:
/// `x, y, x&y` then `s, d, s&d`.
pub fn write_coverage_csv<W: std::io::Write>(w: W, rows: &[CoverageRow]) -> Result<(), ExperimentError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["region", "dimension", "single_step", "multi_step"])?;
    for r in rows {
        let region = match r.kind {
            ScoreKind::RotatedRect => "rotated_rect",
            ScoreKind::Frenet => "frenet",
        };
        let [a, b] = r.kind.dim_names();
        let joint = format!("{a}&{b}");
        let lines = [
            (a, r.single_step.dims[0], r.multi_step.dims[0]),
            (b, r.single_step.dims[1], r.multi_step.dims[1]),
            (joint.as_str(), r.single_step.joint, r.multi_step.joint),
        ];
        for (name, s, m) in lines {
            wr.write_record([region, name, &format!("{s:.4}"), &format!("{m:.4}")])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub head: HeadKind,
    pub ade: f64,
    pub fde: f64,
    pub iou: f64,
}

pub fn write_comparison_csv<W: std::io::Write>(w: W, rows: &[ComparisonRow]) -> Result<(), ExperimentError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["model", "head", "ade", "fde", "iou"])?;
    for r in rows {
        wr.write_record([
            r.label.as_str(),
            r.head.as_str(),
            &format!("{:.6}", r.ade),
            &format!("{:.6}", r.fde),
            &format!("{:.6}", r.iou),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `0.0802, 0.0902, …, 1.5002`.
pub fn wheelbase_grid() -> Vec<f64> {
    (0..=142).map(|k| ((802 + 100 * k) as f64) / 10_000.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub wheelbase: f64,
    pub train_loss: f64,
    pub ade: f64,
    pub fde: f64,
    pub iou: f64,
    /// Whether this is the wheelbase the data was generated with.
    pub is_true: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub r_ade: f64,
    pub r_iou: f64,
    pub r_train_loss: f64,
}

/// Trains one PCMP model per wheelbase (up to `jobs` at a time) and
/// correlates the wheelbase with test ADE, IoU and final training loss.
pub fn sweep_wheelbase(
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    wheelbases: &[f64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<SweepSummary, ExperimentError> {
    if wheelbases.len() < 2 {
        return Err(ExperimentError::TooFewWheelbases(wheelbases.len()));
    }
    let run = |l: f64| -> Result<SweepRow, ExperimentError> {
        let mc = ModelConfig {
            wheelbase: l,
            ..model_cfg.clone()
        };
        let tc = TrainConfig {
            jobs: 1,
            ..train_cfg.clone()
        };
        let ck = train(train_set, val_set, HeadKind::Pcmp, mc, tc)?;
        let pred = Predictor::Neural(ck.model);
        let preds = pred.predict_samples(test_set)?;
        let rep = metric_report(&preds, test_set)?;
        log::info!("wheelbase {l:.4}: ade {:.4} iou {:.4}", rep.ade, rep.iou);
        Ok(SweepRow {
            wheelbase: l,
            train_loss: ck.log.last().map_or(f64::NAN, |r| r.train_loss),
            ade: rep.ade,
            fde: rep.fde,
            iou: rep.iou,
            is_true: (l - TRUE_WHEELBASE).abs() < 1e-9,
        })
    };
    let jobs = jobs.max(1);
    let mut rows = Vec::with_capacity(wheelbases.len());
    for group in wheelbases.chunks(jobs) {
        let out: Vec<Result<SweepRow, ExperimentError>> = std::thread::scope(|sc| {
            let hs: Vec<_> = group.iter().map(|&l| sc.spawn(move || run(l))).collect();
            hs.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for r in out {
            rows.push(r?);
        }
    }
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let l = col(|r| r.wheelbase);
    Ok(SweepSummary {
        r_ade: pearson(&l, &col(|r| r.ade))?,
        r_iou: pearson(&l, &col(|r| r.iou))?,
        r_train_loss: pearson(&l, &col(|r| r.train_loss))?,
        rows,
    })
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, s: &SweepSummary) -> Result<(), ExperimentError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["wheelbase", "train_loss", "ade", "fde", "iou", "true_wheelbase"])?;
    for r in &s.rows {
        wr.write_record([
            format!("{:.4}", r.wheelbase),
            r.train_loss.to_string(),
            r.ade.to_string(),
            r.fde.to_string(),
            r.iou.to_string(),
            if r.is_true { "*".into() } else { String::new() },
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Last observed state of every sample; handy for drawing.
pub fn anchors(samples: &[Sample]) -> Vec<VehicleState> {
    samples.iter().map(Sample::last_obs).collect()
}
