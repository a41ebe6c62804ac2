//! Training loop for the neural heads.

mod loss;
mod optim;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::LocalFrame;
use crate::dynamics::VehicleState;
use crate::metrics::{MetricReport, MetricsError, DEFAULT_LENGTH, DEFAULT_WIDTH};
use crate::net::{NetError, Tape, Tensor};
use crate::predictor::{HeadKind, Model, ModelConfig, ObservationWindow, PredictError};
use crate::simkit::{wrap_angle, Sample};

pub use loss::{curriculum_loss, tape_curriculum_loss, weighted_l1_loss, LossWeights};
pub use optim::{Optimizer, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: truth has {truth} steps, prediction {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("horizon {h} outside 1..={n}")]
    HorizonOutOfRange { h: usize, n: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training split is empty")]
    EmptyTraining,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<Checkpoint> },
    #[error("checkpoint version {0} is not supported")]
    CheckpointVersion(u32),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Increasing-horizon schedule: `h = min(h0 + ⌊epoch / epochs_per_increment⌋, h_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub h0: usize,
    pub epochs_per_increment: usize,
    pub h_max: usize,
}

impl CurriculumSchedule {
    pub fn new(h0: usize, epochs_per_increment: usize, h_max: usize) -> Result<Self, TrainError> {
        let s = Self {
            h0,
            epochs_per_increment,
            h_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.h0 == 0 || self.h0 > self.h_max || self.epochs_per_increment == 0 {
            return Err(TrainError::InvalidConfig(
                "curriculum needs 1 <= h0 <= h_max and epochs_per_increment >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Horizon for a zero-based epoch.
    pub fn horizon(&self, epoch: usize) -> usize {
        (self.h0 + epoch / self.epochs_per_increment).min(self.h_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub curriculum: Option<CurriculumSchedule>,
    /// Global gradient-norm cap.
    pub grad_clip: Option<f64>,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
    /// Caps the validation set to its first `val_limit` samples.
    pub val_limit: Option<usize>,
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 350,
            lr: 1e-3,
            optimizer: Optimizer::momentum(),
            batch_size: 64,
            seed: 0,
            loss: LossWeights::default(),
            curriculum: None,
            grad_clip: None,
            val_every: 1,
            val_limit: None,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: usize) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("learning rate must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.val_every == 0 {
            return bad("batch_size and val_every must be positive");
        }
        if let Some(c) = &self.curriculum {
            c.validate()?;
            if c.h_max > horizon {
                return bad("curriculum h_max exceeds the model horizon");
            }
        }
        if matches!(self.grad_clip, Some(g) if !(g > 0.0)) {
            return bad("grad_clip must be positive");
        }
        self.loss.validate()
    }

    pub fn horizon(&self, epoch: usize, full: usize) -> usize {
        self.curriculum.map_or(full, |c| c.horizon(epoch))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub horizon: usize,
    pub train_loss: f64,
    pub val_ade: Option<f64>,
    pub val_fde: Option<f64>,
    pub val_iou: Option<f64>,
    pub seconds: f64,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
    pub log: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model,
            config,
            optimizer: OptimizerState::default(),
            epochs_done: 0,
            log: Vec::new(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<(), TrainError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, TrainError> {
        let c: Checkpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointVersion(c.version));
        }
        Ok(c)
    }
}

pub fn write_epoch_log<W: std::io::Write>(w: W, log: &[EpochRecord]) -> Result<(), TrainError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "horizon", "train_loss", "val_ade", "val_fde", "val_iou", "seconds"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in log {
        wr.write_record([
            r.epoch.to_string(),
            r.horizon.to_string(),
            r.train_loss.to_string(),
            opt(r.val_ade),
            opt(r.val_fde),
            opt(r.val_iou),
            format!("{:.3}", r.seconds),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// A training sample prepared once: the window plus the future in the
/// window's local frame.
struct Prepared {
    window: ObservationWindow,
    target: Vec<VehicleState>,
}

fn prepare(s: &Sample) -> Prepared {
    let window = ObservationWindow::from(s);
    let frame = LocalFrame::at(&window.last());
    let target = s
        .future
        .iter()
        .map(|f| {
            let mut l = frame.to_local(f);
            l.theta = wrap_angle(l.theta);
            l
        })
        .collect();
    Prepared { window, target }
}

/// Loss and parameter gradients of one minibatch, scaled as part of a
/// mean over `norm` rows.
fn batch_gradients(
    model: &Model,
    batch: &[&Prepared],
    w: &LossWeights,
    h: usize,
    norm: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let vars = model.net.bind(&mut tape);
    let windows: Vec<&ObservationWindow> = batch.iter().map(|p| &p.window).collect();
    let fwd = model.forward_batch(&mut tape, &vars, &windows)?;
    let targets: Vec<&[VehicleState]> = batch.iter().map(|p| p.target.as_slice()).collect();
    let loss = tape_curriculum_loss(&mut tape, &fwd.states, &targets, w, h, norm)?;
    let grads = tape.backward(loss)?;
    let g = vars.params().into_iter().map(|p| grads.wrt(p)).collect();
    Ok((tape.value(loss).item(), g))
}

/// Splits a batch across `jobs` threads; partial gradients are summed in
/// chunk order so the result does not depend on scheduling.
fn parallel_gradients(
    model: &Model,
    batch: &[&Prepared],
    w: &LossWeights,
    h: usize,
    jobs: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let norm = batch.len();
    if jobs <= 1 || batch.len() < 2 * jobs {
        return batch_gradients(model, batch, w, h, norm);
    }
    let chunk = batch.len().div_ceil(jobs);
    let parts: Vec<Result<(f64, Vec<Tensor>), TrainError>> = std::thread::scope(|sc| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|c| sc.spawn(move || batch_gradients(model, c, w, h, norm)))
            .collect();
        handles.into_iter().map(|j| j.join().expect("gradient worker panicked")).collect()
    });
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().expect("at least one chunk")?;
    for p in it {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.axpy(1.0, b);
        }
    }
    Ok((loss, grads))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.map(|x| x * s);
        }
    }
}

/// Validation ADE/FDE/IoU of `model` on `samples`.
pub fn evaluate_model(model: &Model, samples: &[Sample]) -> Result<MetricReport, TrainError> {
    let windows: Vec<ObservationWindow> = samples.iter().map(ObservationWindow::from).collect();
    let preds = model.predict_many(&windows)?;
    Ok(MetricReport::evaluate(
        preds.iter().zip(samples).map(|(p, s)| (p.states.as_slice(), s.future.as_slice())),
        DEFAULT_LENGTH,
        DEFAULT_WIDTH,
    )?)
}

/// Trains a fresh `head` model seeded from `cfg.seed`.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    head: HeadKind,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
) -> Result<Checkpoint, TrainError> {
    let model = Model::new(head, model_cfg, cfg.seed)?;
    let mut ckpt = Checkpoint::new(model, cfg);
    let until = ckpt.config.epochs;
    resume(&mut ckpt, train_set, val_set, until)?;
    Ok(ckpt)
}

/// Continues training until `until` epochs are done in total. The epoch
/// shuffle depends only on `(seed, epoch)`, so stopping and resuming gives
/// the same trace as one uninterrupted run.
pub fn resume(ckpt: &mut Checkpoint, train_set: &[Sample], val_set: &[Sample], until: usize) -> Result<(), TrainError> {
    let full = ckpt.model.config.horizon;
    ckpt.config.validate(full)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    let prepared: Vec<Prepared> = train_set.iter().map(prepare).collect();
    if let Some(p) = prepared.iter().find(|p| p.target.len() != full) {
        return Err(TrainError::LengthMismatch {
            truth: p.target.len(),
            pred: full,
        });
    }
    let val = match ckpt.config.val_limit {
        Some(n) => &val_set[..n.min(val_set.len())],
        None => val_set,
    };
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    while ckpt.epochs_done < until {
        let epoch = ckpt.epochs_done;
        let cfg = ckpt.config.clone();
        let h = cfg.horizon(epoch, full);
        let started = Instant::now();
        let good = ckpt.clone();

        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &prepared[i]).collect();
            let (loss, mut grads) = parallel_gradients(&ckpt.model, &batch, &cfg.loss, h, cfg.jobs)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                log::warn!("non-finite loss or gradient in epoch {}", epoch + 1);
                return Err(TrainError::Diverged {
                    epoch: epoch + 1,
                    last_good: Box::new(good),
                });
            }
            if let Some(c) = cfg.grad_clip {
                clip(&mut grads, c);
            }
            loss_sum += loss * batch.len() as f64;
            let mut params = ckpt.model.net.params_mut();
            ckpt.optimizer.step(&cfg.optimizer, cfg.lr, &mut params, &grads);
        }
        let train_loss = loss_sum / prepared.len() as f64;

        let last = epoch + 1 == until;
        let report = if !val.is_empty() && ((epoch + 1).is_multiple_of(cfg.val_every) || last) {
            Some(evaluate_model(&ckpt.model, val)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            horizon: h,
            train_loss,
            val_ade: report.as_ref().map(|r| r.ade),
            val_fde: report.as_ref().map(|r| r.fde),
            val_iou: report.as_ref().map(|r| r.iou),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} h={} loss={:.5} val_ade={:?}",
            rec.epoch,
            rec.horizon,
            rec.train_loss,
            rec.val_ade
        );
        ckpt.log.push(rec);
        ckpt.epochs_done += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::{ControllerKind, LineKind, Stratum};

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let om = 0.3 * (i as f64 - n as f64 / 2.0) / n as f64;
                let v = 3.0 + 0.2 * i as f64;
                let st = |k: usize| {
                    let t = k as f64 * 0.01;
                    let th = 0.4 + om * t;
                    VehicleState::new(v * t * 0.4_f64.cos(), v * t * 0.4_f64.sin() + om * t * t, th, v)
                };
                Sample {
                    stratum: Stratum {
                        line: LineKind::Center,
                        controller: ControllerKind::PurePursuit,
                        speed: 1.0,
                    },
                    obs: (0..10).map(st).collect(),
                    context: om,
                    future: (10..30).map(st).collect(),
                }
            })
            .collect()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            horizon: 20,
            hidden: 8,
            decoder_widths: vec![16],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn schedule_grows_and_saturates() {
        let s = CurriculumSchedule::new(1, 2, 5).unwrap();
        let hs: Vec<usize> = (0..12).map(|e| s.horizon(e)).collect();
        assert_eq!(hs, [1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 5, 5]);
        assert!(CurriculumSchedule::new(0, 2, 5).is_err());
        assert!(CurriculumSchedule::new(6, 2, 5).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = samples(6);
        for head in [HeadKind::Pcmp, HeadKind::Lstm] {
            let cfg = TrainConfig {
                epochs: 1,
                lr: 0.0,
                batch_size: 4,
                ..TrainConfig::default()
            };
            let before = Model::new(head, small(), cfg.seed).unwrap();
            let after = train(&data, &[], head, small(), cfg).unwrap();
            assert_eq!(before.net, after.model.net);
            assert_eq!(after.log.len(), 1);
        }
    }

    #[test]
    fn same_seed_same_trace_and_resume_is_seamless() {
        let data = samples(10);
        let cfg = TrainConfig {
            epochs: 4,
            lr: 1e-3,
            batch_size: 4,
            seed: 7,
            curriculum: Some(CurriculumSchedule::new(2, 1, 20).unwrap()),
            ..TrainConfig::default()
        };
        let a = train(&data, &data[..3], HeadKind::Pcmp, small(), cfg.clone()).unwrap();
        let b = train(&data, &data[..3], HeadKind::Pcmp, small(), cfg.clone()).unwrap();
        let losses = |c: &Checkpoint| c.log.iter().map(|r| r.train_loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));

        let mut half = Checkpoint::new(Model::new(HeadKind::Pcmp, small(), 7).unwrap(), cfg);
        resume(&mut half, &data, &data[..3], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        half.save_json(&path).unwrap();
        let mut back = Checkpoint::load_json(&path).unwrap();
        resume(&mut back, &data, &data[..3], 4).unwrap();
        assert_eq!(losses(&back), losses(&a));
        assert_eq!(back.model, a.model);
    }

    #[test]
    fn parallel_gradients_match_serial() {
        let data = samples(9);
        let prepared: Vec<Prepared> = data.iter().map(prepare).collect();
        let batch: Vec<&Prepared> = prepared.iter().collect();
        let model = Model::new(HeadKind::Pcmp, small(), 3).unwrap();
        let w = LossWeights::default();
        let (l1, g1) = parallel_gradients(&model, &batch, &w, 20, 1).unwrap();
        let (l3, g3) = parallel_gradients(&model, &batch, &w, 20, 3).unwrap();
        assert!((l1 - l3).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g3) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn training_reduces_the_loss() {
        let data = samples(8);
        let cfg = TrainConfig {
            epochs: 60,
            lr: 1e-3,
            optimizer: Optimizer::adam(),
            batch_size: 8,
            ..TrainConfig::default()
        };
        let c = train(&data, &[], HeadKind::Pcmp, small(), cfg).unwrap();
        assert!(c.log.last().unwrap().train_loss < 0.5 * c.log[0].train_loss);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            train(&[], &[], HeadKind::Pcmp, small(), TrainConfig::default()),
            Err(TrainError::EmptyTraining)
        ));
    }
}
