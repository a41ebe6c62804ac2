use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use pcmp_core::conformal::{cqr_calibrate, region_polygons, CalibratedRegion, CalibrationMode, LocalFrame, RegionAnchor, ScoreKind};
use pcmp_core::experiment::{
    calibrate_and_cover, metric_report, predict_all, scores, sweep_wheelbase, wheelbase_grid, write_comparison_csv,
    write_coverage_csv, write_sweep_csv, ComparisonRow, SplitScores,
};
use pcmp_core::predictor::{read_windows_csv, write_predictions_csv};
use pcmp_core::predictor::{HeadKind, ModelConfig, PredictedTrajectory, Predictor};
use pcmp_core::simkit::{
    generate, load_samples, save_samples, stratum_counts, DatasetManifest, GenConfig, Sample, Splits, Track, TrackSpec,
};
use pcmp_core::trainer::{resume, write_epoch_log, Checkpoint, CurriculumSchedule, Optimizer, TrainConfig, TrainError};

use crate::errors::ConfigError;
use crate::manifest::ManifestBuilder;
use crate::{
    plots, CalibrateArgs, Cli, Command, EvalArgs, GenArgs, HeadChoice, ModeChoice, OptimizerChoice, PredictArgs,
    RegionChoice, SplitChoice, SweepArgs, TrackChoice, TrainArgs,
};

/// Contents of `--config`. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(p) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("reading config {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("parsing config {}: {e}", p.display())))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn writer(p: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    std::fs::write(p, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", p.display()))
}

/// `dir/name.json` -> `dir/name.manifest.json`.
fn sidecar(p: &Path) -> PathBuf {
    let stem = p.file_stem().map_or("output".into(), |s| s.to_string_lossy().into_owned());
    p.with_file_name(format!("{stem}.manifest.json"))
}

fn snapshot<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(0) => return Err(config_err("--jobs must be positive")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a, jobs),
        Command::Train(a) => train_cmd(cfg, a, jobs),
        Command::Calibrate(a) => calibrate(cfg, a, jobs),
        Command::Eval(a) => eval(cfg, a, jobs),
        Command::SweepWheelbase(a) => sweep(cfg, a, jobs),
        Command::Predict(a) => predict(cfg, a, jobs),
    }
}

// ---------------------------------------------------------------------------
// Dataset directory

const SPLIT_FILES: [&str; 3] = ["train.csv", "val.csv", "test.csv"];

struct DataDir {
    root: PathBuf,
    track: Track,
    splits: Splits,
}

impl DataDir {
    fn load(root: &Path) -> Result<Self> {
        let track = Track::load_csv(&root.join("track.csv")).with_context(|| format!("loading dataset {}", root.display()))?;
        let [train, val, test] = SPLIT_FILES.map(|f| load_samples(&root.join(f)));
        Ok(Self {
            root: root.to_path_buf(),
            track,
            splits: Splits {
                train: train?,
                val: val?,
                test: test?,
            },
        })
    }

    fn files(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| self.root.join(f)).collect();
        v.push(self.root.join("track.csv"));
        v
    }

    fn split(&self, s: SplitChoice) -> &[Sample] {
        match s {
            SplitChoice::Train => &self.splits.train,
            SplitChoice::Val => &self.splits.val,
            SplitChoice::Test => &self.splits.test,
        }
    }
}

/// Every stratum must be divided exactly as the split ratios prescribe.
fn check_strata(cfg: &GenConfig, splits: &Splits) -> Result<()> {
    let counts = stratum_counts(splits);
    for cell in cfg.cells() {
        if !counts.contains_key(&cell.label()) {
            log::warn!("stratum {} produced no samples", cell.label());
        }
    }
    for (label, c) in &counts {
        let n = (c[0] + c[1] + c[2]) as f64;
        let val = (n * cfg.split.val).round() as usize;
        let test = (n * cfg.split.test).round() as usize;
        if c[1] != val || c[2] != test {
            anyhow::bail!("stratum {label} split {c:?} does not follow the configured ratios");
        }
    }
    Ok(())
}

fn gen_data(mut cfg: FileConfig, a: GenArgs, jobs: usize) -> Result<()> {
    let g = &mut cfg.gen;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    if let Some(d) = a.duration {
        g.duration = d;
    }
    if let Some(n) = a.noise {
        g.window.noise_sigma = n;
    }
    match a.track {
        Some(TrackChoice::Circuit) => g.track = TrackSpec::default_circuit(),
        Some(TrackChoice::Circle) => g.track = TrackSpec::circle(5.0),
        Some(TrackChoice::Stadium) => g.track = TrackSpec::stadium(8.0, 4.0),
        None => {}
    }
    let g = cfg.gen;
    let mut m = ManifestBuilder::new("gen-data", snapshot(&g), Some(g.seed));
    let ds = generate(&g, jobs)?;
    check_strata(&g, &ds.splits)?;
    create_dir(&a.out)?;
    for (f, part) in SPLIT_FILES.iter().zip([&ds.splits.train, &ds.splits.val, &ds.splits.test]) {
        let p = a.out.join(f);
        save_samples(&p, part)?;
        m.output(p);
    }
    let tp = a.out.join("track.csv");
    ds.track.save_csv(&tp)?;
    m.output(&tp);
    let dp = a.out.join("dataset.json");
    write_json(&dp, &DatasetManifest::new(&g, &ds.splits))?;
    m.output(&dp);
    m.write(&a.out.join("manifest.json"))?;
    info!(
        "wrote {} train / {} val / {} test samples to {}",
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Training

fn train_config(mut t: TrainConfig, a: &TrainArgs, horizon: usize, jobs: usize) -> Result<TrainConfig> {
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(v) = a.val_every {
        t.val_every = v;
    }
    match a.optimizer {
        Some(OptimizerChoice::Sgd) => t.optimizer = Optimizer::Sgd,
        Some(OptimizerChoice::Momentum) => t.optimizer = Optimizer::momentum(),
        Some(OptimizerChoice::Adam) => t.optimizer = Optimizer::adam(),
        None => {}
    }
    if a.curriculum {
        t.curriculum = Some(CurriculumSchedule::new(a.h0, a.epochs_per_increment, horizon)?);
    }
    t.jobs = jobs;
    Ok(t)
}

fn train_cmd(cfg: FileConfig, a: TrainArgs, jobs: usize) -> Result<()> {
    let data = DataDir::load(&a.data)?;
    let mut mc = cfg.model.clone();
    if let Some(l) = a.wheelbase {
        mc.wheelbase = l;
    }
    let mut ckpt = match &a.resume {
        Some(p) => {
            let mut c = Checkpoint::load_json(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if let Some(e) = a.epochs {
                c.config.epochs = e;
            }
            c.config.jobs = jobs;
            info!("resuming {} from epoch {}", c.model.head.as_str(), c.epochs_done);
            c
        }
        None => {
            let tc = train_config(cfg.train.clone(), &a, mc.horizon, jobs)?;
            let head = match a.head {
                HeadChoice::Pcmp => HeadKind::Pcmp,
                HeadChoice::Lstm => HeadKind::Lstm,
            };
            let model = pcmp_core::predictor::Model::new(head, mc, tc.seed)?;
            Checkpoint::new(model, tc)
        }
    };
    let mut m = ManifestBuilder::new(
        "train",
        serde_json::json!({ "model": ckpt.model.config, "train": ckpt.config, "head": ckpt.model.head }),
        Some(ckpt.config.seed),
    );
    for f in data.files() {
        m.input(f);
    }
    if let Some(p) = &a.resume {
        m.input(p);
    }
    create_dir(&a.out)?;
    let until = ckpt.config.epochs;
    if let Err(e) = resume(&mut ckpt, &data.splits.train, &data.splits.val, until) {
        if let TrainError::Diverged { last_good, epoch } = &e {
            let p = a.out.join("last_good.json");
            last_good.save_json(&p)?;
            log::error!("diverged in epoch {epoch}; last good state saved to {}", p.display());
        }
        return Err(e.into());
    }
    let cp = a.out.join("checkpoint.json");
    ckpt.save_json(&cp)?;
    m.output(&cp);
    let lp = a.out.join("epochs.csv");
    write_epoch_log(writer(&lp)?, &ckpt.log)?;
    m.output(&lp);
    m.write(&a.out.join("manifest.json"))?;
    if let Some(r) = ckpt.log.last() {
        info!("epoch {}: train loss {:.5}, val ADE {:?}", r.epoch, r.train_loss, r.val_ade);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibration and evaluation

fn ctrv(mc: &ModelConfig) -> Predictor {
    Predictor::Ctrv {
        integrator: mc.integrator,
        horizon: mc.horizon,
    }
}

fn load_predictor(path: &Path) -> Result<(Predictor, Checkpoint)> {
    let c = Checkpoint::load_json(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((Predictor::Neural(c.model.clone()), c))
}

fn score_kind(r: RegionChoice) -> ScoreKind {
    match r {
        RegionChoice::RotRect => ScoreKind::RotatedRect,
        RegionChoice::Frenet => ScoreKind::Frenet,
    }
}

fn calibrate(cfg: FileConfig, a: CalibrateArgs, jobs: usize) -> Result<()> {
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(config_err(format!("delta must lie in (0, 1), got {}", a.delta)));
    }
    let data = DataDir::load(&a.data)?;
    let mut m = ManifestBuilder::new(
        "calibrate",
        serde_json::json!({ "delta": a.delta, "region": format!("{:?}", a.region), "mode": format!("{:?}", a.mode) }),
        None,
    );
    for f in data.files() {
        m.input(f);
    }
    let pred = match &a.checkpoint {
        Some(p) if !a.ctrv => {
            m.input(p);
            load_predictor(p)?.0
        }
        _ => ctrv(&cfg.model),
    };
    let kind = score_kind(a.region);
    let s = |set: &[Sample]| -> Result<_> { Ok(scores(kind, &predict_all(&pred, set, jobs)?, set, &data.track)?) };
    let mode = match a.mode {
        ModeChoice::Single => CalibrationMode::SingleStep,
        ModeChoice::Multi => CalibrationMode::MultiStep,
    };
    let region = cqr_calibrate(&s(&data.splits.train)?, &s(&data.splits.val)?, a.delta, mode, kind)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    region.save_json(&a.out)?;
    m.output(&a.out);
    m.write(&sidecar(&a.out))?;
    info!("wrote {} region with {} steps to {}", pred.kind().as_str(), region.horizon(), a.out.display());
    Ok(())
}

/// A few samples spread evenly over the split, for drawing.
fn pick(n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}

fn label_for(path: &Path, used: &[String]) -> String {
    let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned());
    let base = match parent {
        Some(p) if stem == "checkpoint" => p,
        _ => stem,
    };
    let mut label = base.clone();
    let mut k = 2;
    while used.contains(&label) || label == "ctrv" {
        label = format!("{base}_{k}");
        k += 1;
    }
    label
}

fn eval(cfg: FileConfig, a: EvalArgs, jobs: usize) -> Result<()> {
    if a.coverage && !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(config_err(format!("delta must lie in (0, 1), got {}", a.delta)));
    }
    let data = DataDir::load(&a.data)?;
    let set = data.split(a.split);
    let mut m = ManifestBuilder::new(
        "eval",
        serde_json::json!({ "split": format!("{:?}", a.split), "coverage": a.coverage, "delta": a.delta }),
        None,
    );
    for f in data.files() {
        m.input(f);
    }
    let mut models: Vec<(String, Predictor, Option<Checkpoint>)> = vec![("ctrv".into(), ctrv(&cfg.model), None)];
    for p in &a.checkpoints {
        m.input(p);
        let used: Vec<String> = models.iter().map(|x| x.0.clone()).collect();
        let (pred, ck) = load_predictor(p)?;
        models.push((label_for(p, &used), pred, Some(ck)));
    }
    create_dir(&a.out)?;

    let mut rows = Vec::new();
    let mut all_preds: Vec<(String, Vec<PredictedTrajectory>)> = Vec::new();
    for (label, pred, _) in &models {
        let preds = predict_all(pred, set, jobs)?;
        let rep = metric_report(&preds, set)?;
        info!("{label}: ADE {:.4} FDE {:.4} IoU {:.4}", rep.ade, rep.fde, rep.iou);
        let p = a.out.join(format!("per_sample_{label}.csv"));
        rep.write_csv(writer(&p)?)?;
        m.output(p);
        rows.push(ComparisonRow {
            label: label.clone(),
            head: pred.kind(),
            ade: rep.ade,
            fde: rep.fde,
            iou: rep.iou,
        });
        all_preds.push((label.clone(), preds));
    }
    let mp = a.out.join("metrics.csv");
    write_comparison_csv(writer(&mp)?, &rows)?;
    m.output(&mp);
    let jp = a.out.join("metrics.json");
    write_json(&jp, &rows)?;
    m.output(&jp);

    let mut regions: Vec<(String, ScoreKind, CalibratedRegion)> = Vec::new();
    if a.coverage {
        for (label, pred, _) in &models {
            let mut cov_rows = Vec::new();
            for kind in [ScoreKind::RotatedRect, ScoreKind::Frenet] {
                let sc = |s: &[Sample]| -> Result<_> { Ok(scores(kind, &predict_all(pred, s, jobs)?, s, &data.track)?) };
                let ss = SplitScores {
                    train: sc(&data.splits.train)?,
                    val: sc(&data.splits.val)?,
                    test: sc(&data.splits.test)?,
                };
                let r = calibrate_and_cover(&ss, kind, a.delta)?;
                info!(
                    "{label} {kind:?}: single-step joint {:.4}, multi-step joint {:.4}",
                    r.row.single_step.joint, r.row.multi_step.joint
                );
                cov_rows.push(r.row);
                regions.push((label.clone(), kind, r.single));
            }
            let cp = a.out.join(format!("coverage_{label}.csv"));
            write_coverage_csv(writer(&cp)?, &cov_rows)?;
            m.output(cp);
        }
    }

    if a.plots {
        let idx = pick(set.len(), 4);
        let chosen: Vec<Sample> = idx.iter().map(|&i| set[i].clone()).collect();
        let layers: Vec<(String, Vec<Vec<pcmp_core::dynamics::VehicleState>>)> = all_preds
            .iter()
            .map(|(l, p)| (l.clone(), idx.iter().map(|&i| p[i].states.clone()).collect()))
            .collect();
        let tp = a.out.join("trajectories.svg");
        std::fs::write(&tp, plots::trajectories(&data.track, &chosen, &layers))?;
        m.output(tp);
        for (label, _, ck) in &models {
            if let Some(ck) = ck.as_ref().filter(|c| !c.log.is_empty()) {
                let p = a.out.join(format!("loss_{label}.svg"));
                std::fs::write(&p, plots::loss_curve(&ck.log))?;
                m.output(p);
            }
        }
        // Regions are drawn on the test split they were evaluated on.
        if let Some(&i) = pick(data.splits.test.len(), 1).first() {
            let sample = &data.splits.test[i];
            for (label, pred, _) in &models {
                let mine: Vec<_> = regions.iter().filter(|r| &r.0 == label).collect();
                if mine.is_empty() {
                    continue;
                }
                let p = pred.predict_samples(std::slice::from_ref(sample))?.remove(0);
                let frame = LocalFrame::at(&sample.last_obs());
                let mut layers = Vec::new();
                for (_, kind, region) in mine {
                    let anchor = match kind {
                        ScoreKind::RotatedRect => RegionAnchor::Local(&frame),
                        ScoreKind::Frenet => RegionAnchor::Track(&data.track),
                    };
                    layers.push((format!("{:?}", kind), region_polygons(region, &p.states, anchor)?));
                }
                let rp = a.out.join(format!("regions_{label}.svg"));
                std::fs::write(&rp, plots::regions(sample, &p.states, &layers))?;
                m.output(rp);
            }
        }
    }
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Wheelbase sweep and prediction

fn sweep(cfg: FileConfig, a: SweepArgs, jobs: usize) -> Result<()> {
    if a.stride == 0 {
        return Err(config_err("--stride must be positive"));
    }
    let wheelbases: Vec<f64> = if a.wheelbases.is_empty() {
        wheelbase_grid().into_iter().step_by(a.stride).collect()
    } else {
        a.wheelbases.clone()
    };
    if let Some(l) = wheelbases.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(config_err(format!("wheelbase must be positive, got {l}")));
    }
    let data = DataDir::load(&a.data)?;
    let mut tc = cfg.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let cap = |s: &[Sample], n: Option<usize>| s[..n.unwrap_or(s.len()).min(s.len())].to_vec();
    let train = cap(&data.splits.train, a.train_limit);
    let test = cap(&data.splits.test, a.test_limit);
    let mut m = ManifestBuilder::new(
        "sweep-wheelbase",
        serde_json::json!({ "model": cfg.model, "train": tc, "wheelbases": wheelbases }),
        Some(tc.seed),
    );
    for f in data.files() {
        m.input(f);
    }
    info!("training {} models on {} samples", wheelbases.len(), train.len());
    let s = sweep_wheelbase(&train, &[], &test, &wheelbases, &cfg.model, &tc, jobs)?;
    info!("R(L, ADE) = {:.3}, R(L, IoU) = {:.3}, R(L, train loss) = {:.3}", s.r_ade, s.r_iou, s.r_train_loss);
    create_dir(&a.out)?;
    let cp = a.out.join("sweep.csv");
    write_sweep_csv(writer(&cp)?, &s)?;
    m.output(cp);
    let jp = a.out.join("sweep.json");
    write_json(&jp, &s)?;
    m.output(jp);
    let sp = a.out.join("sweep.svg");
    std::fs::write(&sp, plots::sweep(&s))?;
    m.output(sp);
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn predict(cfg: FileConfig, a: PredictArgs, jobs: usize) -> Result<()> {
    let windows = read_windows_csv(File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?)?;
    let mut m = ManifestBuilder::new("predict", serde_json::json!({ "horizon": a.horizon, "ctrv": a.ctrv }), None);
    m.input(&a.input);
    let pred = match &a.checkpoint {
        Some(p) if !a.ctrv => {
            m.input(p);
            load_predictor(p)?.0
        }
        _ => Predictor::Ctrv {
            integrator: cfg.model.integrator,
            horizon: a.horizon,
        },
    };
    let chunk = windows.len().div_ceil(jobs.max(1)).max(1);
    let parts: Vec<_> = std::thread::scope(|sc| {
        let hs: Vec<_> = windows.chunks(chunk).map(|c| sc.spawn(|| pred.predict_many(c))).collect();
        hs.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut preds = Vec::with_capacity(windows.len());
    for p in parts {
        preds.extend(p?);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_predictions_csv(writer(&a.out)?, &preds)?;
    m.output(&a.out);
    m.write(&sidecar(&a.out))?;
    info!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}
