use serde::{Deserialize, Serialize};

use super::{ConformalError, Score, ScoreKind};

/// Guards `ceil` against products such as `0.95 · 20` landing a rounding
/// error above an integer.
const RANK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Per-step regions; `δ̄ = δ/2` splits the budget over two dimensions.
    SingleStep,
    /// Joint over all steps and both dimensions; `δ̄ = δ/(2n)`.
    MultiStep,
}

impl CalibrationMode {
    pub fn delta_bar(self, delta: f64, horizon: usize) -> f64 {
        match self {
            CalibrationMode::SingleStep => delta / 2.0,
            CalibrationMode::MultiStep => delta / (2.0 * horizon as f64),
        }
    }
}

/// Order statistic with numpy's "higher" rule: the element at index
/// `ceil(p·(N−1))` of the sorted sample.
pub fn quantile_higher(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let idx = (p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64 - RANK_EPS).ceil().max(0.0) as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// 1-based rank `k = ceil((1−δ̄)(n+1))` of the nonconformity order statistic,
/// or `None` when `k > n`.
pub fn conformal_rank(n: usize, delta_bar: f64) -> Option<usize> {
    let k = ((1.0 - delta_bar) * (n as f64 + 1.0) - RANK_EPS).ceil().max(1.0) as usize;
    (k <= n).then_some(k)
}

/// Smallest calibration size for which [`conformal_rank`] exists.
pub fn min_calibration_size(delta_bar: f64) -> usize {
    if !(delta_bar > 0.0) {
        return usize::MAX;
    }
    let mut n = ((1.0 / delta_bar).floor() as usize).saturating_sub(2).max(1);
    while conformal_rank(n, delta_bar).is_none() {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub q_low: [f64; 2],
    pub q_high: [f64; 2],
    pub e: [f64; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedRegion {
    pub kind: ScoreKind,
    pub mode: CalibrationMode,
    pub delta: f64,
    pub delta_bar: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Rank of the nonconformity order statistic used for `E`.
    pub rank: usize,
    pub steps: Vec<StepBounds>,
}

impl CalibratedRegion {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), ConformalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, ConformalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn check_scores(scores: &[Vec<Score>], horizon: usize, what: &'static str) -> Result<(), ConformalError> {
    for s in scores {
        if s.len() != horizon {
            return Err(ConformalError::HorizonMismatch {
                expected: horizon,
                got: s.len(),
            });
        }
        if s.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ConformalError::NonFinite(what));
        }
    }
    Ok(())
}

/// Conformalized quantile regression per step and dimension: training
/// scores give `q_low`/`q_high` at `δ̄/2` and `1−δ̄/2`; validation
/// nonconformity `R = max(q_low − s, s − q_high)` gives `E`, its
/// `ceil((1−δ̄)(n+1))`-th smallest value. Bounds are `[q_low − E, q_high + E]`.
pub fn cqr_calibrate(
    train: &[Vec<Score>],
    val: &[Vec<Score>],
    delta: f64,
    mode: CalibrationMode,
    kind: ScoreKind,
) -> Result<CalibratedRegion, ConformalError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ConformalError::InvalidDelta(delta));
    }
    if train.is_empty() {
        return Err(ConformalError::EmptyTraining);
    }
    let horizon = train[0].len();
    if horizon == 0 {
        return Err(ConformalError::HorizonMismatch { expected: 1, got: 0 });
    }
    check_scores(train, horizon, "training score")?;
    check_scores(val, horizon, "validation score")?;
    let delta_bar = mode.delta_bar(delta, horizon);
    let rank = conformal_rank(val.len(), delta_bar).ok_or(ConformalError::InsufficientCalibration {
        required: min_calibration_size(delta_bar),
        got: val.len(),
        delta_bar,
    })?;
    let mut steps = Vec::with_capacity(horizon);
    let mut col = Vec::with_capacity(train.len().max(val.len()));
    for j in 0..horizon {
        let mut b = StepBounds {
            q_low: [0.0; 2],
            q_high: [0.0; 2],
            e: [0.0; 2],
            lower: [0.0; 2],
            upper: [0.0; 2],
        };
        for k in 0..2 {
            col.clear();
            col.extend(train.iter().map(|s| s[j][k]));
            col.sort_by(f64::total_cmp);
            let q_low = quantile_higher(&col, delta_bar / 2.0);
            let q_high = quantile_higher(&col, 1.0 - delta_bar / 2.0);
            col.clear();
            col.extend(val.iter().map(|s| (q_low - s[j][k]).max(s[j][k] - q_high)));
            col.sort_by(f64::total_cmp);
            let e = col[rank - 1];
            b.q_low[k] = q_low;
            b.q_high[k] = q_high;
            b.e[k] = e;
            b.lower[k] = q_low - e;
            b.upper[k] = q_high + e;
        }
        steps.push(b);
    }
    Ok(CalibratedRegion {
        kind,
        mode,
        delta,
        delta_bar,
        n_train: train.len(),
        n_val: val.len(),
        rank,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Containment {
    pub dims: [bool; 2],
    pub joint: bool,
}

/// Closed-interval membership of one step's score.
pub fn region_contains(region: &CalibratedRegion, score: Score, step: usize) -> Containment {
    let b = &region.steps[step];
    let dims = [0, 1].map(|k| score[k] >= b.lower[k] && score[k] <= b.upper[k]);
    Containment {
        dims,
        joint: dims[0] && dims[1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub dims: [f64; 2],
    pub joint: f64,
}

/// Fraction of (sample, step) pairs inside their step's region.
pub fn single_step_coverage(region: &CalibratedRegion, scores: &[Vec<Score>]) -> Result<Coverage, ConformalError> {
    check_scores(scores, region.horizon(), "test score")?;
    if scores.is_empty() {
        return Err(ConformalError::EmptyTest);
    }
    let mut hits = [0usize; 3];
    for s in scores {
        for (j, sc) in s.iter().enumerate() {
            let c = region_contains(region, *sc, j);
            hits[0] += c.dims[0] as usize;
            hits[1] += c.dims[1] as usize;
            hits[2] += c.joint as usize;
        }
    }
    let total = (scores.len() * region.horizon()) as f64;
    Ok(Coverage {
        dims: [hits[0] as f64 / total, hits[1] as f64 / total],
        joint: hits[2] as f64 / total,
    })
}

/// Fraction of samples whose whole trajectory lies inside the region.
pub fn multi_step_coverage(region: &CalibratedRegion, scores: &[Vec<Score>]) -> Result<Coverage, ConformalError> {
    check_scores(scores, region.horizon(), "test score")?;
    if scores.is_empty() {
        return Err(ConformalError::EmptyTest);
    }
    let mut hits = [0usize; 3];
    for s in scores {
        let mut all = [true; 3];
        for (j, sc) in s.iter().enumerate() {
            let c = region_contains(region, *sc, j);
            all[0] &= c.dims[0];
            all[1] &= c.dims[1];
            all[2] &= c.joint;
        }
        for k in 0..3 {
            hits[k] += all[k] as usize;
        }
    }
    let total = scores.len() as f64;
    Ok(Coverage {
        dims: [hits[0] as f64 / total, hits[1] as f64 / total],
        joint: hits[2] as f64 / total,
    })
}

/// One coverage table row: single-step coverage of the single-step region
/// and whole-trajectory coverage of the multi-step region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub kind: ScoreKind,
    pub single_step: Coverage,
    pub multi_step: Coverage,
}

pub fn coverage_report(
    single: &CalibratedRegion,
    multi: &CalibratedRegion,
    test_scores: &[Vec<Score>],
) -> Result<CoverageRow, ConformalError> {
    Ok(CoverageRow {
        kind: single.kind,
        single_step: single_step_coverage(single, test_scores)?,
        multi_step: multi_step_coverage(multi, test_scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_d(values: &[f64]) -> Vec<Vec<Score>> {
        values.iter().map(|v| vec![[*v, *v]]).collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(conformal_rank(19, 0.05), Some(19));
        assert_eq!(conformal_rank(18, 0.05), None);
        assert_eq!(min_calibration_size(0.05), 19);
        let db = CalibrationMode::MultiStep.delta_bar(0.05, 60);
        assert_eq!(min_calibration_size(db), 2399);
    }

    #[test]
    fn higher_quantile() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_higher(&s, 0.0), 1.0);
        assert_eq!(quantile_higher(&s, 0.3), 3.0);
        assert_eq!(quantile_higher(&s, 0.5), 3.0);
        assert_eq!(quantile_higher(&s, 1.0), 5.0);
    }

    #[test]
    fn degenerate_distribution_is_covered() {
        let train = one_d(&[0.5; 50]);
        let val = one_d(&[0.5; 40]);
        let r = cqr_calibrate(&train, &val, 0.05, CalibrationMode::SingleStep, ScoreKind::RotatedRect).unwrap();
        assert!(region_contains(&r, [0.5, 0.5], 0).joint);
        let cov = single_step_coverage(&r, &one_d(&[0.5; 10])).unwrap();
        assert_eq!(cov.joint, 1.0);
    }

    #[test]
    fn gaussian_region_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let val: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = cqr_calibrate(&one_d(&train), &one_d(&val), 0.1, CalibrationMode::SingleStep, ScoreKind::RotatedRect)
            .unwrap();
        // δ̄ = 0.05: q at 2.5% / 97.5%, roughly ±1.96.
        let mut st = train.clone();
        st.sort_by(f64::total_cmp);
        let lo = st[(0.025f64 * 999.0).ceil() as usize];
        let hi = st[(0.975f64 * 999.0).ceil() as usize];
        let mut rs: Vec<f64> = val.iter().map(|s| (lo - s).max(s - hi)).collect();
        rs.sort_by(f64::total_cmp);
        let e = rs[(0.95f64 * 1001.0).ceil() as usize - 1];
        let b = r.steps[0];
        assert_eq!(b.lower[0], lo - e);
        assert_eq!(b.upper[0], hi + e);
        assert!((lo + 1.96).abs() < 0.2 && (hi - 1.96).abs() < 0.2 && e.abs() < 0.2);
    }

    #[test]
    fn insufficient_validation_names_the_minimum() {
        let train = one_d(&[0.0; 30]);
        let err = cqr_calibrate(&train, &one_d(&[0.0; 10]), 0.1, CalibrationMode::SingleStep, ScoreKind::Frenet)
            .unwrap_err();
        match err {
            ConformalError::InsufficientCalibration { required, got, .. } => {
                assert_eq!(got, 10);
                assert_eq!(required, 19);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn boundary_is_inside() {
        let train = one_d(&[-1.0, 1.0]);
        let val = one_d(&[0.0; 40]);
        let r = cqr_calibrate(&train, &val, 0.1, CalibrationMode::SingleStep, ScoreKind::RotatedRect).unwrap();
        let b = r.steps[0];
        assert!(region_contains(&r, [b.lower[0], b.upper[1]], 0).joint);
        assert!(region_contains(&r, [0.0, 0.0], 0).joint);
        assert!(!region_contains(&r, [b.upper[0] + 1e-9, 0.0], 0).joint);
    }
}
