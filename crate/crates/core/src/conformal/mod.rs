//! Coordinate frames, nonconformity scores, CQR calibration and prediction
//! regions.

mod cqr;
mod frames;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleState;
use crate::simkit::Track;

pub use cqr::{
    conformal_rank, coverage_report, cqr_calibrate, min_calibration_size, multi_step_coverage, quantile_higher,
    region_contains, single_step_coverage, CalibratedRegion, CalibrationMode, Containment, Coverage, CoverageRow,
    StepBounds,
};
pub use frames::{from_frenet, from_local, progress_diff, to_frenet, to_local, FrenetCoord, LocalFrame};

/// One horizon step's 2-D score: `(Δx, Δy)` or `(Δs, Δd)`.
pub type Score = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    RotatedRect,
    Frenet,
}

impl ScoreKind {
    pub fn dim_names(self) -> [&'static str; 2] {
        match self {
            ScoreKind::RotatedRect => ["x", "y"],
            ScoreKind::Frenet => ["s", "d"],
        }
    }
}

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("trajectory lengths differ: {pred} predicted vs {truth} true")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("score horizon {got} does not match {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("no training scores")]
    EmptyTraining,
    #[error("no test scores")]
    EmptyTest,
    #[error("calibration needs at least {required} validation samples for delta_bar={delta_bar}, got {got}")]
    InsufficientCalibration { required: usize, got: usize, delta_bar: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check_lengths(pred: &[VehicleState], truth: &[VehicleState]) -> Result<(), ConformalError> {
    if pred.len() != truth.len() {
        return Err(ConformalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(())
}

/// Signed local-frame error `local(truth) − local(pred)` per step.
pub fn score_rotated_rect(
    pred: &[VehicleState],
    truth: &[VehicleState],
    frame: &LocalFrame,
) -> Result<Vec<Score>, ConformalError> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let lp = frame.point_to_local([p.x, p.y]);
            let lt = frame.point_to_local([t.x, t.y]);
            [lt[0] - lp[0], lt[1] - lp[1]]
        })
        .collect())
}

/// Signed Frenet error `(s − ŝ, d − d̂)` per step, with `Δs` the
/// wrap-minimal progress difference.
pub fn score_frenet(pred: &[VehicleState], truth: &[VehicleState], track: &Track) -> Result<Vec<Score>, ConformalError> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let fp = to_frenet([p.x, p.y], track);
            let ft = to_frenet([t.x, t.y], track);
            [progress_diff(fp.s, ft.s), ft.d - fp.d]
        })
        .collect())
}

/// Where a region is anchored when drawn in the world frame.
#[derive(Debug, Clone, Copy)]
pub enum RegionAnchor<'a> {
    Local(&'a LocalFrame),
    Track(&'a Track),
}

/// Minimum boundary samples per edge of a Frenet region polygon.
pub const FRENET_EDGE_POINTS: usize = 8;

/// World-frame polygon per step enclosing the positions the region admits
/// around each predicted state.
pub fn region_polygons(
    region: &CalibratedRegion,
    pred: &[VehicleState],
    anchor: RegionAnchor<'_>,
) -> Result<Vec<Vec<[f64; 2]>>, ConformalError> {
    if pred.len() != region.horizon() {
        return Err(ConformalError::HorizonMismatch {
            expected: region.horizon(),
            got: pred.len(),
        });
    }
    let mut out = Vec::with_capacity(pred.len());
    for (b, p) in region.steps.iter().zip(pred) {
        let poly = match anchor {
            RegionAnchor::Local(frame) => {
                let c = frame.point_to_local([p.x, p.y]);
                let (x0, x1) = (c[0] + b.lower[0], c[0] + b.upper[0]);
                let (y0, y1) = (c[1] + b.lower[1], c[1] + b.upper[1]);
                [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
                    .iter()
                    .map(|q| frame.point_from_local(*q))
                    .collect()
            }
            RegionAnchor::Track(track) => {
                let f = to_frenet([p.x, p.y], track);
                let (s0, s1) = (f.s + b.lower[0], f.s + b.upper[0]);
                let (d0, d1) = (f.d + b.lower[1], f.d + b.upper[1]);
                let m = FRENET_EDGE_POINTS;
                let lerp = |a: f64, z: f64, k: usize| a + (z - a) * k as f64 / m as f64;
                let mut poly = Vec::with_capacity(4 * m);
                let mut push = |s: f64, d: f64| poly.push(from_frenet(FrenetCoord { s: s.rem_euclid(1.0), d }, track));
                for k in 0..m {
                    push(lerp(s0, s1, k), d0);
                }
                for k in 0..m {
                    push(s1, lerp(d0, d1, k));
                }
                for k in 0..m {
                    push(lerp(s1, s0, k), d1);
                }
                for k in 0..m {
                    push(s0, lerp(d1, d0, k));
                }
                poly
            }
        };
        out.push(poly);
    }
    Ok(out)
}

/// `step,vertex,x,y` rows.
pub fn write_polygons_csv<W: std::io::Write>(w: W, polys: &[Vec<[f64; 2]>]) -> Result<(), ConformalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "vertex", "x", "y"])?;
    for (j, poly) in polys.iter().enumerate() {
        for (k, q) in poly.iter().enumerate() {
            wr.write_record([j.to_string(), k.to_string(), q[0].to_string(), q[1].to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::polygon_area;
    use crate::simkit::TrackSpec;
    use approx::assert_abs_diff_eq;

    fn straight_traj(y: f64) -> Vec<VehicleState> {
        (1..=5).map(|k| VehicleState::new(k as f64 * 0.1, y, 0.0, 1.0)).collect()
    }

    fn flat_region(kind: ScoreKind, lower: [f64; 2], upper: [f64; 2], n: usize) -> CalibratedRegion {
        CalibratedRegion {
            kind,
            mode: CalibrationMode::SingleStep,
            delta: 0.05,
            delta_bar: 0.025,
            n_train: 1,
            n_val: 1,
            rank: 1,
            steps: vec![
                StepBounds {
                    q_low: lower,
                    q_high: upper,
                    e: [0.0; 2],
                    lower,
                    upper,
                };
                n
            ],
        }
    }

    #[test]
    fn rotated_rect_scores() {
        let f = LocalFrame::new(0.0, 0.0, 0.0);
        let p = straight_traj(0.0);
        assert!(score_rotated_rect(&p, &p, &f).unwrap().iter().all(|s| *s == [0.0, 0.0]));
        let t = straight_traj(0.1);
        for s in score_rotated_rect(&p, &t, &f).unwrap() {
            assert_abs_diff_eq!(s[1], 0.1, epsilon = 1e-15);
            assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rotated_rect_scores_are_frame_invariant() {
        let f = LocalFrame::new(0.3, -0.2, 0.4);
        let p: Vec<_> = straight_traj(0.0).iter().map(|s| VehicleState::new(s.x, s.y * s.x, 0.1, 1.0)).collect();
        let t = straight_traj(0.25);
        let a = score_rotated_rect(&p, &t, &f).unwrap();
        let phi = 1.9;
        let rot = |s: &VehicleState| crate::dynamics::rotate_state(s, phi);
        let pr: Vec<_> = p.iter().map(rot).collect();
        let tr: Vec<_> = t.iter().map(rot).collect();
        let fr = rot(&VehicleState::new(f.x, f.y, f.theta, 0.0));
        let b = score_rotated_rect(&pr, &tr, &LocalFrame::at(&fr)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x[0], y[0], epsilon = 1e-9);
            assert_abs_diff_eq!(x[1], y[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn frenet_scores_on_a_straight_section() {
        let track = Track::build(&TrackSpec::stadium(40.0, 8.0)).unwrap();
        let p: Vec<_> = (0..4).map(|k| VehicleState::new(10.0 + k as f64, 0.2, 0.0, 2.0)).collect();
        assert!(score_frenet(&p, &p, &track).unwrap().iter().all(|s| *s == [0.0, 0.0]));
        // The track runs counter-clockwise, so −y on the bottom straight is outside.
        let t: Vec<_> = p.iter().map(|s| VehicleState::new(s.x, s.y - 0.5, 0.0, 2.0)).collect();
        for s in score_frenet(&p, &t, &track).unwrap() {
            assert_abs_diff_eq!(s[1], -0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_region_is_the_prediction() {
        let p = straight_traj(1.0);
        let r = flat_region(ScoreKind::RotatedRect, [0.0; 2], [0.0; 2], p.len());
        let f = LocalFrame::new(0.0, 0.0, 0.5);
        for (poly, s) in region_polygons(&r, &p, RegionAnchor::Local(&f)).unwrap().iter().zip(&p) {
            for q in poly {
                assert_abs_diff_eq!(q[0], s.x, epsilon = 1e-12);
                assert_abs_diff_eq!(q[1], s.y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn frenet_region_on_a_straight_is_a_rectangle() {
        let track = Track::build(&TrackSpec::stadium(40.0, 8.0)).unwrap();
        let total = track.total_length();
        let p = vec![VehicleState::new(20.0, 0.0, 0.0, 2.0)];
        let r = flat_region(ScoreKind::Frenet, [-1.0 / total, -0.3], [2.0 / total, 0.4], 1);
        let poly = &region_polygons(&r, &p, RegionAnchor::Track(&track)).unwrap()[0];
        for q in poly {
            assert!(q[0] >= 19.0 - 1e-9 && q[0] <= 22.0 + 1e-9);
            assert!(q[1] >= -0.3 - 1e-9 && q[1] <= 0.4 + 1e-9);
        }
        assert_abs_diff_eq!(polygon_area(poly), 3.0 * 0.7, epsilon = 1e-9);
    }

    #[test]
    fn curved_region_stays_in_band() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let total = track.total_length();
        let p: Vec<_> = (0..30)
            .map(|k| {
                let q = from_frenet(FrenetCoord { s: k as f64 / 30.0, d: 0.1 }, &track);
                VehicleState::new(q[0], q[1], 0.0, 1.0)
            })
            .collect();
        let r = flat_region(ScoreKind::Frenet, [-0.5 / total, -0.2], [0.5 / total, 0.2], p.len());
        for poly in region_polygons(&r, &p, RegionAnchor::Track(&track)).unwrap() {
            for q in poly {
                let f = to_frenet(q, &track);
                assert!(f.d >= -0.1 - 1e-9 && f.d <= 0.3 + 1e-9, "{f:?}");
            }
        }
    }
}
