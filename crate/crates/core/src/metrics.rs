//! Displacement errors and oriented-box overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleState;

/// Default 1/10-scale vehicle footprint (m).
pub const DEFAULT_LENGTH: f64 = 0.58;
pub const DEFAULT_WIDTH: f64 = 0.31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {pred} predicted vs {truth} true")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty trajectory")]
    Empty,
    #[error("box extents must be positive, got {length} x {width}")]
    DegenerateBox { length: f64, width: f64 },
    #[error("need at least two paired values, got {0}")]
    TooFewValues(usize),
}

fn check_pair(pred: &[VehicleState], truth: &[VehicleState]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Per-step planar distance.
pub fn displacements(pred: &[VehicleState], truth: &[VehicleState]) -> Result<Vec<f64>, MetricsError> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.x - t.x).hypot(p.y - t.y))
        .collect())
}

pub fn ade(pred: &[VehicleState], truth: &[VehicleState]) -> Result<f64, MetricsError> {
    let d = displacements(pred, truth)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

pub fn fde(pred: &[VehicleState], truth: &[VehicleState]) -> Result<f64, MetricsError> {
    check_pair(pred, truth)?;
    let (p, t) = (pred[pred.len() - 1], truth[truth.len() - 1]);
    Ok((p.x - t.x).hypot(p.y - t.y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(x: f64, y: f64, theta: f64, length: f64, width: f64) -> Result<Self, MetricsError> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(MetricsError::DegenerateBox { length, width });
        }
        Ok(Self {
            x,
            y,
            theta,
            length,
            width,
        })
    }

    /// Vehicle footprint centred on the state's reference point.
    pub fn footprint(s: &VehicleState, length: f64, width: f64) -> Result<Self, MetricsError> {
        Self::new(s.x, s.y, s.theta, length, width)
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.length / 2.0 && v.abs() <= self.width / 2.0
    }
}

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

pub fn oriented_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners())).max(0.0);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Mean footprint IoU over the horizon.
pub fn mean_iou(
    pred: &[VehicleState],
    truth: &[VehicleState],
    length: f64,
    width: f64,
) -> Result<f64, MetricsError> {
    check_pair(pred, truth)?;
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        acc += oriented_iou(
            &OrientedBox::footprint(p, length, width)?,
            &OrientedBox::footprint(t, length, width)?,
        );
    }
    Ok(acc / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub ade: f64,
    pub fde: f64,
    pub iou: f64,
}

impl SampleMetrics {
    pub fn compute(
        pred: &[VehicleState],
        truth: &[VehicleState],
        length: f64,
        width: f64,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            ade: ade(pred, truth)?,
            fde: fde(pred, truth)?,
            iou: mean_iou(pred, truth, length, width)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    pub iou: f64,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>) -> Result<Self, MetricsError> {
        if per_sample.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = per_sample.len() as f64;
        Ok(Self {
            ade: per_sample.iter().map(|m| m.ade).sum::<f64>() / n,
            fde: per_sample.iter().map(|m| m.fde).sum::<f64>() / n,
            iou: per_sample.iter().map(|m| m.iou).sum::<f64>() / n,
            per_sample,
        })
    }

    pub fn evaluate<'a, I>(pairs: I, length: f64, width: f64) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (&'a [VehicleState], &'a [VehicleState])>,
    {
        let per_sample = pairs
            .into_iter()
            .map(|(p, t)| SampleMetrics::compute(p, t, length, width))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_samples(per_sample)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sample", "ade", "fde", "iou"])?;
        for (i, m) in self.per_sample.iter().enumerate() {
            wr.write_record([i.to_string(), m.ade.to_string(), m.fde.to_string(), m.iou.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            pred: xs.len(),
            truth: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewValues(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
