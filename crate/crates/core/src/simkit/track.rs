use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Default half-width of generated tracks (m).
pub const DEFAULT_HALF_WIDTH: f64 = 1.5;

/// Default spacing between generated centerline points (m).
pub const DEFAULT_SPACING: f64 = 0.1;

/// Building block of a synthetic circuit. Positive `angle_deg` turns left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length: f64 },
    Arc { radius: f64, angle_deg: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle_deg } => radius * angle_deg.to_radians().abs(),
        }
    }

    fn turning(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { angle_deg, .. } => angle_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TrackShape {
    Circle {
        radius: f64,
    },
    /// Two straights joined by semicircles.
    Stadium {
        straight: f64,
        radius: f64,
    },
    /// The half is driven twice; any half that turns through exactly 180°
    /// closes into a point-symmetric loop.
    Circuit {
        half: Vec<Segment>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    #[serde(flatten)]
    pub shape: TrackShape,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_half_width() -> f64 {
    DEFAULT_HALF_WIDTH
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING
}

impl TrackSpec {
    pub fn circle(radius: f64) -> Self {
        Self {
            shape: TrackShape::Circle { radius },
            half_width: DEFAULT_HALF_WIDTH,
            spacing: DEFAULT_SPACING,
        }
    }

    pub fn stadium(straight: f64, radius: f64) -> Self {
        Self {
            shape: TrackShape::Stadium { straight, radius },
            half_width: DEFAULT_HALF_WIDTH,
            spacing: DEFAULT_SPACING,
        }
    }

    /// A mixed circuit of straights, hairpin-like corners and an S-bend,
    /// about 86 m long.
    pub fn default_circuit() -> Self {
        use Segment::*;
        Self {
            shape: TrackShape::Circuit {
                half: vec![
                    Straight { length: 12.0 },
                    Arc { radius: 5.0, angle_deg: 90.0 },
                    Straight { length: 4.0 },
                    Arc { radius: 4.0, angle_deg: -60.0 },
                    Arc { radius: 4.0, angle_deg: 120.0 },
                    Straight { length: 3.0 },
                    Arc { radius: 7.0, angle_deg: 30.0 },
                ],
            },
            half_width: DEFAULT_HALF_WIDTH,
            spacing: DEFAULT_SPACING,
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        match &self.shape {
            TrackShape::Circle { radius } => vec![Segment::Arc {
                radius: *radius,
                angle_deg: 360.0,
            }],
            TrackShape::Stadium { straight, radius } => {
                let s = Segment::Straight { length: *straight };
                let a = Segment::Arc {
                    radius: *radius,
                    angle_deg: 180.0,
                };
                vec![s, a, s, a]
            }
            TrackShape::Circuit { half } => half.iter().chain(half.iter()).copied().collect(),
        }
    }
}

/// Closed (or, for tests and tools, open) centerline polyline with widths.
///
/// Points are stored without repeating the first point at the end; a closed
/// track has an implicit segment from the last point back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    points: Vec<[f64; 2]>,
    w_left: Vec<f64>,
    w_right: Vec<f64>,
    closed: bool,
    cum_s: Vec<f64>,
    curvature: Vec<f64>,
    normals: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    x: f64,
    y: f64,
    w_left: f64,
    w_right: f64,
}

impl Track {
    pub fn new(points: Vec<[f64; 2]>, w_left: Vec<f64>, w_right: Vec<f64>, closed: bool) -> Result<Self, SimError> {
        let mut points = points;
        let (mut w_left, mut w_right) = (w_left, w_right);
        if points.len() != w_left.len() || points.len() != w_right.len() {
            return Err(SimError::InvalidTrack("width columns do not match the point count".into()));
        }
        if closed && points.len() > 1 {
            let (f, l) = (points[0], points[points.len() - 1]);
            if (f[0] - l[0]).hypot(f[1] - l[1]) < 1e-9 {
                points.pop();
                w_left.pop();
                w_right.pop();
            }
        }
        let min_points = if closed { 3 } else { 2 };
        if points.len() < min_points {
            return Err(SimError::InvalidTrack(format!(
                "need at least {min_points} distinct points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().chain(&w_left).chain(&w_right).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidTrack("non-finite value".into()));
        }
        let n = points.len();
        let segs = if closed { n } else { n - 1 };
        let mut cum_s = Vec::with_capacity(segs + 1);
        cum_s.push(0.0);
        for i in 0..segs {
            let (a, b) = (points[i], points[(i + 1) % n]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len <= 0.0 {
                return Err(SimError::InvalidTrack(format!("repeated point at index {i}")));
            }
            cum_s.push(cum_s[i] + len);
        }
        let mut track = Self {
            points,
            w_left,
            w_right,
            closed,
            cum_s,
            curvature: Vec::new(),
            normals: Vec::new(),
        };
        track.curvature = (0..n).map(|i| track.menger_curvature(i)).collect();
        track.normals = (0..n).map(|i| track.compute_normal(i)).collect();
        Ok(track)
    }

    pub fn build(spec: &TrackSpec) -> Result<Self, SimError> {
        if !(spec.half_width > 0.0 && spec.spacing > 0.0) {
            return Err(SimError::InvalidTrack("half_width and spacing must be positive".into()));
        }
        let segments = spec.segments();
        if let TrackShape::Circuit { half } = &spec.shape {
            let turn: f64 = half.iter().map(Segment::turning).sum();
            if (turn.abs() - PI).abs() > 1e-9 {
                return Err(SimError::InvalidTrack(format!(
                    "circuit half must turn through 180 degrees, turns {:.3}",
                    turn.to_degrees()
                )));
            }
        }
        let mut points = Vec::new();
        // Circles are centred on the origin; other shapes start there.
        let start = match spec.shape {
            TrackShape::Circle { radius } => (radius, 0.0, PI / 2.0),
            _ => (0.0, 0.0, 0.0),
        };
        let (mut x, mut y, mut h) = start;
        for seg in &segments {
            let len = seg.length();
            if !(len > 0.0) {
                return Err(SimError::InvalidTrack("segment lengths must be positive".into()));
            }
            let count = (len / spec.spacing).ceil().max(1.0) as usize;
            match *seg {
                Segment::Straight { length } => {
                    let (s, c) = h.sin_cos();
                    for k in 0..count {
                        let d = length * k as f64 / count as f64;
                        points.push([x + c * d, y + s * d]);
                    }
                    x += c * length;
                    y += s * length;
                }
                Segment::Arc { radius, angle_deg } => {
                    let sweep = angle_deg.to_radians();
                    let side = sweep.signum();
                    // Centre sits to the left for left turns.
                    let (cx, cy) = (x - side * radius * h.sin(), y + side * radius * h.cos());
                    let phi0 = h - side * PI / 2.0;
                    for k in 0..count {
                        let phi = phi0 + sweep * k as f64 / count as f64;
                        points.push([cx + radius * phi.cos(), cy + radius * phi.sin()]);
                    }
                    let phi = phi0 + sweep;
                    x = cx + radius * phi.cos();
                    y = cy + radius * phi.sin();
                    h += sweep;
                }
            }
        }
        let gap = (x - start.0).hypot(y - start.1);
        if gap > 1e-6 {
            return Err(SimError::InvalidTrack(format!("circuit does not close (gap {gap:.3} m)")));
        }
        let n = points.len();
        Self::new(points, vec![spec.half_width; n], vec![spec.half_width; n], true)
    }

    pub fn load_csv(path: &Path) -> Result<Self, SimError> {
        let mut rd = csv::Reader::from_path(path)?;
        let (mut pts, mut wl, mut wr) = (Vec::new(), Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let r: TrackRow = row?;
            pts.push([r.x, r.y]);
            wl.push(r.w_left);
            wr.push(r.w_right);
        }
        Self::new(pts, wl, wr, true)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_path(path)?;
        for i in 0..self.points.len() {
            wr.serialize(TrackRow {
                x: self.points[i][0],
                y: self.points[i][1],
                w_left: self.w_left[i],
                w_right: self.w_right[i],
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn num_segments(&self) -> usize {
        self.cum_s.len() - 1
    }

    pub fn total_length(&self) -> f64 {
        self.cum_s[self.cum_s.len() - 1]
    }

    /// Arclength at each vertex, plus the total length as the last entry.
    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cum_s
    }

    pub fn w_left(&self) -> &[f64] {
        &self.w_left
    }

    pub fn w_right(&self) -> &[f64] {
        &self.w_right
    }

    /// Signed curvature at each vertex (positive turning left).
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// Unit left normal at each vertex, from the central-difference tangent.
    pub fn vertex_normals(&self) -> &[[f64; 2]] {
        &self.normals
    }

    /// Smallest half-width over the track.
    pub fn min_half_width(&self) -> f64 {
        self.w_left
            .iter()
            .chain(&self.w_right)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Segment `i` endpoints.
    pub fn segment(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.points[i], self.points[(i + 1) % self.points.len()])
    }

    fn neighbours(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let n = self.points.len();
        if self.closed {
            (Some((i + n - 1) % n), Some((i + 1) % n))
        } else {
            ((i > 0).then(|| i - 1), (i + 1 < n).then_some(i + 1))
        }
    }

    fn menger_curvature(&self, i: usize) -> f64 {
        let (Some(a), Some(c)) = self.neighbours(i) else {
            return 0.0;
        };
        let (p, q, r) = (self.points[a], self.points[i], self.points[c]);
        let cr = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        let ab = (q[0] - p[0]).hypot(q[1] - p[1]);
        let bc = (r[0] - q[0]).hypot(r[1] - q[1]);
        let ac = (r[0] - p[0]).hypot(r[1] - p[1]);
        2.0 * cr / (ab * bc * ac)
    }

    fn compute_normal(&self, i: usize) -> [f64; 2] {
        let (prev, next) = self.neighbours(i);
        let a = self.points[prev.unwrap_or(i)];
        let b = self.points[next.unwrap_or(i)];
        let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
        let norm = tx.hypot(ty);
        [-ty / norm, tx / norm]
    }

    /// Index of the vertex nearest to `p`.
    pub fn nearest_vertex(&self, p: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.points.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Segment index and fraction for an arclength, wrapping on closed tracks
    /// and clamping on open ones.
    pub fn locate(&self, s_abs: f64) -> (usize, f64) {
        let total = self.total_length();
        let s = if self.closed {
            s_abs.rem_euclid(total)
        } else {
            s_abs.clamp(0.0, total)
        };
        let i = match self.cum_s.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
        .min(self.num_segments() - 1);
        let len = self.cum_s[i + 1] - self.cum_s[i];
        (i, ((s - self.cum_s[i]) / len).clamp(0.0, 1.0))
    }

    /// Mean signed vertex curvature over `[s_abs, s_abs + distance]`.
    pub fn forward_curvature(&self, s_abs: f64, distance: f64) -> f64 {
        let (start, _) = self.locate(s_abs);
        let n = self.points.len();
        let mut acc = 0.0;
        let mut count = 0usize;
        let mut travelled = 0.0;
        let mut i = start;
        loop {
            let next = (i + 1) % n;
            acc += self.curvature[next];
            count += 1;
            travelled += self.cum_s[i + 1] - self.cum_s[i];
            if travelled >= distance || count >= n || (!self.closed && next + 1 >= n) {
                break;
            }
            i = next;
        }
        acc / count as f64
    }

    /// Largest |curvature| at any vertex.
    pub fn max_abs_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0, |m, k| m.max(k.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn circle_curvature_is_inverse_radius() {
        let t = Track::build(&TrackSpec::circle(20.0)).unwrap();
        for k in t.curvature() {
            assert_abs_diff_eq!(*k, 1.0 / 20.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(t.total_length(), 2.0 * PI * 20.0, epsilon = 1e-2);
    }

    #[test]
    fn stadium_straights_are_flat() {
        let t = Track::build(&TrackSpec::stadium(30.0, 10.0)).unwrap();
        // Interior points of the first straight (x in (0, 30)).
        let mut seen = 0;
        for (p, k) in t.points().iter().zip(t.curvature()) {
            if p[1].abs() < 1e-9 && p[0] > 0.5 && p[0] < 29.5 {
                assert_abs_diff_eq!(*k, 0.0, epsilon = 1e-9);
                seen += 1;
            }
        }
        assert!(seen > 200);
        let max = t.max_abs_curvature();
        assert_abs_diff_eq!(max, 0.1, epsilon = 1e-3);
    }

    #[test]
    fn default_circuit_closes() {
        let t = Track::build(&TrackSpec::default_circuit()).unwrap();
        assert!(t.total_length() > 80.0);
        assert!(t.max_abs_curvature() < 0.26);
        // Distinct parts of the circuit keep their track bands apart.
        let cum = t.cumulative_arclength();
        let total = t.total_length();
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                let along = (cum[j] - cum[i]).min(total - (cum[j] - cum[i]));
                if along > 12.0 {
                    let (a, b) = (t.points()[i], t.points()[j]);
                    assert!((a[0] - b[0]).hypot(a[1] - b[1]) > 4.0, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn unbalanced_circuit_rejected() {
        let spec = TrackSpec {
            shape: TrackShape::Circuit {
                half: vec![Segment::Straight { length: 5.0 }, Segment::Arc { radius: 3.0, angle_deg: 90.0 }],
            },
            half_width: 1.0,
            spacing: 0.1,
        };
        assert!(Track::build(&spec).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = Track::build(&TrackSpec::default_circuit()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("track.csv");
        t.save_csv(&p).unwrap();
        let back = Track::load_csv(&p).unwrap();
        assert_eq!(back, t);
        let p2 = dir.path().join("again.csv");
        back.save_csv(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn forward_curvature_on_circle() {
        let t = Track::build(&TrackSpec::circle(10.0)).unwrap();
        assert_abs_diff_eq!(t.forward_curvature(3.0, 5.0), 0.1, epsilon = 1e-9);
    }
}
