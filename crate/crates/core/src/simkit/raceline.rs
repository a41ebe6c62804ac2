use serde::{Deserialize, Serialize};

use super::{SimError, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Center,
    Left,
    Right,
    Race,
}

impl LineKind {
    pub const ALL: [LineKind; 4] = [LineKind::Center, LineKind::Left, LineKind::Right, LineKind::Race];

    pub fn as_str(self) -> &'static str {
        match self {
            LineKind::Center => "center",
            LineKind::Left => "left",
            LineKind::Right => "right",
            LineKind::Race => "race",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineParams {
    /// Lateral offset of the left/right lines as a fraction of the half-width.
    pub offset_frac: f64,
    /// Largest lateral excursion of the race line (m).
    pub race_offset: f64,
    /// Relaxation sweeps used to straighten the race line.
    pub race_iterations: usize,
    /// Speed multiplier of the race line over the curvature-limited profile.
    pub race_speed_boost: f64,
    pub v_max: f64,
    pub a_lat: f64,
    pub a_long: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            offset_frac: 0.3,
            race_offset: 0.9,
            race_iterations: 4000,
            race_speed_boost: 1.25,
            v_max: 7.0,
            a_lat: 6.0,
            a_long: 4.0,
        }
    }
}

/// A closed path with target speeds that the controllers track.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceLine {
    kind: LineKind,
    path: Track,
    speeds: Vec<f64>,
    headings: Vec<f64>,
    /// Lateral offset of each path point from the centerline vertex it was
    /// built from.
    offsets: Vec<f64>,
}

/// Orthogonal projection of a point onto a race line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    pub t: f64,
    pub point: [f64; 2],
    pub heading: f64,
    /// Positive when the point lies left of the path.
    pub lateral: f64,
    pub speed: f64,
}

impl RaceLine {
    pub fn build(track: &Track, kind: LineKind, params: &LineParams) -> Result<Self, SimError> {
        let n = track.len();
        let offsets: Vec<f64> = match kind {
            LineKind::Center => vec![0.0; n],
            LineKind::Left => track.w_left().iter().map(|w| params.offset_frac * w).collect(),
            LineKind::Right => track.w_right().iter().map(|w| -params.offset_frac * w).collect(),
            LineKind::Race => relax_offsets(track, params),
        };
        let points: Vec<[f64; 2]> = track
            .points()
            .iter()
            .zip(track.vertex_normals())
            .zip(&offsets)
            .map(|((p, nrm), d)| [p[0] + d * nrm[0], p[1] + d * nrm[1]])
            .collect();
        let path = Track::new(points, vec![0.0; n], vec![0.0; n], track.is_closed())?;
        let mut speeds = speed_profile(&path, params);
        if kind == LineKind::Race {
            for v in &mut speeds {
                *v *= params.race_speed_boost;
            }
        }
        let headings = (0..n)
            .map(|i| {
                let nrm = path.vertex_normals()[i];
                (-nrm[0]).atan2(nrm[1])
            })
            .collect();
        Ok(Self {
            kind,
            path,
            speeds,
            headings,
            offsets,
        })
    }

    pub fn kind(&self) -> LineKind {
        self.kind
    }

    pub fn path(&self) -> &Track {
        &self.path
    }

    pub fn points(&self) -> &[[f64; 2]] {
        self.path.points()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    /// Nearest vertex, searching `±window` around `hint` when given.
    pub fn nearest(&self, p: [f64; 2], hint: Option<usize>, window: usize) -> usize {
        let n = self.len();
        let dist = |i: usize| {
            let q = self.points()[i];
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        };
        match hint {
            Some(h) if 2 * window + 1 < n => {
                let mut best = (f64::INFINITY, h);
                for k in 0..=2 * window {
                    let i = (h + n + k - window) % n;
                    let d = dist(i);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            }
            _ => self.path.nearest_vertex(p),
        }
    }

    /// Projects onto whichever segment adjacent to the nearest vertex is
    /// closer.
    pub fn project(&self, p: [f64; 2], hint: Option<usize>, window: usize) -> Projection {
        let n = self.len();
        let i = self.nearest(p, hint, window);
        let mut best: Option<(f64, Projection)> = None;
        for seg in [(i + n - 1) % n, i] {
            let (a, b) = self.path.segment(seg);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * dx, a[1] + t * dy];
            let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
            let j = (seg + 1) % n;
            let lateral = (dx * (p[1] - q[1]) - dy * (p[0] - q[0])) / len2.sqrt();
            let proj = Projection {
                segment: seg,
                t,
                point: q,
                heading: dy.atan2(dx),
                lateral,
                speed: (1.0 - t) * self.speeds[seg] + t * self.speeds[j],
            };
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, proj));
            }
        }
        best.expect("two candidate segments").1
    }

    /// First vertex at or beyond Euclidean distance `lookahead` from `p`,
    /// walking forward from `start`.
    pub fn goal_point(&self, p: [f64; 2], start: usize, lookahead: f64) -> [f64; 2] {
        let n = self.len();
        for k in 0..n {
            let q = self.points()[(start + k) % n];
            if (q[0] - p[0]).hypot(q[1] - p[1]) >= lookahead {
                return q;
            }
        }
        self.points()[(start + 1) % n]
    }
}

/// Minimum-curvature style relaxation: each offset moves its point towards
/// the midpoint of its neighbours, clamped to `±race_offset`. The result cuts
/// corners from outside to apex and back out.
fn relax_offsets(track: &Track, params: &LineParams) -> Vec<f64> {
    let n = track.len();
    let c = track.points();
    let nrm = track.vertex_normals();
    let limit = |i: usize| {
        params
            .race_offset
            .min(track.w_left()[i])
            .min(track.w_right()[i])
    };
    let mut d = vec![0.0; n];
    for _ in 0..params.race_iterations {
        for i in 0..n {
            let (a, b) = ((i + n - 1) % n, (i + 1) % n);
            let pa = [c[a][0] + d[a] * nrm[a][0], c[a][1] + d[a] * nrm[a][1]];
            let pb = [c[b][0] + d[b] * nrm[b][0], c[b][1] + d[b] * nrm[b][1]];
            let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            let step = (mid[0] - c[i][0]) * nrm[i][0] + (mid[1] - c[i][1]) * nrm[i][1] - d[i];
            let lim = limit(i);
            d[i] = (d[i] + step).clamp(-lim, lim);
        }
    }
    d
}

/// Curvature-limited speed, then acceleration- and braking-limited passes
/// around the closed path.
pub fn speed_profile(path: &Track, params: &LineParams) -> Vec<f64> {
    let n = path.len();
    let k = path.curvature();
    let cum = path.cumulative_arclength();
    let mut v: Vec<f64> = k
        .iter()
        .map(|kk| {
            let lim = if kk.abs() > 1e-9 {
                (params.a_lat / kk.abs()).sqrt()
            } else {
                f64::INFINITY
            };
            lim.min(params.v_max)
        })
        .collect();
    let ds = |i: usize| cum[i + 1] - cum[i];
    // Two laps each way settle the wrap-around.
    for _ in 0..2 {
        for i in 0..n {
            let j = (i + 1) % n;
            let cap = (v[i] * v[i] + 2.0 * params.a_long * ds(i)).sqrt();
            v[j] = v[j].min(cap);
        }
        for i in (0..n).rev() {
            let j = (i + 1) % n;
            let cap = (v[j] * v[j] + 2.0 * params.a_long * ds(i)).sqrt();
            v[i] = v[i].min(cap);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::TrackSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn offsets_follow_the_normals() {
        let track = Track::build(&TrackSpec::circle(10.0)).unwrap();
        let p = LineParams::default();
        let left = RaceLine::build(&track, LineKind::Left, &p).unwrap();
        // Left of a counter-clockwise circle is inward.
        for q in left.points() {
            assert_abs_diff_eq!(q[0].hypot(q[1]), 10.0 - 0.45, epsilon = 1e-9);
        }
        let right = RaceLine::build(&track, LineKind::Right, &p).unwrap();
        assert_abs_diff_eq!(right.points()[7][0].hypot(right.points()[7][1]), 10.45, epsilon = 1e-9);
    }

    #[test]
    fn race_line_leaves_the_offset_band() {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let p = LineParams::default();
        let race = RaceLine::build(&track, LineKind::Race, &p).unwrap();
        let band = p.offset_frac * track.min_half_width();
        let widest = race.offsets().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(widest > band + 0.2, "widest {widest}");
        assert!(widest <= p.race_offset + 1e-12);
        let center = RaceLine::build(&track, LineKind::Center, &p).unwrap();
        let vr = race.speeds().iter().sum::<f64>();
        let vc = center.speeds().iter().sum::<f64>();
        assert!(vr > 1.1 * vc, "{vr} {vc}");
    }

    #[test]
    fn speed_profile_respects_limits() {
        let track = Track::build(&TrackSpec::stadium(30.0, 5.0)).unwrap();
        let p = LineParams::default();
        let v = speed_profile(&track, &p);
        let cum = track.cumulative_arclength();
        for i in 0..v.len() {
            let j = (i + 1) % v.len();
            let ds = cum[i + 1] - cum[i];
            assert!(v[j] * v[j] <= v[i] * v[i] + 2.0 * p.a_long * ds + 1e-9);
            assert!(v[i] <= p.v_max);
        }
        let corner = (p.a_lat * 5.0).sqrt();
        assert!(v.iter().any(|x| (x - corner).abs() < 0.05));
    }

    #[test]
    fn projection_on_circle() {
        let track = Track::build(&TrackSpec::circle(10.0)).unwrap();
        let line = RaceLine::build(&track, LineKind::Center, &LineParams::default()).unwrap();
        let pr = line.project([0.0, 9.5], None, 0);
        assert_abs_diff_eq!(pr.lateral, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(pr.heading.rem_euclid(2.0 * std::f64::consts::PI), std::f64::consts::PI, epsilon = 1e-2);
    }
}
