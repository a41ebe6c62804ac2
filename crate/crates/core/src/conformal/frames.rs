use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::simkit::Track;

/// Rigid frame anchored at a pose; `x` points along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl LocalFrame {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn at(s: &VehicleState) -> Self {
        Self::new(s.x, s.y, s.theta)
    }

    pub fn point_to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn point_from_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn to_local(&self, st: &VehicleState) -> VehicleState {
        let [x, y] = self.point_to_local([st.x, st.y]);
        VehicleState::new(x, y, st.theta - self.theta, st.v)
    }

    pub fn from_local(&self, st: &VehicleState) -> VehicleState {
        let [x, y] = self.point_from_local([st.x, st.y]);
        VehicleState::new(x, y, st.theta + self.theta, st.v)
    }
}

pub fn to_local(states: &[VehicleState], frame: &LocalFrame) -> Vec<VehicleState> {
    states.iter().map(|s| frame.to_local(s)).collect()
}

pub fn from_local(states: &[VehicleState], frame: &LocalFrame) -> Vec<VehicleState> {
    states.iter().map(|s| frame.from_local(s)).collect()
}

/// Track-relative coordinates: `s` is normalised progress in `[0, 1)`, `d`
/// the signed lateral offset (left positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetCoord {
    pub s: f64,
    pub d: f64,
}

// The frame uses per-vertex unit normals interpolated linearly along each
// segment, so offset lines sweep continuously around corners and
// `to_frenet ∘ from_frenet` is exact rather than piecewise.

fn seg_geometry(track: &Track, i: usize) -> ([f64; 2], [f64; 2], [f64; 2], [f64; 2]) {
    let (a, b) = track.segment(i);
    let n = track.len();
    let na = track.vertex_normals()[i];
    let nb = track.vertex_normals()[(i + 1) % n];
    (a, b, na, nb)
}

fn lerp_normal(na: [f64; 2], nb: [f64; 2], t: f64) -> [f64; 2] {
    let v = [na[0] + t * (nb[0] - na[0]), na[1] + t * (nb[1] - na[1])];
    let norm = v[0].hypot(v[1]);
    [v[0] / norm, v[1] / norm]
}

pub fn from_frenet(c: FrenetCoord, track: &Track) -> [f64; 2] {
    let (i, t) = track.locate(c.s * track.total_length());
    let (a, b, na, nb) = seg_geometry(track, i);
    let nrm = lerp_normal(na, nb, t);
    [
        a[0] + t * (b[0] - a[0]) + c.d * nrm[0],
        a[1] + t * (b[1] - a[1]) + c.d * nrm[1],
    ]
}

/// Segments either side of the nearest vertex that are searched for a
/// projection.
const SEARCH_RADIUS: usize = 6;
const T_SLACK: f64 = 1e-12;

/// Candidate foot parameters on segment `i`: roots of
/// `(p − P(t)) × N(t) = 0` with `t ∈ [0, 1]`.
fn segment_roots(track: &Track, i: usize, p: [f64; 2]) -> Vec<f64> {
    let (a, b, na, nb) = seg_geometry(track, i);
    let cr = |u: [f64; 2], v: [f64; 2]| u[0] * v[1] - u[1] * v[0];
    let av = [a[0] - p[0], a[1] - p[1]];
    let bv = [b[0] - a[0], b[1] - a[1]];
    let dn = [nb[0] - na[0], nb[1] - na[1]];
    let c0 = cr(av, na);
    let c1 = cr(av, dn) + cr(bv, na);
    let c2 = cr(bv, dn);
    let mut roots = Vec::with_capacity(2);
    if c2.abs() < 1e-14 * (c1.abs() + c0.abs()).max(1e-300) {
        if c1 != 0.0 {
            roots.push(-c0 / c1);
        }
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable pair.
            let q = -0.5 * (c1 + c1.signum() * sq);
            if q != 0.0 {
                roots.push(q / c2);
                roots.push(c0 / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots
        .into_iter()
        .filter(|t| *t >= -T_SLACK && *t <= 1.0 + T_SLACK)
        .map(|t| t.clamp(0.0, 1.0))
        .collect()
}

/// Projects a point onto the track. Among all feet found near the nearest
/// vertex the one with the smallest `|d|` wins; exact ties go to the smaller
/// `s`.
pub fn to_frenet(p: [f64; 2], track: &Track) -> FrenetCoord {
    let n = track.len();
    let segs = track.num_segments();
    let near = track.nearest_vertex(p);
    let total = track.total_length();
    let cum = track.cumulative_arclength();
    let mut best: Option<FrenetCoord> = None;
    let mut consider = |i: usize, t: f64| {
        let (a, b, na, nb) = seg_geometry(track, i);
        let nrm = lerp_normal(na, nb, t);
        let foot = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let d = (p[0] - foot[0]) * nrm[0] + (p[1] - foot[1]) * nrm[1];
        let s_abs = cum[i] + t * (cum[i + 1] - cum[i]);
        let mut s = s_abs / total;
        if track.is_closed() && s >= 1.0 {
            s -= 1.0;
        }
        let cand = FrenetCoord { s, d };
        let better = match best {
            None => true,
            Some(b) => d.abs() < b.d.abs() || (d.abs() == b.d.abs() && s < b.s),
        };
        if better {
            best = Some(cand);
        }
    };
    for k in 0..=2 * SEARCH_RADIUS {
        let i = if track.is_closed() {
            (near + k + n * SEARCH_RADIUS - SEARCH_RADIUS) % n
        } else {
            match (near + k).checked_sub(SEARCH_RADIUS) {
                Some(i) if i < segs => i,
                _ => continue,
            }
        };
        for t in segment_roots(track, i, p) {
            consider(i, t);
        }
    }
    best.unwrap_or_else(|| {
        // No foot with an interpolated normal through `p` nearby (far away
        // or beyond an open end): fall back to the nearest vertex.
        let v = track.points()[near];
        let nrm = track.vertex_normals()[near];
        FrenetCoord {
            s: (cum[near] / total).rem_euclid(1.0),
            d: (p[0] - v[0]) * nrm[0] + (p[1] - v[1]) * nrm[1],
        }
    })
}

/// Signed wrap-minimal difference `b − a` of two progress values on a closed
/// track.
pub fn progress_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::TrackSpec;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn straight() -> Track {
        let pts: Vec<[f64; 2]> = (0..=100).map(|k| [k as f64, 0.0]).collect();
        Track::new(pts, vec![2.0; 101], vec![2.0; 101], false).unwrap()
    }

    #[test]
    fn local_frame_examples() {
        let f = LocalFrame::new(2.0, -1.0, 0.7);
        let origin = VehicleState::new(2.0, -1.0, 0.7, 3.0);
        let l = f.to_local(&origin);
        assert_abs_diff_eq!(l.x, 0.0);
        assert_abs_diff_eq!(l.y, 0.0);
        assert_abs_diff_eq!(l.theta, 0.0);
        let ahead = VehicleState::new(2.0 + 0.7f64.cos(), -1.0 + 0.7f64.sin(), 0.7, 3.0);
        let l = f.to_local(&ahead);
        assert_abs_diff_eq!(l.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.y, 0.0, epsilon = 1e-15);
        let p = VehicleState::new(-4.0, 9.0, 2.5, 1.0);
        let back = f.from_local(&f.to_local(&p));
        for (a, b) in back.to_array().iter().zip(p.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn frenet_on_a_straight() {
        let t = straight();
        let c = to_frenet([25.0, 2.0], &t);
        assert_abs_diff_eq!(c.s, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.d, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(to_frenet([63.3, 0.0], &t).d, 0.0);
    }

    #[test]
    fn frenet_on_a_circle() {
        // 628 evenly spaced points put a vertex exactly at 90 degrees.
        let n = 628;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [10.0 * a.cos(), 10.0 * a.sin()]
            })
            .collect();
        let t = Track::new(pts, vec![1.5; n], vec![1.5; n], true).unwrap();
        let p = [9.0 * FRAC_PI_2.cos(), 9.0 * FRAC_PI_2.sin()];
        let c = to_frenet(p, &t);
        // Analytic: inward (left of counter-clockwise travel) by R − r.
        assert_abs_diff_eq!(c.d, 10.0 - 9.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.s, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn frenet_round_trip_on_circuit() {
        let t = Track::build(&TrackSpec::default_circuit()).unwrap();
        for k in 0..200 {
            let c = FrenetCoord {
                s: k as f64 / 200.0 + 0.0013,
                d: ((k * 37) % 23) as f64 / 23.0 * 2.8 - 1.4,
            };
            let back = to_frenet(from_frenet(c, &t), &t);
            assert_abs_diff_eq!(back.s, c.s, epsilon = 1e-9);
            assert_abs_diff_eq!(back.d, c.d, epsilon = 1e-9);
        }
    }

    #[test]
    fn wrap_minimal_progress() {
        assert_abs_diff_eq!(progress_diff(0.99, 0.01), 0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(progress_diff(0.01, 0.99), -0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(progress_diff(0.2, 0.3), 0.1, epsilon = 1e-12);
    }
}
