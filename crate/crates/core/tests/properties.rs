//! Randomized invariants across the library.

use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;

use pcmp_core::conformal::{cqr_calibrate, from_frenet, to_frenet, CalibrationMode, FrenetCoord, Score, ScoreKind};
use pcmp_core::dynamics::{
    is_feasible, rollout, rotate_state, BicycleParams, ControlBounds, ControlInput, IntegratorConfig, VehicleState,
    DEFAULT_A_MAX, DEFAULT_DELTA_MAX, DEFAULT_TS, TRUE_WHEELBASE,
};
use pcmp_core::metrics::{ade, displacements, fde, oriented_iou, OrientedBox};
use pcmp_core::net::{bound_controls, BoundedActivation};
use pcmp_core::predictor::{HeadKind, Model, ModelConfig, ObservationWindow};
use pcmp_core::simkit::{Track, TrackSpec};
use pcmp_core::trainer::{weighted_l1_loss, LossWeights};

fn state() -> impl Strategy<Value = VehicleState> {
    (-20.0..20.0, -20.0..20.0, -PI..PI, 0.0..6.0).prop_map(|(x, y, t, v)| VehicleState::new(x, y, t, v))
}

fn bounded_control() -> impl Strategy<Value = ControlInput> {
    (-DEFAULT_DELTA_MAX..DEFAULT_DELTA_MAX, -DEFAULT_A_MAX..DEFAULT_A_MAX).prop_map(|(d, a)| ControlInput::new(d, a))
}

fn controls(n: usize) -> impl Strategy<Value = Vec<ControlInput>> {
    prop::collection::vec(bounded_control(), 1..n)
}

fn bike() -> BicycleParams {
    BicycleParams::new(TRUE_WHEELBASE).unwrap()
}

fn with_start(s0: VehicleState, rest: Vec<VehicleState>) -> Vec<VehicleState> {
    std::iter::once(s0).chain(rest).collect()
}

fn max_diff(a: &VehicleState, b: &VehicleState) -> f64 {
    [a.x - b.x, a.y - b.y, a.theta - b.theta, a.v - b.v]
        .iter()
        .fold(0.0_f64, |m, d| m.max(d.abs()))
}

fn window(states: Vec<VehicleState>) -> ObservationWindow {
    ObservationWindow { states, context: 0.1 }
}

/// A smooth observation history ending anywhere in the plane.
fn history() -> impl Strategy<Value = ObservationWindow> {
    let n = ModelConfig::default().obs_len;
    (state(), prop::collection::vec(bounded_control(), n - 1)).prop_map(|(s0, u)| {
        let cfg = IntegratorConfig::default();
        let mut states = vec![s0];
        states.extend(rollout(&s0, &u, &bike(), &cfg).unwrap());
        window(states)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_feasible(s0 in state(), u in controls(40), rk4 in any::<bool>()) {
        let cfg = if rk4 { IntegratorConfig::rk4(DEFAULT_TS) } else { IntegratorConfig::euler(DEFAULT_TS) };
        let traj = with_start(s0, rollout(&s0, &u, &bike(), &cfg).unwrap());
        let rep = is_feasible(&traj, &bike(), &cfg, &ControlBounds::default(), 1e-6).unwrap();
        prop_assert!(rep.is_feasible(), "{:?}", rep.violation);
        for (w, u) in rep.witnesses().iter().zip(&u) {
            // Steering is unobservable at zero speed.
            prop_assert!((w.a - u.a).abs() < 1e-6);
        }
    }

    #[test]
    fn rollouts_are_rotation_equivariant(s0 in state(), u in controls(30), phi in -PI..PI) {
        let cfg = IntegratorConfig::default();
        let base = rollout(&s0, &u, &bike(), &cfg).unwrap();
        let rot = rollout(&rotate_state(&s0, phi), &u, &bike(), &cfg).unwrap();
        for (a, b) in base.iter().zip(&rot) {
            prop_assert!(max_diff(a, &rotate_state(b, -phi)) <= 1e-9);
        }
    }

    #[test]
    fn rollouts_are_translation_equivariant(s0 in state(), u in controls(30), dx in -50.0..50.0, dy in -50.0..50.0) {
        let cfg = IntegratorConfig::default();
        let base = rollout(&s0, &u, &bike(), &cfg).unwrap();
        let moved = VehicleState::new(s0.x + dx, s0.y + dy, s0.theta, s0.v);
        let shifted = rollout(&moved, &u, &bike(), &cfg).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            prop_assert!(max_diff(a, &VehicleState::new(b.x - dx, b.y - dy, b.theta, b.v)) <= 1e-9);
        }
    }

    #[test]
    fn shorter_wheelbases_reach_the_same_turns(
        s0 in state(),
        u in prop::collection::vec(bounded_control(), 1..20),
        n in 1.5..8.0f64,
    ) {
        // Every heading and speed profile driven with wheelbase L is driven
        // with L/N by a steering angle no larger in magnitude. Positions are
        // left out because the (v + L/2) rate ties them to L itself.
        let cfg = IntegratorConfig::euler(DEFAULT_TS);
        let long = BicycleParams::new(TRUE_WHEELBASE).unwrap();
        let short = BicycleParams::new(TRUE_WHEELBASE / n).unwrap();
        let traj = with_start(s0, rollout(&s0, &u, &long, &cfg).unwrap());
        let mut needed = Vec::with_capacity(u.len());
        for (w, c) in traj.windows(2).zip(&u) {
            let (p, q) = (w[0], w[1]);
            let delta = if p.v.abs() < 1e-9 {
                0.0
            } else {
                ((q.theta - p.theta) * (TRUE_WHEELBASE / n) / (p.v * DEFAULT_TS)).atan()
            };
            prop_assert!(delta.abs() <= c.delta.abs() + 1e-12);
            needed.push(ControlInput::new(delta, c.a));
        }
        let replay = with_start(s0, rollout(&s0, &needed, &short, &cfg).unwrap());
        for (a, b) in traj.iter().zip(&replay) {
            prop_assert!((a.theta - b.theta).abs() <= 1e-9);
            prop_assert!((a.v - b.v).abs() <= 1e-12);
        }
        let b = ControlBounds::default();
        prop_assert!(is_feasible(&replay, &short, &cfg, &b, 1e-6).unwrap().is_feasible());
    }

    #[test]
    fn bounded_controls_stay_inside_their_scales(raw in prop::collection::vec(prop::array::uniform2(-1e6..1e6f64), 1..50)) {
        let act = BoundedActivation::controls(DEFAULT_A_MAX, DEFAULT_DELTA_MAX).unwrap();
        for u in bound_controls(&raw, &act) {
            prop_assert!(u.a.abs() < DEFAULT_A_MAX);
            prop_assert!(u.delta.abs() < DEFAULT_DELTA_MAX);
        }
    }

    #[test]
    fn velocity_targets_do_not_change_the_loss(
        truth in prop::collection::vec(state(), 1..20),
        pred in prop::collection::vec(state(), 20),
        dv in prop::collection::vec(-5.0..5.0f64, 20),
    ) {
        let pred = &pred[..truth.len()];
        let w = LossWeights::default();
        let base = weighted_l1_loss(&truth, pred, &w).unwrap();
        let moved: Vec<VehicleState> = truth.iter().zip(&dv).map(|(s, d)| VehicleState::new(s.x, s.y, s.theta, s.v + d)).collect();
        prop_assert_eq!(base, weighted_l1_loss(&moved, pred, &w).unwrap());
    }

    #[test]
    fn ade_and_fde_agree_with_displacements(
        truth in prop::collection::vec(state(), 1..30),
        pred in prop::collection::vec(state(), 30),
    ) {
        let pred = &pred[..truth.len()];
        let d = displacements(pred, &truth).unwrap();
        let a = ade(pred, &truth).unwrap();
        prop_assert!(a <= d.iter().cloned().fold(0.0, f64::max) + 1e-12);
        prop_assert_eq!(fde(pred, &truth).unwrap(), *d.last().unwrap());
    }

    #[test]
    fn iou_is_symmetric_and_rigid_invariant(
        a in (-2.0..2.0, -2.0..2.0, -PI..PI, 0.2..3.0, 0.2..3.0),
        b in (-2.0..2.0, -2.0..2.0, -PI..PI, 0.2..3.0, 0.2..3.0),
        phi in -PI..PI,
        t in prop::array::uniform2(-10.0..10.0f64),
    ) {
        let bx = |p: (f64, f64, f64, f64, f64)| OrientedBox::new(p.0, p.1, p.2, p.3, p.4).unwrap();
        let (ba, bb) = (bx(a), bx(b));
        let iou = oriented_iou(&ba, &bb);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&iou));
        prop_assert!((iou - oriented_iou(&bb, &ba)).abs() <= 1e-9);
        let (s, c) = phi.sin_cos();
        let mv = |p: (f64, f64, f64, f64, f64)| bx((c * p.0 - s * p.1 + t[0], s * p.0 + c * p.1 + t[1], p.2 + phi, p.3, p.4));
        prop_assert!((iou - oriented_iou(&mv(a), &mv(b))).abs() <= 1e-9);
    }

    #[test]
    fn iou_falls_with_heading_error(wid in 0.1..1.5, aspect in 1.5..5.0, d1 in 0.0..FRAC_PI_2, d2 in 0.0..FRAC_PI_2) {
        // Vehicle-like boxes only: a near-square box regains overlap as the
        // rotation approaches a quarter turn.
        let len = wid * aspect;
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let base = OrientedBox::new(0.0, 0.0, 0.0, len, wid).unwrap();
        let at = |t: f64| oriented_iou(&base, &OrientedBox::new(0.0, 0.0, t, len, wid).unwrap());
        prop_assert!(at(hi) <= at(lo) + 1e-9);
    }

    #[test]
    fn smaller_delta_widens_base_quantiles_and_rank(
        seed in any::<u64>(),
        d1 in 0.02..0.5f64,
        d2 in 0.02..0.5f64,
    ) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Vec<Score>> {
            (0..n).map(|_| (0..3).map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a, 2.0 * b]
            }).collect()).collect()
        };
        let (train, val) = (draw(300), draw(400));
        let (small, big) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let cal = |d, mode| cqr_calibrate(&train, &val, d, mode, ScoreKind::RotatedRect).unwrap();
        let pairs = [
            (cal(small, CalibrationMode::SingleStep), cal(big, CalibrationMode::SingleStep)),
            (cal(small, CalibrationMode::MultiStep), cal(big, CalibrationMode::MultiStep)),
            (cal(small, CalibrationMode::MultiStep), cal(small, CalibrationMode::SingleStep)),
        ];
        for (wide, narrow) in &pairs {
            prop_assert!(wide.rank >= narrow.rank);
            for (w, n) in wide.steps.iter().zip(&narrow.steps) {
                for k in 0..2 {
                    prop_assert!(w.q_low[k] <= n.q_low[k] && w.q_high[k] >= n.q_high[k]);
                }
            }
        }
    }
}

/// Final bounds are not monotone in delta in general: widening the base
/// quantiles also lowers the nonconformity scores, and the two sides can
/// move by different amounts.
#[test]
fn cqr_bounds_can_tighten_as_delta_shrinks() {
    let wrap = |v: &[f64]| v.iter().map(|&x| vec![[x, x]]).collect::<Vec<Vec<Score>>>();
    let train = wrap(&[-4.0, -2.0, 0.0, 1.0, 2.0, 3.0]);
    let val = wrap(&[-1.0, 1.0, 2.0]);
    let at = |d| cqr_calibrate(&train, &val, d, CalibrationMode::SingleStep, ScoreKind::RotatedRect).unwrap().steps[0];
    let (small, big) = (at(0.7), at(0.9));
    assert_eq!((small.lower[0], small.upper[0]), (-1.0, 2.0));
    assert_eq!((big.lower[0], big.upper[0]), (-1.0, 3.0));
    assert!(small.q_low[0] <= big.q_low[0] && small.q_high[0] >= big.q_high[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frenet_round_trip(s in 0.0..1.0f64, d in -0.9..0.9f64) {
        let track = Track::build(&TrackSpec::default_circuit()).unwrap();
        let c = to_frenet(from_frenet(FrenetCoord { s, d }, &track), &track);
        let ds = (c.s - s).rem_euclid(1.0);
        prop_assert!(ds.min(1.0 - ds) <= 1e-9, "s {} -> {}", s, c.s);
        prop_assert!((c.d - d).abs() <= 1e-9);
    }

    #[test]
    fn pcmp_is_rotation_equivariant_and_feasible(w in history(), phi in -PI..PI, seed in 0u64..1000) {
        let cfg = ModelConfig::default();
        let m = Model::new(HeadKind::Pcmp, cfg.clone(), seed).unwrap();
        let p = m.predict(&w).unwrap();
        let rotated = window(w.states.iter().map(|s| rotate_state(s, phi)).collect());
        let q = m.predict(&rotated).unwrap();
        for (a, b) in p.states.iter().zip(&q.states) {
            prop_assert!(max_diff(a, &rotate_state(b, -phi)) <= 1e-9);
        }
        let traj = with_start(w.last(), p.states.clone());
        let rep = is_feasible(&traj, &cfg.bicycle().unwrap(), &cfg.integrator, &ControlBounds::default(), 1e-6).unwrap();
        prop_assert!(rep.is_feasible());
        let vmax = traj.iter().map(|s| s.v.abs()).fold(0.0, f64::max);
        for pair in traj.windows(2) {
            prop_assert!((pair[1].v - pair[0].v).abs() <= DEFAULT_A_MAX * DEFAULT_TS + 1e-12);
            prop_assert!((pair[1].theta - pair[0].theta).abs() <= DEFAULT_TS * vmax * DEFAULT_DELTA_MAX.tan() / TRUE_WHEELBASE + 1e-12);
        }
    }
}
