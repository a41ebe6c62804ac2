//! SVG figures written by `eval` and `sweep-wheelbase`.

use pcmp_core::dynamics::VehicleState;
use pcmp_core::experiment::SweepSummary;
use pcmp_core::simkit::{Sample, Track};
use pcmp_core::trainer::EpochRecord;

use crate::svg::{Bounds, Svg};

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

fn xy(states: &[VehicleState]) -> Vec<[f64; 2]> {
    states.iter().map(|s| [s.x, s.y]).collect()
}

/// Left and right boundaries of the drivable band.
fn track_edges(track: &Track) -> [Vec<[f64; 2]>; 2] {
    let mut left = Vec::with_capacity(track.len() + 1);
    let mut right = Vec::with_capacity(track.len() + 1);
    for (i, p) in track.points().iter().enumerate() {
        let n = track.vertex_normals()[i];
        left.push([p[0] + n[0] * track.w_left()[i], p[1] + n[1] * track.w_left()[i]]);
        right.push([p[0] - n[0] * track.w_right()[i], p[1] - n[1] * track.w_right()[i]]);
    }
    if track.is_closed() {
        left.push(left[0]);
        right.push(right[0]);
    }
    [left, right]
}

fn draw_track(svg: &mut Svg, track: &Track) {
    for e in track_edges(track) {
        svg.polyline(&e, "#888888", 1.0);
    }
}

/// Observed history, ground truth and every model's prediction for a few
/// samples, drawn over the whole track.
pub fn trajectories(track: &Track, samples: &[Sample], preds: &[(String, Vec<Vec<VehicleState>>)]) -> String {
    let [l, r] = track_edges(track);
    let mut svg = Svg::new(Bounds::around(l.iter().chain(&r)), 900.0, 700.0, true);
    draw_track(&mut svg, track);
    for (i, s) in samples.iter().enumerate() {
        svg.polyline(&xy(&s.obs), "black", 2.0);
        svg.polyline(&xy(&s.future), "#2ca02c", 2.0);
        for (k, (_, p)) in preds.iter().enumerate() {
            svg.polyline(&xy(&p[i]), PALETTE[k % PALETTE.len()], 1.5);
        }
    }
    svg.label(50.0, 20.0, "black: observed, green: ground truth", 12.0);
    for (k, (name, _)) in preds.iter().enumerate() {
        svg.label(320.0 + 110.0 * k as f64, 20.0, &format!("{name} ({})", PALETTE[k % PALETTE.len()]), 12.0);
    }
    svg.finish()
}

/// Prediction regions (one polygon per step) around a single sample.
pub fn regions(sample: &Sample, pred: &[VehicleState], layers: &[(String, Vec<Vec<[f64; 2]>>)]) -> String {
    let mut pts: Vec<[f64; 2]> = xy(&sample.obs);
    pts.extend(xy(&sample.future));
    pts.extend(xy(pred));
    for (_, polys) in layers {
        pts.extend(polys.iter().flatten().copied());
    }
    let mut svg = Svg::new(Bounds::around(&pts), 800.0, 600.0, true);
    for (k, (name, polys)) in layers.iter().enumerate() {
        let c = PALETTE[(k + 1) % PALETTE.len()];
        for poly in polys.iter().step_by(5) {
            svg.polygon(poly, c, 0.08);
        }
        svg.label(50.0 + 200.0 * k as f64, 20.0, &format!("{name} region ({c})"), 12.0);
    }
    svg.polyline(&xy(&sample.obs), "black", 2.0);
    svg.polyline(&xy(&sample.future), "#2ca02c", 2.0);
    svg.polyline(&xy(pred), PALETTE[0], 2.0);
    svg.finish()
}

/// Training loss and, where logged, validation ADE against epoch.
pub fn loss_curve(log: &[EpochRecord]) -> String {
    let loss: Vec<[f64; 2]> = log.iter().map(|r| [r.epoch as f64, r.train_loss]).collect();
    let ade: Vec<[f64; 2]> = log.iter().filter_map(|r| r.val_ade.map(|a| [r.epoch as f64, a])).collect();
    let mut svg = Svg::new(Bounds::around(loss.iter().chain(&ade)), 800.0, 500.0, false);
    svg.axes("epoch", "loss / ADE [m]");
    svg.polyline(&loss, PALETTE[1], 1.5);
    if !ade.is_empty() {
        svg.polyline(&ade, PALETTE[0], 1.5);
    }
    svg.label(500.0, 60.0, "blue: train loss, red: validation ADE", 12.0);
    svg.finish()
}

/// ADE and IoU against wheelbase, the true wheelbase marked.
pub fn sweep(s: &SweepSummary) -> String {
    let ade: Vec<[f64; 2]> = s.rows.iter().map(|r| [r.wheelbase, r.ade]).collect();
    let iou: Vec<[f64; 2]> = s.rows.iter().map(|r| [r.wheelbase, r.iou]).collect();
    let mut svg = Svg::new(Bounds::around(ade.iter().chain(&iou)), 800.0, 500.0, false);
    svg.axes("wheelbase [m]", "ADE [m] / IoU");
    svg.polyline(&ade, PALETTE[0], 1.5);
    svg.polyline(&iou, PALETTE[1], 1.5);
    for r in s.rows.iter().filter(|r| r.is_true) {
        svg.circle([r.wheelbase, r.ade], 4.0, "black");
        svg.circle([r.wheelbase, r.iou], 4.0, "black");
    }
    svg.label(
        300.0,
        60.0,
        &format!("red: ADE (R={:.2}), blue: IoU (R={:.2}), dots: true wheelbase", s.r_ade, s.r_iou),
        12.0,
    );
    svg.finish()
}
