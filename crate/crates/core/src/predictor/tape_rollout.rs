//! Batched bicycle rollout recorded on an autodiff tape.

use crate::dynamics::IntegrationMethod;
use crate::net::{NetError, Tape, Var};

/// Batched state: each channel is a `B × 1` node.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub x: Var,
    pub y: Var,
    pub theta: Var,
    pub v: Var,
}

impl TapeState {
    pub fn channels(&self) -> [Var; 4] {
        [self.x, self.y, self.theta, self.v]
    }
}

type Deriv = [Var; 4];

fn bicycle(tape: &mut Tape, s: &TapeState, tan_delta: Var, a: Var, wheelbase: f64) -> Deriv {
    let speed = tape.offset(s.v, wheelbase / 2.0);
    let c = tape.cos(s.theta);
    let sn = tape.sin(s.theta);
    let dx = tape.mul(speed, c);
    let dy = tape.mul(speed, sn);
    let vt = tape.mul(s.v, tan_delta);
    let dth = tape.scale(vt, 1.0 / wheelbase);
    [dx, dy, dth, a]
}

fn advance(tape: &mut Tape, s: &TapeState, k: &Deriv, h: f64) -> TapeState {
    let mut out = s.channels();
    for (o, d) in out.iter_mut().zip(k) {
        let inc = tape.scale(*d, h);
        *o = tape.add(*o, inc);
    }
    TapeState {
        x: out[0],
        y: out[1],
        theta: out[2],
        v: out[3],
    }
}

/// One zero-order-hold step with controls `(delta, a)`, each `B × 1`.
pub fn step_on_tape(
    tape: &mut Tape,
    s: &TapeState,
    delta: Var,
    a: Var,
    wheelbase: f64,
    method: IntegrationMethod,
    ts: f64,
) -> Result<TapeState, NetError> {
    let tan_delta = tape.tan(delta)?;
    Ok(match method {
        IntegrationMethod::Euler => {
            let k = bicycle(tape, s, tan_delta, a, wheelbase);
            advance(tape, s, &k, ts)
        }
        IntegrationMethod::Rk4 => {
            let k1 = bicycle(tape, s, tan_delta, a, wheelbase);
            let s2 = advance(tape, s, &k1, ts / 2.0);
            let k2 = bicycle(tape, &s2, tan_delta, a, wheelbase);
            let s3 = advance(tape, s, &k2, ts / 2.0);
            let k3 = bicycle(tape, &s3, tan_delta, a, wheelbase);
            let s4 = advance(tape, s, &k3, ts);
            let k4 = bicycle(tape, &s4, tan_delta, a, wheelbase);
            let mut avg = [k1[0]; 4];
            for c in 0..4 {
                let m2 = tape.scale(k2[c], 2.0);
                let m3 = tape.scale(k3[c], 2.0);
                let t = tape.add(k1[c], m2);
                let t = tape.add(t, m3);
                let t = tape.add(t, k4[c]);
                avg[c] = tape.scale(t, 1.0 / 6.0);
            }
            advance(tape, s, &avg, ts)
        }
    })
}

/// Rolls out `deltas.len()` steps; the returned states exclude `s0`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    s0: TapeState,
    deltas: &[Var],
    accels: &[Var],
    wheelbase: f64,
    method: IntegrationMethod,
    ts: f64,
) -> Result<Vec<TapeState>, NetError> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut s = s0;
    for (d, a) in deltas.iter().zip(accels) {
        s = step_on_tape(tape, &s, *d, *a, wheelbase, method, ts)?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, BicycleParams, ControlInput, IntegratorConfig, VehicleState};
    use crate::net::Tensor;

    #[test]
    fn matches_the_scalar_rollout() {
        let s0 = VehicleState::new(0.3, -0.2, 0.4, 2.0);
        let ctrl: Vec<ControlInput> = (0..8).map(|k| ControlInput::new(0.05 * k as f64 - 0.2, 1.5 - 0.4 * k as f64)).collect();
        for cfg in [IntegratorConfig::euler(0.01), IntegratorConfig::rk4(0.01)] {
            let want = rollout(&s0, &ctrl, &BicycleParams::default(), &cfg).unwrap();
            let mut t = Tape::new();
            let st = TapeState {
                x: t.leaf(Tensor::scalar(s0.x)),
                y: t.leaf(Tensor::scalar(s0.y)),
                theta: t.leaf(Tensor::scalar(s0.theta)),
                v: t.leaf(Tensor::scalar(s0.v)),
            };
            let d: Vec<Var> = ctrl.iter().map(|u| t.leaf(Tensor::scalar(u.delta))).collect();
            let a: Vec<Var> = ctrl.iter().map(|u| t.leaf(Tensor::scalar(u.a))).collect();
            let got = rollout_on_tape(&mut t, st, &d, &a, 0.3302, cfg.method, cfg.ts).unwrap();
            for (g, w) in got.iter().zip(&want) {
                for (c, e) in g.channels().iter().zip(w.to_array()) {
                    assert!((t.value(*c).item() - e).abs() < 1e-13);
                }
            }
        }
    }
}
