use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, Tape, Tensor, Var};
use crate::dynamics::ControlInput;

/// Single-layer LSTM cell. Gate columns are ordered input, forget, cell,
/// output, each `hidden` wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    /// `input × 4H`
    pub w_input: Tensor,
    /// `H × 4H`
    pub w_hidden: Tensor,
    /// `1 × 4H`
    pub bias: Tensor,
}

impl LstmCellParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        Self {
            w_input: Tensor::uniform(input, 4 * hidden, bound, rng),
            w_hidden: Tensor::uniform(hidden, 4 * hidden, bound, rng),
            bias: Tensor::uniform(1, 4 * hidden, bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Tensor::zeros(input, 4 * hidden),
            w_hidden: Tensor::zeros(hidden, 4 * hidden),
            bias: Tensor::zeros(1, 4 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_input.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            w_input: tape.leaf(self.w_input.clone()),
            w_hidden: tape.leaf(self.w_hidden.clone()),
            bias: tape.leaf(self.bias.clone()),
            input: self.input_size(),
            hidden: self.hidden_size(),
        }
    }
}

/// LSTM parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    pub final_hidden: Var,
    pub hidden_states: Vec<Var>,
}

/// Runs the recurrence over `inputs` (one `B × input` node per time step)
/// from zero hidden and cell state.
pub fn lstm_forward(tape: &mut Tape, cell: &LstmVars, inputs: &[Var]) -> Result<LstmOutput, NetError> {
    if inputs.is_empty() {
        return Err(NetError::EmptySequence);
    }
    let h = cell.hidden;
    let mut hidden: Option<Var> = None;
    let mut state: Option<Var> = None;
    let mut hidden_states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (_, cols) = tape.shape(x);
        if cols != cell.input {
            return Err(NetError::ShapeMismatch {
                context: "lstm input width",
                expected: cell.input,
                got: cols,
            });
        }
        let mut z = tape.matmul(x, cell.w_input);
        if let Some(hp) = hidden {
            let zh = tape.matmul(hp, cell.w_hidden);
            z = tape.add(z, zh);
        }
        let z = tape.add_row(z, cell.bias);
        let zi = tape.select(z, 0, h);
        let zf = tape.select(z, h, h);
        let zg = tape.select(z, 2 * h, h);
        let zo = tape.select(z, 3 * h, h);
        let i = tape.sigmoid(zi);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let ig = tape.mul(i, g);
        let c = match state {
            Some(cp) => {
                let f = tape.sigmoid(zf);
                let fc = tape.mul(f, cp);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let hn = tape.mul(o, tc);
        hidden = Some(hn);
        state = Some(c);
        hidden_states.push(hn);
    }
    Ok(LstmOutput {
        final_hidden: hidden.expect("nonempty sequence"),
        hidden_states,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

/// Affine layers with `tanh` between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseParams>,
}

impl MlpParams {
    /// `widths = [in, hidden..., out]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                DenseParams {
                    weight: Tensor::uniform(w[0], w[1], bound, rng),
                    bias: Tensor::uniform(1, w[1], bound, rng),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| DenseParams {
                weight: Tensor::zeros(w[0], w[1]),
                bias: Tensor::zeros(1, w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
            input: self.input_size(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    input: usize,
}

pub fn mlp_forward(tape: &mut Tape, mlp: &MlpVars, x: Var) -> Result<Var, NetError> {
    let (_, cols) = tape.shape(x);
    if cols != mlp.input {
        return Err(NetError::ShapeMismatch {
            context: "mlp input width",
            expected: mlp.input,
            got: cols,
        });
    }
    let mut y = x;
    for (k, &(w, b)) in mlp.layers.iter().enumerate() {
        if k > 0 {
            y = tape.tanh(y);
        }
        let z = tape.matmul(y, w);
        y = tape.add_row(z, b);
    }
    Ok(y)
}

/// Raw channel order of the decoder output for each horizon step.
pub const ACCEL_CHANNEL: usize = 0;
pub const STEER_CHANNEL: usize = 1;

/// `φ_ω(a) = ω ∘ tanh(a)`, one scale per raw channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedActivation {
    omega: Vec<f64>,
}

impl BoundedActivation {
    pub fn new(omega: Vec<f64>) -> Result<Self, NetError> {
        if omega.is_empty() || omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(NetError::InvalidScale(omega));
        }
        Ok(Self { omega })
    }

    /// Scales for `(acceleration, steering)` decoding.
    pub fn controls(a_max: f64, delta_max: f64) -> Result<Self, NetError> {
        Self::new(vec![a_max, delta_max])
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Output magnitudes stay strictly below `ω` even where `tanh` rounds
    /// to ±1.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, r)| {
                let w = self.omega[k % self.omega.len()];
                let u = w * r.tanh();
                if u.abs() >= w {
                    w.next_down().copysign(u)
                } else {
                    u
                }
            })
            .collect()
    }

    /// Tape version over a `B × (channels·steps)` node.
    pub fn apply_on_tape(&self, tape: &mut Tape, raw: Var) -> Var {
        let (_, cols) = tape.shape(raw);
        let row: Vec<f64> = (0..cols).map(|k| self.omega[k % self.omega.len()]).collect();
        let t = tape.tanh(raw);
        let w = tape.leaf(Tensor::row(&row));
        tape.mul_row(t, w)
    }
}

/// Decodes raw `(accel, steer)` pairs into bounded controls.
pub fn bound_controls(raw: &[[f64; 2]], act: &BoundedActivation) -> Vec<ControlInput> {
    raw.iter()
        .map(|r| {
            let u = act.apply(r);
            ControlInput::new(u[STEER_CHANNEL], u[ACCEL_CHANNEL])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DEFAULT_A_MAX, DEFAULT_DELTA_MAX};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn act() -> BoundedActivation {
        BoundedActivation::controls(DEFAULT_A_MAX, DEFAULT_DELTA_MAX).unwrap()
    }

    #[test]
    fn zero_lstm_gives_zero_hidden() {
        let params = LstmCellParams::zeros(5, 16);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let inputs: Vec<Var> = (0..10).map(|_| tape.leaf(Tensor::zeros(3, 5))).collect();
        let out = lstm_forward(&mut tape, &vars, &inputs).unwrap();
        assert_eq!(out.hidden_states.len(), 10);
        for h in &out.hidden_states {
            assert!(tape.value(*h).data().iter().all(|v| *v == 0.0));
        }
        assert_eq!(tape.shape(out.final_hidden), (3, 16));
    }

    #[test]
    fn lstm_rejects_wrong_width() {
        let params = LstmCellParams::zeros(5, 16);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(1, 4));
        assert!(matches!(lstm_forward(&mut tape, &vars, &[x]), Err(NetError::ShapeMismatch { .. })));
        assert!(matches!(lstm_forward(&mut tape, &vars, &[]), Err(NetError::EmptySequence)));
    }

    #[test]
    fn identity_mlp_is_identity() {
        let mlp = MlpParams {
            layers: vec![DenseParams {
                weight: Tensor::identity(3),
                bias: Tensor::zeros(1, 3),
            }],
        };
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.leaf(Tensor::row(&[0.5, -1.5, 2.0]));
        let y = mlp_forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = MlpParams::init(&[16, 64, 8], &mut rng);
        for l in &mut mlp.layers {
            l.bias = Tensor::zeros(1, l.bias.cols());
        }
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(2, 16));
        let y = mlp_forward(&mut tape, &vars, x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bound_controls_examples() {
        let u = bound_controls(&[[0.0, 0.0]], &act());
        assert_eq!(u[0], ControlInput::new(0.0, 0.0));
        let u = bound_controls(&[[1.0, -1.0]], &act());
        // 20·tanh(1) and −(7π/16)·tanh(1).
        assert!((u[0].a - 15.231883119115295).abs() < 1e-9);
        assert!((u[0].delta + 1.0467705).abs() < 1e-6);
        assert!((u[0].delta + 1.04675).abs() < 1e-4);
        let u = bound_controls(&[[1e3, -1e3]], &act());
        assert!(u[0].a < DEFAULT_A_MAX && u[0].delta > -DEFAULT_DELTA_MAX);
        assert!((u[0].a - DEFAULT_A_MAX).abs() < 1e-9);
    }

    #[test]
    fn invalid_scale_rejected() {
        assert!(BoundedActivation::new(vec![1.0, 0.0]).is_err());
        assert!(BoundedActivation::new(vec![]).is_err());
    }
}
