//! Reverse-mode autodiff and the recurrent intent network built on it.

mod layers;
mod tape;
mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{
    bound_controls, lstm_forward, mlp_forward, BoundedActivation, DenseParams, LstmCellParams, LstmOutput,
    LstmVars, MlpParams, MlpVars, ACCEL_CHANNEL, STEER_CHANNEL,
};
pub use tape::{Gradients, Tape, Var, TAN_COS_GUARD};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("{context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("tan argument {value} at node {node} is too close to the singularity")]
    TanGuard { node: usize, value: f64 },
    #[error("non-finite gradient produced by node {node} ({op})")]
    NonFiniteGradient { node: usize, op: &'static str },
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("activation scales must be positive and finite: {0:?}")]
    InvalidScale(Vec<f64>),
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: [usize; 2],
        got: [usize; 2],
    },
}

/// A parameter array as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// LSTM encoder followed by an MLP decoder reading the final hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentNetwork {
    pub encoder: LstmCellParams,
    pub decoder: MlpParams,
}

/// An [`IntentNetwork`] placed on a tape.
#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub encoder: LstmVars,
    pub decoder: MlpVars,
}

impl NetworkVars {
    /// Parameter nodes, in the same order as [`IntentNetwork::params_mut`].
    pub fn params(&self) -> Vec<Var> {
        let mut v = vec![self.encoder.w_input, self.encoder.w_hidden, self.encoder.bias];
        for &(w, b) in &self.decoder.layers {
            v.push(w);
            v.push(b);
        }
        v
    }
}

impl IntentNetwork {
    /// `decoder_widths` lists the hidden widths between the LSTM state and
    /// the `output` layer.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        decoder_widths: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = LstmCellParams::init(input, hidden, rng);
        let widths = Self::widths(hidden, decoder_widths, output);
        Self {
            encoder,
            decoder: MlpParams::init(&widths, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, decoder_widths: &[usize], output: usize) -> Self {
        Self {
            encoder: LstmCellParams::zeros(input, hidden),
            decoder: MlpParams::zeros(&Self::widths(hidden, decoder_widths, output)),
        }
    }

    fn widths(hidden: usize, decoder_widths: &[usize], output: usize) -> Vec<usize> {
        let mut widths = vec![hidden];
        widths.extend_from_slice(decoder_widths);
        widths.push(output);
        widths
    }

    pub fn input_size(&self) -> usize {
        self.encoder.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.decoder.output_size()
    }

    pub fn bind(&self, tape: &mut Tape) -> NetworkVars {
        NetworkVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    /// Encodes one `B × input` node per time step and decodes the final
    /// hidden state to `B × output`.
    pub fn forward(&self, tape: &mut Tape, vars: &NetworkVars, inputs: &[Var]) -> Result<Var, NetError> {
        let enc = lstm_forward(tape, &vars.encoder, inputs)?;
        mlp_forward(tape, &vars.decoder, enc.final_hidden)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "encoder.w_input".to_string(),
            "encoder.w_hidden".to_string(),
            "encoder.bias".to_string(),
        ];
        for k in 0..self.decoder.layers.len() {
            names.push(format!("decoder.{k}.weight"));
            names.push(format!("decoder.{k}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.encoder.w_input, &self.encoder.w_hidden, &self.encoder.bias];
        for l in &self.decoder.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.encoder.w_input,
            &mut self.encoder.w_hidden,
            &mut self.encoder.bias,
        ];
        for l in &mut self.decoder.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, t)| NamedTensor {
                name,
                shape: [t.rows(), t.cols()],
                data: t.data().to_vec(),
            })
            .collect()
    }

    /// Fills a network of this architecture from checkpoint arrays.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), NetError> {
        let names = self.param_names();
        for (name, slot) in names.into_iter().zip(self.params_mut()) {
            let src = named
                .iter()
                .find(|n| n.name == name)
                .ok_or_else(|| NetError::MissingParam(name.clone()))?;
            let expected = [slot.rows(), slot.cols()];
            if src.shape != expected || src.data.len() != expected[0] * expected[1] {
                return Err(NetError::ParamShape {
                    name,
                    expected,
                    got: src.shape,
                });
            }
            *slot = Tensor::from_vec(expected[0], expected[1], src.data.clone());
        }
        Ok(())
    }
}
