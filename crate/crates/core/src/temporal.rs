//! Stacked LSTM and the dense multi-horizon head.
//!
//! Gate layout per cell (`x` row vectors, `W` is `F×H`, `V` is `H×H`):
//!
//! ```text
//! f = σ(h·V_f + x·W_f + b_f)      i = σ(h·V_i + x·W_i + b_i)
//! C̃ = tanh(h·V_C + x·W_C + b_C)   o = σ(h·V_o + x·W_o + b_o)
//! C' = f∘C + i∘C̃                  h' = o∘tanh(C')
//! ```
//!
//! The tape versions operate on a batch of independent rows; the model uses
//! one row per (node, sample) pair with weights shared across nodes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bindings, ParameterSet, Tape, Tensor, Var};

pub const HORIZON: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

    fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Candidate => "c",
            Gate::Output => "o",
        }
    }
}

/// One cell's weights, indexed by [`Gate`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub input: [Tensor; 4],
    pub recurrent: [Tensor; 4],
    pub bias: [Tensor; 4],
}

impl LstmCellParams {
    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        LstmCellParams {
            input: std::array::from_fn(|_| Tensor::zeros(&[input_width, hidden])),
            recurrent: std::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            bias: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input[0].rows()
    }

    pub fn hidden(&self) -> usize {
        self.input[0].cols()
    }

    fn check(&self) -> Result<()> {
        let (f, h) = (self.input_width(), self.hidden());
        for g in 0..4 {
            if self.input[g].shape() != [f, h] {
                return Err(Error::shape("lstm W", self.input[g].shape(), &[f, h]));
            }
            if self.recurrent[g].shape() != [h, h] {
                return Err(Error::shape("lstm V", self.recurrent[g].shape(), &[h, h]));
            }
            if self.bias[g].shape() != [h] {
                return Err(Error::shape("lstm b", self.bias[g].shape(), &[h]));
            }
        }
        Ok(())
    }

    /// Parameter names used for layer `prefix` in a [`ParameterSet`].
    pub fn names(prefix: &str, gate: Gate) -> [String; 3] {
        let s = gate.suffix();
        [format!("{prefix}.w_{s}"), format!("{prefix}.v_{s}"), format!("{prefix}.b_{s}")]
    }

    /// Adds this cell's tensors under `prefix`.
    pub fn register(&self, params: &mut ParameterSet, prefix: &str) {
        for (k, gate) in Gate::ALL.into_iter().enumerate() {
            let [w, v, b] = Self::names(prefix, gate);
            params.insert(w, self.input[k].clone());
            params.insert(v, self.recurrent[k].clone());
            params.insert(b, self.bias[k].clone());
        }
    }

    /// Registers a freshly initialized cell (fan-in uniform init).
    pub fn register_random<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        rng: &mut R,
    ) {
        let fan_in = input_width + hidden;
        for gate in Gate::ALL {
            let [w, v, b] = Self::names(prefix, gate);
            params.insert_fan_in(w, &[input_width, hidden], fan_in, rng);
            params.insert_fan_in(v, &[hidden, hidden], fan_in, rng);
            params.insert_fan_in(b, &[hidden], fan_in, rng);
        }
    }

    pub fn from_params(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let fetch = |name: &str| {
            params
                .value(name)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
        };
        let mut input = Vec::new();
        let mut recurrent = Vec::new();
        let mut bias = Vec::new();
        for gate in Gate::ALL {
            let [w, v, b] = Self::names(prefix, gate);
            input.push(fetch(&w)?);
            recurrent.push(fetch(&v)?);
            bias.push(fetch(&b)?);
        }
        let cell = LstmCellParams {
            input: input.try_into().unwrap(),
            recurrent: recurrent.try_into().unwrap(),
            bias: bias.try_into().unwrap(),
        };
        cell.check()?;
        Ok(cell)
    }
}

/// Tape handles for one cell.
#[derive(Clone, Copy, Debug)]
pub struct LstmCellVars {
    pub input: [Var; 4],
    pub recurrent: [Var; 4],
    pub bias: [Var; 4],
}

impl LstmCellVars {
    pub fn bind(bindings: &Bindings, prefix: &str) -> Self {
        let names = Gate::ALL.map(|g| LstmCellParams::names(prefix, g));
        LstmCellVars {
            input: std::array::from_fn(|k| bindings.get(&names[k][0])),
            recurrent: std::array::from_fn(|k| bindings.get(&names[k][1])),
            bias: std::array::from_fn(|k| bindings.get(&names[k][2])),
        }
    }

    fn record(cell: &LstmCellParams, tape: &mut Tape) -> Self {
        LstmCellVars {
            input: std::array::from_fn(|k| tape.var(cell.input[k].clone())),
            recurrent: std::array::from_fn(|k| tape.var(cell.recurrent[k].clone())),
            bias: std::array::from_fn(|k| tape.var(cell.bias[k].clone())),
        }
    }
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One step on the tape for a batch: `x` is `[B, F]`, `h` and `c` are `[B, H]`.
pub fn lstm_cell_step_on_tape(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    cell: &LstmCellVars,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
        let from_input = tape.matmul(x, cell.input[k])?;
        let from_hidden = tape.matmul(h, cell.recurrent[k])?;
        let pre = tape.add(from_input, from_hidden)?;
        tape.add_bias(pre, cell.bias[k])
    };
    let f_pre = gate(tape, 0)?;
    let i_pre = gate(tape, 1)?;
    let c_pre = gate(tape, 2)?;
    let o_pre = gate(tape, 3)?;
    let f = tape.sigmoid(f_pre);
    let i = tape.sigmoid(i_pre);
    let candidate = tape.tanh(c_pre);
    let o = tape.sigmoid(o_pre);
    let kept = tape.mul(f, c)?;
    let written = tape.mul(i, candidate)?;
    let c_next = tape.add(kept, written)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Runs the stacked LSTM over `steps` (each `[B, F]`) from zero states and
/// returns the top layer's final hidden state `[B, H]`.
pub fn lstm_sequence_on_tape(tape: &mut Tape, steps: &[Var], layers: &[LstmCellVars]) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::Contract("lstm sequence must have at least one step".into()));
    }
    if layers.is_empty() {
        return Err(Error::Contract("lstm needs at least one layer".into()));
    }
    let batch = tape.shape(steps[0])[0];
    let mut inputs = steps.to_vec();
    for layer in layers {
        let hidden = tape.shape(layer.recurrent[0])[0];
        let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
        let mut c = tape.constant(Tensor::zeros(&[batch, hidden]));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            (h, c) = lstm_cell_step_on_tape(tape, x, h, c, layer)?;
            outputs.push(h);
        }
        inputs = outputs;
    }
    Ok(*inputs.last().expect("non-empty"))
}

/// Single-sequence LSTM step.
pub fn lstm_cell_step(x: &[f64], state: &LstmState, params: &LstmCellParams) -> Result<LstmState> {
    params.check()?;
    let hidden = params.hidden();
    if x.len() != params.input_width() || state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::shape(
            "lstm_cell_step",
            &[x.len(), state.h.len(), state.c.len()],
            &[params.input_width(), hidden, hidden],
        ));
    }
    let mut tape = Tape::new();
    let cell = LstmCellVars::record(params, &mut tape);
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let hv = tape.constant(Tensor::matrix(1, hidden, state.h.clone())?);
    let cv = tape.constant(Tensor::matrix(1, hidden, state.c.clone())?);
    let (h, c) = lstm_cell_step_on_tape(&mut tape, xv, hv, cv, &cell)?;
    Ok(LstmState {
        h: tape.value(h).data().to_vec(),
        c: tape.value(c).data().to_vec(),
    })
}

/// Final top-layer hidden vector for a `T×F` sequence.
pub fn lstm_sequence(xs: &Tensor, layers: &[LstmCellParams]) -> Result<Vec<f64>> {
    if xs.shape().len() != 2 {
        return Err(Error::shape("lstm_sequence", xs.shape(), &[0, 0]));
    }
    let mut width = xs.cols();
    for (l, layer) in layers.iter().enumerate() {
        layer.check()?;
        if layer.input_width() != width {
            return Err(Error::Contract(format!(
                "layer {l} expects input width {}, got {width}",
                layer.input_width()
            )));
        }
        width = layer.hidden();
    }
    let mut tape = Tape::new();
    let cells: Vec<LstmCellVars> = layers.iter().map(|l| LstmCellVars::record(l, &mut tape)).collect();
    let steps: Vec<Var> = (0..xs.rows())
        .map(|t| tape.constant(Tensor::matrix(1, xs.cols(), xs.row(t).to_vec()).unwrap()))
        .collect();
    let h = lstm_sequence_on_tape(&mut tape, &steps, &cells)?;
    Ok(tape.value(h).data().to_vec())
}

/// Linear map from a hidden vector to the prediction horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    /// `H × horizon`.
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_forward(h: &[f64], head: &DenseHead) -> Result<Vec<f64>> {
    let hm = Tensor::matrix(1, h.len(), h.to_vec())?;
    if head.bias.shape() != [head.weight.cols()] {
        return Err(Error::shape("dense_forward", head.weight.shape(), head.bias.shape()));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(hm);
    let w = tape.constant(head.weight.clone());
    let b = tape.constant(head.bias.clone());
    let y = dense_forward_on_tape(&mut tape, hv, w, b)?;
    Ok(tape.value(y).data().to_vec())
}

/// `h·W + b` for `h` shaped `[B, H]`.
pub fn dense_forward_on_tape(tape: &mut Tape, h: Var, weight: Var, bias: Var) -> Result<Var> {
    let hw = tape.matmul(h, weight)?;
    tape.add_bias(hw, bias)
}
