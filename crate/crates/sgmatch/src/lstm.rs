//! Single-layer LSTM cell and bidirectional runner on the tape.

use rand_chacha::ChaCha8Rng;
use tapegrad::{Tape, TensorId};

use crate::error::Result;
use crate::params::{linear_init, Bound, ParameterSet};
use tapegrad::Tensor;

/// Tape handles for one direction's gate parameters. Weights are stored
/// input-major (`[in, 4h]` / `[h, 4h]`) so a step is two matmuls plus bias;
/// gate order along the 4h axis is input, forget, cell, output.
pub struct LstmGates {
    pub w_input: TensorId,
    pub w_hidden: TensorId,
    pub bias: TensorId,
    pub hidden: usize,
}

impl LstmGates {
    pub fn bind(bound: &Bound, prefix: &str, hidden: usize) -> Self {
        LstmGates {
            w_input: bound.get(&format!("{prefix}.w_input")),
            w_hidden: bound.get(&format!("{prefix}.w_hidden")),
            bias: bound.get(&format!("{prefix}.bias")),
            hidden,
        }
    }
}

/// Register one direction's parameters under `prefix`.
pub fn register_lstm(
    ps: &mut ParameterSet,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    ps.insert(
        format!("{prefix}.w_input"),
        linear_init(rng, input_dim, 4 * hidden),
        true,
    )?;
    ps.insert(
        format!("{prefix}.w_hidden"),
        linear_init(rng, hidden, 4 * hidden),
        true,
    )?;
    ps.insert(format!("{prefix}.bias"), Tensor::zeros(vec![4 * hidden]), true)?;
    Ok(())
}

/// One LSTM step: `i,f,o = σ(affine)`, `g = tanh(affine)`,
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
    gates: &LstmGates,
) -> Result<(TensorId, TensorId)> {
    let hid = gates.hidden;
    let zi = tape.matmul(x, gates.w_input)?;
    let zh = tape.matmul(h_prev, gates.w_hidden)?;
    let z = tape.add(zi, zh)?;
    let z = tape.add_bias(z, gates.bias)?;

    let i_pre = tape.slice_cols(z, 0, hid)?;
    let f_pre = tape.slice_cols(z, hid, 2 * hid)?;
    let g_pre = tape.slice_cols(z, 2 * hid, 3 * hid)?;
    let o_pre = tape.slice_cols(z, 3 * hid, 4 * hid)?;

    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;

    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let ct = tape.tanh(c)?;
    let h = tape.mul(o, ct)?;
    Ok((h, c))
}

/// Per-position hidden states of both directions over a sequence.
pub struct BiLstmOutput {
    /// `(forward[i] + backward[i]) / 2` at each position.
    pub averaged: Vec<TensorId>,
    /// Forward state at position i (after consuming token i).
    pub forward: Vec<TensorId>,
    /// Backward state at position i (the backward pass consumes the
    /// sequence from the end).
    pub backward: Vec<TensorId>,
}

/// Run both directions from zero initial states over the rows of
/// `embeddings` (`L × input_dim`).
pub fn bidirectional(
    tape: &mut Tape,
    embeddings: TensorId,
    fwd: &LstmGates,
    bwd: &LstmGates,
) -> Result<BiLstmOutput> {
    let len = tape.shape(embeddings)[0];
    let hid = fwd.hidden;

    let run = |tape: &mut Tape, gates: &LstmGates, order: Vec<usize>| -> Result<Vec<TensorId>> {
        let mut h = tape.zeros(1, hid);
        let mut c = tape.zeros(1, hid);
        let mut states = vec![h; len];
        for t in order {
            let x = tape.slice_rows(embeddings, t, t + 1)?;
            let (nh, nc) = lstm_cell(tape, x, h, c, gates)?;
            h = nh;
            c = nc;
            states[t] = h;
        }
        Ok(states)
    };

    let forward = run(tape, fwd, (0..len).collect())?;
    let backward = run(tape, bwd, (0..len).rev().collect())?;
    let mut averaged = Vec::with_capacity(len);
    for t in 0..len {
        let sum = tape.add(forward[t], backward[t])?;
        averaged.push(tape.mul_scalar(sum, 0.5)?);
    }
    Ok(BiLstmOutput { averaged, forward, backward })
}
