//! Multi-scale node-attention readout: one shared (Siamese) parameter pair
//! embeds any feature graph into a single vector.

use rand_chacha::ChaCha8Rng;
use tapegrad::{Tape, TensorId};

use crate::error::{Error, Result};
use crate::params::{linear_init, Bound, ParameterSet};

pub const W_NODE: &str = "readout.w_node";
pub const W_EDGE: &str = "readout.w_edge";

/// Exactly one instance of each attention matrix serves both modalities.
pub fn register_readout(ps: &mut ParameterSet, graph_dim: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    ps.insert(W_NODE, linear_init(rng, graph_dim, graph_dim), true)?;
    ps.insert(W_EDGE, linear_init(rng, graph_dim, graph_dim), true)?;
    Ok(())
}

pub struct ReadoutRefs {
    pub w_node: TensorId,
    pub w_edge: TensorId,
}

impl ReadoutRefs {
    pub fn bind(bound: &Bound) -> Self {
        ReadoutRefs { w_node: bound.get(W_NODE), w_edge: bound.get(W_EDGE) }
    }
}

/// Attention-pool one feature set: each row is weighted by
/// `σ(rowᵀ · relu(W · mean))` and the weighted rows are summed.
fn attention_pool(tape: &mut Tape, feats: TensorId, w: TensorId) -> Result<TensorId> {
    let mean = tape.mean_axis(feats, 0)?;
    let key = tape.matmul(mean, w)?;
    let key = tape.relu(key)?;
    let key_col = tape.transpose(key)?;
    let logits = tape.matmul(feats, key_col)?;
    let weights = tape.sigmoid(logits)?;
    let weights_row = tape.transpose(weights)?;
    tape.matmul(weights_row, feats).map_err(Into::into)
}

/// Embed a feature graph as `[node pool, edge pool]` of length `2d`.
/// A graph with no edges contributes a zero edge pool; a graph with no
/// nodes is a caller error.
pub fn embed_graph(
    tape: &mut Tape,
    nodes: TensorId,
    edges: Option<TensorId>,
    refs: &ReadoutRefs,
) -> Result<TensorId> {
    let n = tape.shape(nodes)[0];
    if n == 0 {
        return Err(Error::Contract(
            "embed_graph requires at least one node; empty graphs are the caller's case".into(),
        ));
    }
    let d = tape.shape(nodes)[1];
    let node_pool = attention_pool(tape, nodes, refs.w_node)?;
    let edge_pool = match edges {
        Some(e) if tape.shape(e)[0] > 0 => attention_pool(tape, e, refs.w_edge)?,
        _ => tape.zeros(1, d),
    };
    tape.concat_cols(&[node_pool, edge_pool]).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tapegrad::Tensor;

    fn identity_refs(tape: &mut Tape, d: usize) -> ReadoutRefs {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        let w_node = tape.leaf(Tensor::new(vec![d, d], eye.clone()).unwrap());
        let w_edge = tape.leaf(Tensor::new(vec![d, d], eye).unwrap());
        ReadoutRefs { w_node, w_edge }
    }

    #[test]
    fn single_node_identity_weights_hand_value() {
        // one node [1, 0], W = I: mean = [1,0], relu = [1,0], logit = 1,
        // σ(1)·[1,0] = [0.731059, 0], edge half zero.
        let mut tape = Tape::new();
        let refs = identity_refs(&mut tape, 2);
        let nodes = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let a = embed_graph(&mut tape, nodes, None, &refs).unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        let got = tape.values(a);
        assert_eq!(got.len(), 4);
        assert!((got[0] - sig1).abs() < 1e-12);
        assert!((got[0] - 0.731059).abs() < 1e-6);
        assert_eq!(&got[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_features_embed_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let w = crate::params::uniform_tensor(&mut rng, vec![3, 3], 0.7);
        let w_node = tape.leaf(w.clone());
        let w_edge = tape.leaf(w);
        let refs = ReadoutRefs { w_node, w_edge };
        let nodes = tape.zeros(4, 3);
        let a = embed_graph(&mut tape, nodes, None, &refs).unwrap();
        assert!(tape.values(a).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_rows_leaves_embedding_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = 4;
        let feats = crate::params::uniform_tensor(&mut rng, vec![5, d], 1.0);
        let w = crate::params::uniform_tensor(&mut rng, vec![d, d], 0.6);

        let embed = |perm: &[usize]| -> Vec<f64> {
            let mut tape = Tape::new();
            let w_node = tape.leaf(w.clone());
            let w_edge = tape.leaf(w.clone());
            let refs = ReadoutRefs { w_node, w_edge };
            let mut data = Vec::new();
            for &r in perm {
                data.extend_from_slice(&feats.data()[r * d..(r + 1) * d]);
            }
            let nodes = tape.leaf(Tensor::new(vec![5, d], data).unwrap());
            let a = embed_graph(&mut tape, nodes, None, &refs).unwrap();
            tape.values(a).to_vec()
        };

        let base = embed(&[0, 1, 2, 3, 4]);
        let permuted = embed(&[3, 0, 4, 2, 1]);
        // order-dependent float accumulation: equal to 1e-12, not bitwise
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_graph_is_a_contract_error() {
        let mut tape = Tape::new();
        let refs = identity_refs(&mut tape, 2);
        let nodes = tape.zeros(0, 2);
        assert!(embed_graph(&mut tape, nodes, None, &refs).is_err());
    }

    #[test]
    fn output_length_is_twice_graph_dim() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for (n, m, d) in [(1usize, 0usize, 3usize), (4, 2, 5), (2, 1, 2)] {
            let mut tape = Tape::new();
            let w_node = tape.leaf(crate::params::uniform_tensor(&mut rng, vec![d, d], 0.5));
            let w_edge = tape.leaf(crate::params::uniform_tensor(&mut rng, vec![d, d], 0.5));
            let refs = ReadoutRefs { w_node, w_edge };
            let nodes = tape.leaf(crate::params::uniform_tensor(&mut rng, vec![n, d], 1.0));
            let edges = if m > 0 {
                Some(tape.leaf(crate::params::uniform_tensor(&mut rng, vec![m, d], 1.0)))
            } else {
                None
            };
            let a = embed_graph(&mut tape, nodes, edges, &refs).unwrap();
            assert_eq!(tape.shape(a), &[1, 2 * d]);
        }
    }
}
