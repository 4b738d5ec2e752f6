//! Graph-network update layers: nodes update from themselves alone, edges
//! from the (subject, edge, object) concatenation of previous-layer features.

use rand_chacha::ChaCha8Rng;
use tapegrad::{Tape, Tensor, TensorId};

use crate::config::GcnActivation;
use crate::error::Result;
use crate::params::{linear_init, Bound, ParameterSet};

pub struct GcnLayer {
    pub node_w: TensorId,
    pub node_b: TensorId,
    pub edge_w: TensorId,
    pub edge_b: TensorId,
}

/// Register an `n_layers` stack under `prefix`. The first layer maps
/// `input_dim → output_dim` (edges see three concatenated inputs); further
/// layers stay at `output_dim`.
pub fn register_gcn(
    ps: &mut ParameterSet,
    prefix: &str,
    input_dim: usize,
    output_dim: usize,
    n_layers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for l in 0..n_layers {
        let d_in = if l == 0 { input_dim } else { output_dim };
        ps.insert(format!("{prefix}.node{l}.w"), linear_init(rng, d_in, output_dim), true)?;
        ps.insert(format!("{prefix}.node{l}.b"), Tensor::zeros(vec![output_dim]), true)?;
        ps.insert(format!("{prefix}.edge{l}.w"), linear_init(rng, 3 * d_in, output_dim), true)?;
        ps.insert(format!("{prefix}.edge{l}.b"), Tensor::zeros(vec![output_dim]), true)?;
    }
    Ok(())
}

pub fn bind_gcn(bound: &Bound, prefix: &str, n_layers: usize) -> Vec<GcnLayer> {
    (0..n_layers)
        .map(|l| GcnLayer {
            node_w: bound.get(&format!("{prefix}.node{l}.w")),
            node_b: bound.get(&format!("{prefix}.node{l}.b")),
            edge_w: bound.get(&format!("{prefix}.edge{l}.w")),
            edge_b: bound.get(&format!("{prefix}.edge{l}.b")),
        })
        .collect()
}

fn activate(tape: &mut Tape, x: TensorId, act: GcnActivation) -> Result<TensorId> {
    Ok(match act {
        GcnActivation::Swish => tape.swish(x)?,
        GcnActivation::Linear => x,
    })
}

/// One update layer. `endpoints` holds (subject, object) row indices into
/// `nodes`; the edge update reads previous-layer node features, so nodes and
/// edges advance in lockstep.
pub fn gcn_layer(
    tape: &mut Tape,
    nodes: TensorId,
    edges: Option<TensorId>,
    endpoints: &[(usize, usize)],
    layer: &GcnLayer,
    act: GcnActivation,
) -> Result<(TensorId, Option<TensorId>)> {
    let new_edges = match edges {
        Some(e) if !endpoints.is_empty() => {
            let subj: Vec<usize> = endpoints.iter().map(|&(s, _)| s).collect();
            let obj: Vec<usize> = endpoints.iter().map(|&(_, o)| o).collect();
            let h_subj = tape.gather_rows(nodes, &subj)?;
            let h_obj = tape.gather_rows(nodes, &obj)?;
            let cat = tape.concat_cols(&[h_subj, e, h_obj])?;
            let lin = tape.matmul(cat, layer.edge_w)?;
            let lin = tape.add_bias(lin, layer.edge_b)?;
            Some(activate(tape, lin, act)?)
        }
        other => other,
    };

    let lin = tape.matmul(nodes, layer.node_w)?;
    let lin = tape.add_bias(lin, layer.node_b)?;
    let new_nodes = activate(tape, lin, act)?;

    Ok((new_nodes, new_edges))
}

/// Apply the full stack.
pub fn gcn_forward(
    tape: &mut Tape,
    mut nodes: TensorId,
    mut edges: Option<TensorId>,
    endpoints: &[(usize, usize)],
    layers: &[GcnLayer],
    act: GcnActivation,
) -> Result<(TensorId, Option<TensorId>)> {
    for layer in layers {
        let (n, e) = gcn_layer(tape, nodes, edges, endpoints, layer, act)?;
        nodes = n;
        edges = e;
    }
    Ok((nodes, edges))
}
