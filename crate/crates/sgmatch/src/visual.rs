//! Visual graph encoder: label embeddings fused with precomputed region
//! features, batch-normalized, and refined by the graph network.
//!
//! A whole mini-batch is encoded as one concatenated node matrix and one
//! concatenated edge matrix (edge endpoints use global row offsets), because
//! training-mode batch norm draws its statistics from all nodes (and,
//! separately, all edges) in the batch. Evaluation uses the frozen running
//! statistics, which makes encoding a pure per-graph function.

use rand_chacha::ChaCha8Rng;
use tapegrad::{Tape, Tensor, TensorId};

use crate::config::ModelConfig;
use crate::data::VisualGraph;
use crate::error::{Error, Result};
use crate::gcn::{bind_gcn, gcn_forward, register_gcn};
use crate::params::{dropout, embed_labels, uniform_tensor, Bound, ParameterSet};

/// Train mode computes batch-norm statistics (and applies dropout with the
/// supplied rng); eval mode uses frozen running statistics.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

pub fn register_visual(ps: &mut ParameterSet, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let scale = 1.0 / (cfg.word_dim as f64).sqrt();
    ps.insert(
        "visual.obj_embed",
        uniform_tensor(rng, vec![cfg.n_object_categories, cfg.word_dim], scale),
        true,
    )?;
    ps.insert(
        "visual.pred_embed",
        uniform_tensor(rng, vec![cfg.n_predicate_categories, cfg.word_dim], scale),
        true,
    )?;
    let fuse_in = cfg.image_feat_dim + cfg.word_dim;
    ps.insert(
        "visual.fuse.w",
        crate::params::linear_init(rng, fuse_in, cfg.fused_dim),
        true,
    )?;
    for side in ["bn_node", "bn_edge"] {
        ps.insert(
            format!("visual.{side}.gamma"),
            Tensor::new(vec![cfg.fused_dim], vec![1.0; cfg.fused_dim])?,
            true,
        )?;
        ps.insert(format!("visual.{side}.beta"), Tensor::zeros(vec![cfg.fused_dim]), true)?;
        ps.insert(
            format!("visual.{side}.running_mean"),
            Tensor::zeros(vec![cfg.fused_dim]),
            false,
        )?;
        ps.insert(
            format!("visual.{side}.running_var"),
            Tensor::new(vec![cfg.fused_dim], vec![1.0; cfg.fused_dim])?,
            false,
        )?;
    }
    register_gcn(ps, "visual.gcn", cfg.fused_dim, cfg.graph_dim, cfg.gcn_layers, rng)
}

/// Fused representation `swish(W · [image, semantic])`, image block first.
/// Normalization and dropout are applied by the batch encoder, not here.
pub fn fuse(
    tape: &mut Tape,
    image_feats: TensorId,
    semantic_feats: TensorId,
    w: TensorId,
) -> Result<TensorId> {
    let cat = tape.concat_cols(&[image_feats, semantic_feats])?;
    let lin = tape.matmul(cat, w)?;
    tape.swish(lin).map_err(Into::into)
}

/// One encoded graph: final node/edge feature matrices on the tape.
pub struct VisualItem {
    pub nodes: TensorId,
    pub edges: Option<TensorId>,
    pub n_nodes: usize,
    pub n_edges: usize,
}

/// Observed (mean, variance) pair from one training-mode batch norm.
pub type BatchMoments = (Vec<f64>, Vec<f64>);

/// Batch statistics observed by training-mode batch norm, for the running
/// average update.
#[derive(Debug, Default)]
pub struct BnStats {
    pub node: Option<BatchMoments>,
    pub edge: Option<BatchMoments>,
}

struct BnRefs {
    gamma: TensorId,
    beta: TensorId,
}

fn bn_apply(
    tape: &mut Tape,
    x: TensorId,
    refs: &BnRefs,
    params: &ParameterSet,
    prefix: &str,
    eps: f64,
    train: bool,
) -> Result<(TensorId, Option<BatchMoments>)> {
    if train {
        let (y, mean, var) = tape.batch_norm_train(x, refs.gamma, refs.beta, eps)?;
        Ok((y, Some((mean, var))))
    } else {
        let mean = params.values(&format!("{prefix}.running_mean"));
        let var = params.values(&format!("{prefix}.running_var"));
        let y = tape.batch_norm_eval(x, refs.gamma, refs.beta, mean, var, eps)?;
        Ok((y, None))
    }
}

/// Encode a batch of graphs into final feature graphs (label embedding →
/// fusion → batch norm → dropout → graph network).
pub fn encode_batch(
    tape: &mut Tape,
    graphs: &[&VisualGraph],
    bound: &Bound,
    params: &ParameterSet,
    cfg: &ModelConfig,
    mut phase: Phase,
) -> Result<(Vec<VisualItem>, BnStats)> {
    if graphs.is_empty() {
        return Err(Error::Contract("encode_batch needs at least one graph".into()));
    }
    let d_i = cfg.image_feat_dim;
    for g in graphs {
        if g.feat_dim != d_i {
            return Err(Error::Config(format!(
                "graph feature width {} does not match configured image_feat_dim {d_i}",
                g.feat_dim
            )));
        }
        if g.n_objects() == 0 {
            return Err(Error::Contract("visual graph with zero objects".into()));
        }
    }

    // concatenate the whole batch; record per-graph offsets
    let mut node_offsets = Vec::with_capacity(graphs.len());
    let mut edge_offsets = Vec::with_capacity(graphs.len());
    let mut all_obj_ids = Vec::new();
    let mut all_pred_ids = Vec::new();
    let mut node_img = Vec::new();
    let mut edge_img = Vec::new();
    let mut endpoints = Vec::new();
    for g in graphs {
        node_offsets.push(all_obj_ids.len());
        edge_offsets.push(all_pred_ids.len());
        let off = all_obj_ids.len();
        all_obj_ids.extend_from_slice(&g.objects);
        node_img.extend_from_slice(&g.node_feats);
        for r in &g.relations {
            all_pred_ids.push(r.predicate);
            endpoints.push((off + r.subject, off + r.object));
        }
        edge_img.extend_from_slice(&g.edge_feats);
    }
    let total_nodes = all_obj_ids.len();
    let total_edges = all_pred_ids.len();

    let fuse_w = bound.get("visual.fuse.w");
    let train = matches!(phase, Phase::Train(_));

    // nodes: embed → fuse → bn → dropout
    let obj_table = bound.get("visual.obj_embed");
    let sem = embed_labels(tape, obj_table, &all_obj_ids)?;
    let img = tape.leaf(Tensor::new(vec![total_nodes, d_i], node_img)?);
    let fused_nodes = fuse(tape, img, sem, fuse_w)?;
    let bn_node = BnRefs {
        gamma: bound.get("visual.bn_node.gamma"),
        beta: bound.get("visual.bn_node.beta"),
    };
    let (mut nodes, node_stats) = bn_apply(
        tape,
        fused_nodes,
        &bn_node,
        params,
        "visual.bn_node",
        cfg.bn_eps,
        train,
    )?;
    if let Phase::Train(rng) = &mut phase {
        nodes = dropout(tape, nodes, cfg.dropout, rng)?;
    }

    // edges, when the batch has any
    let mut edges = None;
    let mut edge_stats = None;
    if total_edges > 0 {
        let pred_table = bound.get("visual.pred_embed");
        let sem_e = embed_labels(tape, pred_table, &all_pred_ids)?;
        let img_e = tape.leaf(Tensor::new(vec![total_edges, d_i], edge_img)?);
        let fused_edges = fuse(tape, img_e, sem_e, fuse_w)?;
        let bn_edge = BnRefs {
            gamma: bound.get("visual.bn_edge.gamma"),
            beta: bound.get("visual.bn_edge.beta"),
        };
        let (mut e, stats) = bn_apply(
            tape,
            fused_edges,
            &bn_edge,
            params,
            "visual.bn_edge",
            cfg.bn_eps,
            train,
        )?;
        if let Phase::Train(rng) = &mut phase {
            e = dropout(tape, e, cfg.dropout, rng)?;
        }
        edges = Some(e);
        edge_stats = stats;
    }

    let layers = bind_gcn(bound, "visual.gcn", cfg.gcn_layers);
    let (nodes, edges) = gcn_forward(tape, nodes, edges, &endpoints, &layers, cfg.gcn_activation)?;

    // slice per graph
    let mut items = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let n0 = node_offsets[i];
        let n1 = n0 + g.n_objects();
        let item_nodes = tape.slice_rows(nodes, n0, n1)?;
        let item_edges = match edges {
            Some(e) if g.n_relations() > 0 => {
                let e0 = edge_offsets[i];
                Some(tape.slice_rows(e, e0, e0 + g.n_relations())?)
            }
            _ => None,
        };
        items.push(VisualItem {
            nodes: item_nodes,
            edges: item_edges,
            n_nodes: g.n_objects(),
            n_edges: g.n_relations(),
        });
    }
    Ok((items, BnStats { node: node_stats, edge: edge_stats }))
}
