//! Textual encoder: a sentence bi-LSTM for per-word features, a shared
//! triplet bi-LSTM for per-relation features, and a graph network over the
//! triplet graph for the global path.

use rand_chacha::ChaCha8Rng;
use tapegrad::{Tape, TensorId};

use crate::config::{ModelConfig, TripletFeatureMode};
use crate::data::TextGraph;
use crate::error::{Error, Result};
use crate::gcn::{bind_gcn, gcn_forward, register_gcn};
use crate::lstm::{bidirectional, register_lstm, LstmGates};
use crate::params::{dropout, embed_labels, uniform_tensor, Bound, ParameterSet};
use crate::visual::Phase;

pub fn register_textual(ps: &mut ParameterSet, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let scale = 1.0 / (cfg.word_dim as f64).sqrt();
    // one table feeds both the sentence path and the triplet path
    ps.insert(
        "text.word_embed",
        uniform_tensor(rng, vec![cfg.vocab_size, cfg.word_dim], scale),
        true,
    )?;
    for dir in ["fwd", "bwd"] {
        register_lstm(ps, &format!("text.lstm_sent.{dir}"), cfg.word_dim, cfg.graph_dim, rng)?;
    }
    // LSTM_t: a single parameter instance shared by every triplet
    for dir in ["fwd", "bwd"] {
        register_lstm(ps, &format!("text.lstm_trip.{dir}"), cfg.word_dim, cfg.graph_dim, rng)?;
    }
    register_gcn(ps, "text.gcn", cfg.graph_dim, cfg.graph_dim, cfg.gcn_layers, rng)
}

/// Everything the similarity function needs from one caption.
pub struct CaptionEncoding {
    /// Sentence-path word features (`N_w × d`).
    pub word_feats: TensorId,
    pub n_words: usize,
    /// Per-triplet features (`N_t × d`); `None` when no triplets parsed.
    pub triplet_feats: Option<TensorId>,
    pub n_triplets: usize,
    /// Triplet-graph features after the textual graph network; the global
    /// path reads these. `None` when no triplets parsed.
    pub graph_nodes: Option<TensorId>,
    pub graph_edges: Option<TensorId>,
}

/// Sentence path: embed tokens, run the bidirectional LSTM, average the two
/// directions per position.
pub fn encode_words(
    tape: &mut Tape,
    tokens: &[usize],
    bound: &Bound,
    cfg: &ModelConfig,
) -> Result<TensorId> {
    if tokens.is_empty() {
        return Err(Error::Contract("cannot encode an empty sentence".into()));
    }
    let table = bound.get("text.word_embed");
    let emb = embed_labels(tape, table, tokens)?;
    let fwd = LstmGates::bind(bound, "text.lstm_sent.fwd", cfg.graph_dim);
    let bwd = LstmGates::bind(bound, "text.lstm_sent.bwd", cfg.graph_dim);
    let out = bidirectional(tape, emb, &fwd, &bwd)?;
    tape.concat_rows(&out.averaged).map_err(Into::into)
}

/// Triplet path outputs: the per-triplet feature plus the per-word features
/// the triplet graph is built from.
pub struct TripletEncoding {
    /// `N_t × d`, one row per triplet.
    pub triplet_feats: TensorId,
    /// Subject/object/edge features per triplet, ready for graph assembly.
    pub node_rows: Vec<TensorId>,
    pub edge_rows: Vec<TensorId>,
}

/// Encode every triplet with the shared triplet LSTM.
///
/// The triplet feature averages the forward state at the first word with the
/// backward state at the last word (`EndpointStates`); `LastStates` swaps in
/// each direction's final state instead. A multi-word predicate's edge
/// feature is the mean of its interior per-word features; a bare
/// subject-object pair gets a zero edge feature.
pub fn encode_triplets(
    tape: &mut Tape,
    triplets: &[Vec<usize>],
    bound: &Bound,
    cfg: &ModelConfig,
) -> Result<TripletEncoding> {
    if triplets.is_empty() {
        return Err(Error::Contract("encode_triplets requires at least one triplet".into()));
    }
    let table = bound.get("text.word_embed");
    let fwd = LstmGates::bind(bound, "text.lstm_trip.fwd", cfg.graph_dim);
    let bwd = LstmGates::bind(bound, "text.lstm_trip.bwd", cfg.graph_dim);

    let mut feats = Vec::with_capacity(triplets.len());
    let mut node_rows = Vec::with_capacity(2 * triplets.len());
    let mut edge_rows = Vec::with_capacity(triplets.len());
    for t in triplets {
        if t.len() < 2 {
            return Err(Error::data(format!(
                "triplet {t:?} shorter than 2 words (subject and object required)"
            )));
        }
        let last = t.len() - 1;
        let emb = embed_labels(tape, table, t)?;
        let out = bidirectional(tape, emb, &fwd, &bwd)?;

        let (a, b) = match cfg.triplet_feature {
            TripletFeatureMode::EndpointStates => (out.forward[0], out.backward[last]),
            TripletFeatureMode::LastStates => (out.forward[last], out.backward[0]),
        };
        let sum = tape.add(a, b)?;
        feats.push(tape.mul_scalar(sum, 0.5)?);

        node_rows.push(out.averaged[0]);
        node_rows.push(out.averaged[last]);
        let edge = if t.len() > 2 {
            let interior = tape.concat_rows(&out.averaged[1..last])?;
            tape.mean_axis(interior, 0)?
        } else {
            tape.zeros(1, cfg.graph_dim)
        };
        edge_rows.push(edge);
    }
    let triplet_feats = tape.concat_rows(&feats)?;
    Ok(TripletEncoding { triplet_feats, node_rows, edge_rows })
}

/// Full caption encoding. Words repeated across triplets stay distinct
/// graph nodes; features are indexed by (word, triplet).
pub fn encode_caption(
    tape: &mut Tape,
    caption: &TextGraph,
    bound: &Bound,
    cfg: &ModelConfig,
    mut phase: Phase,
) -> Result<CaptionEncoding> {
    let word_feats = encode_words(tape, &caption.tokens, bound, cfg)?;

    if caption.triplets.is_empty() {
        return Ok(CaptionEncoding {
            word_feats,
            n_words: caption.tokens.len(),
            triplet_feats: None,
            n_triplets: 0,
            graph_nodes: None,
            graph_edges: None,
        });
    }

    let enc = encode_triplets(tape, &caption.triplets, bound, cfg)?;
    let mut nodes = tape.concat_rows(&enc.node_rows)?;
    let mut edges = tape.concat_rows(&enc.edge_rows)?;
    if let Phase::Train(rng) = &mut phase {
        nodes = dropout(tape, nodes, cfg.dropout, rng)?;
        edges = dropout(tape, edges, cfg.dropout, rng)?;
    }
    let endpoints: Vec<(usize, usize)> =
        (0..caption.triplets.len()).map(|k| (2 * k, 2 * k + 1)).collect();
    let layers = bind_gcn(bound, "text.gcn", cfg.gcn_layers);
    let (graph_nodes, graph_edges) =
        gcn_forward(tape, nodes, Some(edges), &endpoints, &layers, cfg.gcn_activation)?;

    Ok(CaptionEncoding {
        word_feats,
        n_words: caption.tokens.len(),
        triplet_feats: Some(enc.triplet_feats),
        n_triplets: caption.triplets.len(),
        graph_nodes: Some(graph_nodes),
        graph_edges,
    })
}
