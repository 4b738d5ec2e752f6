//! Wiring shared by training and evaluation: bind parameters to a tape,
//! encode both modalities, and assemble pair scores.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tapegrad::{Tape, TensorId};

use crate::config::{ModelConfig, ScoreMode};
use crate::data::{PairedDataset, TextGraph, VisualGraph};
use crate::error::Result;
use crate::params::{bind, Bound, ParameterSet};
use crate::readout::{embed_graph, ReadoutRefs};
use crate::score::{
    embedding_norm, pair_terms, FrozenCaption, FrozenVisual, Mat, PairTerms, TapeCaption,
    TapeVisual,
};
use crate::textual::encode_caption;
use crate::visual::{encode_batch, BnStats, Phase};

/// Tape-resident encodings of one training batch.
pub struct EncodedBatch {
    pub visuals: Vec<TapeVisual>,
    pub captions: Vec<TapeCaption>,
    pub bn_stats: BnStats,
}

fn visual_embedding(
    tape: &mut Tape,
    nodes: TensorId,
    edges: Option<TensorId>,
    refs: &ReadoutRefs,
) -> Result<(TensorId, TensorId)> {
    let emb = embed_graph(tape, nodes, edges, refs)?;
    let norm = embedding_norm(tape, emb)?;
    Ok((emb, norm))
}

/// Encode a batch of (image, caption) pairs in training mode. In
/// `LocalOnly` score mode the readout embeddings are skipped entirely, so
/// the attention parameters receive no gradient.
pub fn encode_training_batch(
    tape: &mut Tape,
    bound: &Bound,
    params: &ParameterSet,
    cfg: &ModelConfig,
    batch: &[(&VisualGraph, &TextGraph)],
    rng: &mut ChaCha8Rng,
) -> Result<EncodedBatch> {
    let graphs: Vec<&VisualGraph> = batch.iter().map(|(g, _)| *g).collect();
    let (items, bn_stats) = encode_batch(tape, &graphs, bound, params, cfg, Phase::Train(rng))?;

    let refs = ReadoutRefs::bind(bound);
    let with_global = cfg.score_mode == ScoreMode::LocalGlobal;

    let mut visuals = Vec::with_capacity(items.len());
    for item in items {
        let embedding = if with_global {
            Some(visual_embedding(tape, item.nodes, item.edges, &refs)?)
        } else {
            None
        };
        visuals.push(TapeVisual { nodes: item.nodes, edges: item.edges, embedding });
    }

    let mut captions = Vec::with_capacity(batch.len());
    for (_, text) in batch {
        let enc = encode_caption(tape, text, bound, cfg, Phase::Train(rng))?;
        let embedding = match (with_global, enc.graph_nodes) {
            (true, Some(nodes)) => Some(visual_embedding(tape, nodes, enc.graph_edges, &refs)?),
            _ => None,
        };
        captions.push(TapeCaption {
            words: enc.word_feats,
            triplets: enc.triplet_feats,
            embedding,
        });
    }
    Ok(EncodedBatch { visuals, captions, bn_stats })
}

/// Full in-batch score matrix: entry (i, j) is the total similarity of
/// image i with caption j. Returns the stacked `B × B` tensor plus the
/// per-pair term handles (row-major).
pub fn score_matrix_tape(
    tape: &mut Tape,
    visuals: &[TapeVisual],
    captions: &[TapeCaption],
    mode: ScoreMode,
) -> Result<(TensorId, Vec<PairTerms>)> {
    let b = visuals.len();
    let mut terms = Vec::with_capacity(b * captions.len());
    let mut totals = Vec::with_capacity(b * captions.len());
    for v in visuals {
        for c in captions {
            let t = pair_terms(tape, v, c, mode)?;
            totals.push(t.s_total);
            terms.push(t);
        }
    }
    let matrix = tape.stack_scalars(&totals, b, captions.len())?;
    Ok((matrix, terms))
}

// ── Frozen corpus encoding for evaluation ───────────────────────────────

/// Every encoded item of one dataset split, with ground-truth bookkeeping.
pub struct FrozenCorpus {
    pub image_ids: Vec<String>,
    pub caption_ids: Vec<String>,
    pub images: Vec<FrozenVisual>,
    pub captions: Vec<FrozenCaption>,
    /// Image index owning each caption.
    pub caption_owner: Vec<usize>,
    /// Caption indices belonging to each image.
    pub captions_of: Vec<Vec<usize>>,
}

fn mat_of(tape: &Tape, id: TensorId) -> Mat {
    let shape = tape.shape(id);
    Mat::new(shape[0], shape[1], tape.values(id).to_vec())
}

/// Encode one image and its captions with frozen statistics and no
/// gradients, extracting plain matrices.
fn encode_pair_frozen(
    params: &ParameterSet,
    cfg: &ModelConfig,
    visual: &VisualGraph,
    texts: &[TextGraph],
) -> Result<(FrozenVisual, Vec<FrozenCaption>)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, false);
    let refs = ReadoutRefs::bind(&bound);

    let (items, _) = encode_batch(&mut tape, &[visual], &bound, params, cfg, Phase::Eval)?;
    let item = &items[0];
    let (emb, _) = visual_embedding(&mut tape, item.nodes, item.edges, &refs)?;
    let frozen_visual = FrozenVisual {
        nodes: mat_of(&tape, item.nodes),
        edges: item.edges.map(|e| mat_of(&tape, e)),
        embedding: tape.values(emb).to_vec(),
    };

    let mut frozen_caps = Vec::with_capacity(texts.len());
    for text in texts {
        let enc = encode_caption(&mut tape, text, &bound, cfg, Phase::Eval)?;
        let embedding = match enc.graph_nodes {
            Some(nodes) => {
                let a = embed_graph(&mut tape, nodes, enc.graph_edges, &refs)?;
                Some(tape.values(a).to_vec())
            }
            None => None,
        };
        frozen_caps.push(FrozenCaption {
            words: mat_of(&tape, enc.word_feats),
            triplets: enc.triplet_feats.map(|t| mat_of(&tape, t)),
            embedding,
        });
    }
    Ok((frozen_visual, frozen_caps))
}

/// Encode a whole split against frozen parameters. Pairs encode in
/// parallel; outputs keep dataset order, so results are deterministic.
pub fn encode_corpus(
    params: &ParameterSet,
    dataset: &PairedDataset,
    cfg: &ModelConfig,
) -> Result<FrozenCorpus> {
    if dataset.is_empty() {
        return Err(crate::Error::data("cannot encode an empty dataset"));
    }
    let encoded: Vec<(FrozenVisual, Vec<FrozenCaption>)> = dataset
        .pairs
        .par_iter()
        .map(|pair| encode_pair_frozen(params, cfg, &pair.visual, &pair.captions))
        .collect::<Result<Vec<_>>>()?;

    let mut corpus = FrozenCorpus {
        image_ids: Vec::with_capacity(encoded.len()),
        caption_ids: Vec::new(),
        images: Vec::with_capacity(encoded.len()),
        captions: Vec::new(),
        caption_owner: Vec::new(),
        captions_of: Vec::with_capacity(encoded.len()),
    };
    for (i, ((vis, caps), pair)) in encoded.into_iter().zip(&dataset.pairs).enumerate() {
        corpus.image_ids.push(pair.id.clone());
        corpus.images.push(vis);
        let mut owned = Vec::with_capacity(caps.len());
        for (k, cap) in caps.into_iter().enumerate() {
            owned.push(corpus.captions.len());
            corpus.caption_ids.push(format!("{}#{k}", pair.id));
            corpus.captions.push(cap);
            corpus.caption_owner.push(i);
        }
        corpus.captions_of.push(owned);
    }
    Ok(corpus)
}
