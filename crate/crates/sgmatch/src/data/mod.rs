//! Scene-graph domain model: visual and textual graphs, vocabulary,
//! dataset files, graph capping, and the synthetic corpus generator.

mod dataset;
mod synthetic;
mod vocab;

pub use dataset::{load_dataset, save_dataset, PairedDataset, RecordPair, Split};
pub use synthetic::{gen_synthetic, GenConfig, SyntheticCorpus};
pub use vocab::{build_vocab, Vocab};

use crate::error::{Error, Result};

/// Default cap on detected objects kept per graph.
pub const DEFAULT_CAP_OBJECTS: usize = 36;
/// Default cap on detected relations kept per graph.
pub const DEFAULT_CAP_RELATIONS: usize = 25;

/// One directed relation: `subject —predicate→ object`, indices into the
/// object list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relation {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

/// Detected scene graph of one image plus its precomputed region features.
///
/// Node and edge features are row-major `count × feat_dim` matrices; the
/// upstream feature extractor is out of scope, so they arrive as data.
/// Bounding boxes are kept for provenance but unused by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualGraph {
    pub objects: Vec<usize>,
    pub boxes: Vec<[f64; 4]>,
    pub relations: Vec<Relation>,
    pub node_feats: Vec<f64>,
    pub edge_feats: Vec<f64>,
    pub feat_dim: usize,
}

impl VisualGraph {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Check structural invariants. `n_object_categories` /
    /// `n_predicate_categories` of zero skip the category range checks.
    pub fn validate(&self, n_object_categories: usize, n_predicate_categories: usize) -> Result<()> {
        let n = self.objects.len();
        if n == 0 {
            return Err(Error::data("visual graph has no objects"));
        }
        if self.boxes.len() != n {
            return Err(Error::data(format!(
                "boxes count {} != objects count {n}",
                self.boxes.len()
            )));
        }
        if self.node_feats.len() != n * self.feat_dim {
            return Err(Error::data(format!(
                "node_feats length {} != {} objects x feat_dim {}",
                self.node_feats.len(),
                n,
                self.feat_dim
            )));
        }
        if self.edge_feats.len() != self.relations.len() * self.feat_dim {
            return Err(Error::data(format!(
                "edge_feats length {} != {} relations x feat_dim {}",
                self.edge_feats.len(),
                self.relations.len(),
                self.feat_dim
            )));
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.subject >= n || r.object >= n {
                return Err(Error::data(format!(
                    "relation {i} references object index {} outside [0, {n})",
                    r.subject.max(r.object)
                )));
            }
            if n_predicate_categories > 0 && r.predicate >= n_predicate_categories {
                return Err(Error::data(format!(
                    "relation {i} predicate id {} outside [0, {n_predicate_categories})",
                    r.predicate
                )));
            }
        }
        if n_object_categories > 0 {
            if let Some(&bad) = self.objects.iter().find(|&&o| o >= n_object_categories) {
                return Err(Error::data(format!(
                    "object id {bad} outside [0, {n_object_categories})"
                )));
            }
        }
        Ok(())
    }
}

/// Parsed caption: word ids plus relation triplets. Each triplet is an
/// ordered word-id sequence of length >= 2 whose first element is the
/// subject and last the object; interior words form the predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextGraph {
    pub tokens: Vec<usize>,
    pub triplets: Vec<Vec<usize>>,
}

impl TextGraph {
    pub fn n_words(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::data("caption has no tokens"));
        }
        let check = |ids: &[usize]| -> Result<()> {
            if let Some(&bad) = ids.iter().find(|&&w| w >= vocab_size) {
                return Err(Error::data(format!(
                    "word id {bad} outside vocabulary of size {vocab_size}"
                )));
            }
            Ok(())
        };
        check(&self.tokens)?;
        for (i, t) in self.triplets.iter().enumerate() {
            if t.len() < 2 {
                return Err(Error::data(format!(
                    "triplet {i} has {} words; at least 2 (subject, object) required",
                    t.len()
                )));
            }
            check(t)?;
        }
        Ok(())
    }
}

/// Kept scores returned by [`cap_graph`] so capping composes.
#[derive(Debug, Clone, PartialEq)]
pub struct CapScores {
    pub objects: Vec<f64>,
    pub relations: Vec<f64>,
}

/// Keep the `cap_objects` highest-scoring objects and `cap_relations`
/// highest-scoring relations. Relations whose endpoint was dropped are
/// removed before the relation cap is applied, and indices are re-mapped.
/// Ties break to the lower index; kept items preserve their original order.
pub fn cap_graph(
    g: &VisualGraph,
    cap_objects: usize,
    cap_relations: usize,
    scores: &CapScores,
) -> Result<(VisualGraph, CapScores)> {
    if scores.objects.len() != g.n_objects() || scores.relations.len() != g.n_relations() {
        return Err(Error::data(format!(
            "score counts ({}, {}) do not match graph ({}, {})",
            scores.objects.len(),
            scores.relations.len(),
            g.n_objects(),
            g.n_relations()
        )));
    }

    let top_indices = |s: &[f64], cap: usize| -> Vec<usize> {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let mut kept: Vec<usize> = order.into_iter().take(cap).collect();
        kept.sort_unstable();
        kept
    };

    let kept_objects = top_indices(&scores.objects, cap_objects);
    let mut remap = vec![usize::MAX; g.n_objects()];
    for (new, &old) in kept_objects.iter().enumerate() {
        remap[old] = new;
    }

    // Drop dangling relations first, then cap the survivors by score.
    let surviving: Vec<usize> = (0..g.n_relations())
        .filter(|&i| {
            let r = g.relations[i];
            remap[r.subject] != usize::MAX && remap[r.object] != usize::MAX
        })
        .collect();
    let surviving_scores: Vec<f64> = surviving.iter().map(|&i| scores.relations[i]).collect();
    let kept_rel_local = top_indices(&surviving_scores, cap_relations);
    let kept_relations: Vec<usize> = kept_rel_local.iter().map(|&li| surviving[li]).collect();

    let d = g.feat_dim;
    let mut out = VisualGraph {
        objects: Vec::with_capacity(kept_objects.len()),
        boxes: Vec::with_capacity(kept_objects.len()),
        relations: Vec::with_capacity(kept_relations.len()),
        node_feats: Vec::with_capacity(kept_objects.len() * d),
        edge_feats: Vec::with_capacity(kept_relations.len() * d),
        feat_dim: d,
    };
    for &i in &kept_objects {
        out.objects.push(g.objects[i]);
        out.boxes.push(g.boxes[i]);
        out.node_feats.extend_from_slice(&g.node_feats[i * d..(i + 1) * d]);
    }
    for &i in &kept_relations {
        let r = g.relations[i];
        out.relations.push(Relation {
            subject: remap[r.subject],
            predicate: r.predicate,
            object: remap[r.object],
        });
        out.edge_feats.extend_from_slice(&g.edge_feats[i * d..(i + 1) * d]);
    }

    let kept_scores = CapScores {
        objects: kept_objects.iter().map(|&i| scores.objects[i]).collect(),
        relations: kept_relations.iter().map(|&i| scores.relations[i]).collect(),
    };
    Ok((out, kept_scores))
}
