//! Pair similarity: local part matching (words↔objects, triplets↔edges),
//! global cosine between graph embeddings, and their sum.
//!
//! Two routes compute the same numbers: a tape route used in training (so
//! gradients flow) and a frozen route on extracted feature matrices used for
//! corpus-scale evaluation. Tests pin them together.

use serde::{Deserialize, Serialize};
use tapegrad::{Tape, TensorId};

use crate::config::ScoreMode;
use crate::error::{Error, Result};

/// Per-pair score breakdown. `s_local = s_node + s_rel` and
/// `s_total = s_local + s_global` hold exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub s_node: f64,
    pub s_rel: f64,
    pub s_local: f64,
    pub s_global: f64,
    pub s_total: f64,
}

// ── Frozen route ────────────────────────────────────────────────────────

/// Row-major matrix of extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over words of the best dot product against any object feature.
pub fn node_score(word_feats: &Mat, object_feats: &Mat) -> Result<f64> {
    if word_feats.rows == 0 || object_feats.rows == 0 {
        return Err(Error::Contract(
            "node_score needs at least one word and one object".into(),
        ));
    }
    let mut total = 0.0;
    for w in 0..word_feats.rows {
        let row = word_feats.row(w);
        let best = (0..object_feats.rows)
            .map(|o| dot(row, object_feats.row(o)))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / word_feats.rows as f64)
}

/// Mean over triplets of the best dot product against any visual edge.
/// Degenerate cases (no triplets or no visual relations) score zero.
pub fn edge_score(triplet_feats: Option<&Mat>, edge_feats: Option<&Mat>) -> f64 {
    match (triplet_feats, edge_feats) {
        (Some(t), Some(e)) if t.rows > 0 && e.rows > 0 => {
            let mut total = 0.0;
            for i in 0..t.rows {
                let row = t.row(i);
                let best = (0..e.rows)
                    .map(|j| dot(row, e.row(j)))
                    .fold(f64::NEG_INFINITY, f64::max);
                total += best;
            }
            total / t.rows as f64
        }
        _ => 0.0,
    }
}

/// Cosine similarity; zero-norm inputs are an error, never a silent division.
pub fn global_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "global_score length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of a zero-norm embedding".into()));
    }
    // mathematically in [-1, 1]; clamp the last-bit rounding excess
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Frozen features of one encoded image.
#[derive(Debug, Clone)]
pub struct FrozenVisual {
    pub nodes: Mat,
    pub edges: Option<Mat>,
    pub embedding: Vec<f64>,
}

/// Frozen features of one encoded caption. `embedding` is `None` when the
/// caption parsed to zero triplets (its graph is empty).
#[derive(Debug, Clone)]
pub struct FrozenCaption {
    pub words: Mat,
    pub triplets: Option<Mat>,
    pub embedding: Option<Vec<f64>>,
}

/// Full similarity breakdown for one pair.
///
/// Local terms come from the LSTM outputs; the global term compares the
/// graph-network/readout embeddings. A caption without a graph contributes
/// a zero global term. In `LocalOnly` mode the global term is dropped from
/// (and reported as zero in) the total.
pub fn total_score(v: &FrozenVisual, c: &FrozenCaption, mode: ScoreMode) -> Result<SimilarityReport> {
    let s_node = node_score(&c.words, &v.nodes)?;
    let s_rel = edge_score(c.triplets.as_ref(), v.edges.as_ref());
    let s_local = s_node + s_rel;
    let s_global = match (mode, &c.embedding) {
        (ScoreMode::LocalOnly, _) => 0.0,
        (_, Some(e)) => global_score(&v.embedding, e)?,
        (_, None) => 0.0,
    };
    let s_total = s_local + s_global;
    Ok(SimilarityReport { s_node, s_rel, s_local, s_global, s_total })
}

// ── Tape route ──────────────────────────────────────────────────────────

/// Tape-resident features of one item; `embedding` pairs the readout vector
/// with its precomputed norm so cosine reuses it across all pairs.
pub struct TapeVisual {
    pub nodes: TensorId,
    pub edges: Option<TensorId>,
    pub embedding: Option<(TensorId, TensorId)>,
}

pub struct TapeCaption {
    pub words: TensorId,
    pub triplets: Option<TensorId>,
    pub embedding: Option<(TensorId, TensorId)>,
}

pub struct PairTerms {
    pub s_node: TensorId,
    pub s_rel: TensorId,
    pub s_local: TensorId,
    pub s_global: TensorId,
    pub s_total: TensorId,
}

/// Euclidean norm of a row vector, for cosine denominators. Zero norm is an
/// error here so scoring can never divide silently.
pub fn embedding_norm(tape: &mut Tape, a: TensorId) -> Result<TensorId> {
    let sq = tape.mul(a, a)?;
    let sum = tape.sum_all(sq)?;
    if tape.scalar_value(sum) == 0.0 {
        return Err(Error::Numeric("cosine of a zero-norm embedding".into()));
    }
    tape.sqrt(sum).map_err(Into::into)
}

/// Differentiable mean-of-row-max dot-product score between two feature
/// matrices (`queries × d` against `candidates × d`); this is the node and
/// relation matching term.
pub fn match_score(tape: &mut Tape, queries: TensorId, candidates: TensorId) -> Result<TensorId> {
    let ct = tape.transpose(candidates)?;
    let sims = tape.matmul(queries, ct)?;
    let (best, _) = tape.max_axis(sims, 1)?;
    tape.mean_all(best).map_err(Into::into)
}

pub fn pair_terms(
    tape: &mut Tape,
    v: &TapeVisual,
    c: &TapeCaption,
    mode: ScoreMode,
) -> Result<PairTerms> {
    let s_node = match_score(tape, c.words, v.nodes)?;
    let s_rel = match (c.triplets, v.edges) {
        (Some(t), Some(e)) => match_score(tape, t, e)?,
        _ => tape.scalar(0.0)?,
    };
    let s_local = tape.add(s_node, s_rel)?;

    let s_global = match (mode, c.embedding, v.embedding) {
        (ScoreMode::LocalOnly, _, _) | (_, None, _) | (_, _, None) => tape.scalar(0.0)?,
        (_, Some((ct_emb, ct_norm)), Some((vi_emb, vi_norm))) => {
            let ct_col = tape.transpose(ct_emb)?;
            let num = tape.matmul(vi_emb, ct_col)?;
            let denom = tape.mul(vi_norm, ct_norm)?;
            tape.div(num, denom)?
        }
    };
    let s_total = tape.add(s_local, s_global)?;
    Ok(PairTerms { s_node, s_rel, s_local, s_global, s_total })
}

impl PairTerms {
    /// Read the forward values into a report.
    pub fn report(&self, tape: &Tape) -> SimilarityReport {
        SimilarityReport {
            s_node: tape.scalar_value(self.s_node),
            s_rel: tape.scalar_value(self.s_rel),
            s_local: tape.scalar_value(self.s_local),
            s_global: tape.scalar_value(self.s_global),
            s_total: tape.scalar_value(self.s_total),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    #[test]
    fn node_score_identical_unit_vectors() {
        let w = Mat::new(1, 3, unit(3, 0));
        let o = Mat::new(1, 3, unit(3, 0));
        assert_eq!(node_score(&w, &o).unwrap(), 1.0);
    }

    #[test]
    fn node_score_takes_the_best_object() {
        let w = Mat::new(1, 2, vec![1.0, 0.0]);
        let mut objs = unit(2, 1);
        objs.extend_from_slice(&[0.9, 0.0]);
        let o = Mat::new(2, 2, objs);
        assert_eq!(node_score(&w, &o).unwrap(), 0.9);
    }

    #[test]
    fn node_score_matches_double_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let (nw, no, d) = (3, 4, 5);
        let w: Vec<f64> = (0..nw * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let o: Vec<f64> = (0..no * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wm = Mat::new(nw, d, w.clone());
        let om = Mat::new(no, d, o.clone());

        let mut expect = 0.0;
        for i in 0..nw {
            let mut best = f64::NEG_INFINITY;
            for k in 0..no {
                let mut s = 0.0;
                for j in 0..d {
                    s += w[i * d + j] * o[k * d + j];
                }
                best = best.max(s);
            }
            expect += best;
        }
        expect /= nw as f64;
        assert!((node_score(&wm, &om).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_sides_are_contract_errors_or_zero() {
        let w = Mat::new(0, 3, vec![]);
        let o = Mat::new(1, 3, unit(3, 0));
        assert!(node_score(&w, &o).is_err());
        // edge score adopts the documented zero convention
        assert_eq!(edge_score(None, Some(&o)), 0.0);
        assert_eq!(edge_score(Some(&o), None), 0.0);
    }

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -0.4, 0.5];
        assert!((global_score(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((global_score(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(global_score(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(global_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = vec![0.2, 0.7, -0.4];
        let b = vec![-0.1, 0.3, 0.9];
        let scaled: Vec<f64> = a.iter().map(|x| 17.5 * x).collect();
        assert!((global_score(&a, &b).unwrap() - global_score(&scaled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn total_score_additivity_and_degenerate_pair() {
        // one node, one word, same unit vector, no relations anywhere
        let v = FrozenVisual {
            nodes: Mat::new(1, 2, unit(2, 0)),
            edges: None,
            embedding: vec![0.5, 0.0, 0.0, 0.0],
        };
        let c = FrozenCaption {
            words: Mat::new(1, 2, unit(2, 0)),
            triplets: None,
            embedding: Some(vec![0.5, 0.0, 0.0, 0.0]),
        };
        let r = total_score(&v, &c, ScoreMode::LocalGlobal).unwrap();
        assert_eq!(r.s_node, 1.0);
        assert_eq!(r.s_rel, 0.0);
        assert_eq!(r.s_global, 1.0);
        assert_eq!(r.s_local, 1.0);
        assert_eq!(r.s_total, 2.0);
    }

    #[test]
    fn report_invariants_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let d = 3;
            let rv = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let v = FrozenVisual {
                nodes: Mat::new(2, d, rv(2 * d, &mut rng)),
                edges: Some(Mat::new(2, d, rv(2 * d, &mut rng))),
                embedding: rv(2 * d, &mut rng),
            };
            let c = FrozenCaption {
                words: Mat::new(3, d, rv(3 * d, &mut rng)),
                triplets: Some(Mat::new(1, d, rv(d, &mut rng))),
                embedding: Some(rv(2 * d, &mut rng)),
            };
            let r = total_score(&v, &c, ScoreMode::LocalGlobal).unwrap();
            assert_eq!(r.s_local, r.s_node + r.s_rel);
            assert_eq!(r.s_total, r.s_local + r.s_global);
            assert!((-1.0..=1.0).contains(&r.s_global));
        }
    }

    #[test]
    fn improving_the_best_match_never_lowers_node_score() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let d = 3;
        let words = Mat::new(2, d, (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut objs: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = node_score(&words, &Mat::new(3, d, objs.clone())).unwrap();
        // push object 0 further along word 0's direction
        for j in 0..d {
            objs[j] += 2.0 * words.row(0)[j];
        }
        let improved = node_score(&words, &Mat::new(3, d, objs)).unwrap();
        assert!(improved >= base);
    }

    #[test]
    fn scores_invariant_to_candidate_order_and_query_order_tolerance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = 4;
        let words: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objs: Vec<f64> = (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Mat::new(3, d, words.clone());
        let o = Mat::new(4, d, objs.clone());
        let base = node_score(&w, &o).unwrap();

        // permute objects (max is exact) and words (mean reorders the sum)
        let operm = [2usize, 0, 3, 1];
        let mut od = Vec::new();
        for &r in &operm {
            od.extend_from_slice(&objs[r * d..(r + 1) * d]);
        }
        let o2 = Mat::new(4, d, od);
        assert_eq!(node_score(&w, &o2).unwrap(), base);

        let wperm = [1usize, 2, 0];
        let mut wd = Vec::new();
        for &r in &wperm {
            wd.extend_from_slice(&words[r * d..(r + 1) * d]);
        }
        let w2 = Mat::new(3, d, wd);
        assert!((node_score(&w2, &o).unwrap() - base).abs() < 1e-12);
    }
}
