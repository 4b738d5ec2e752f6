//! Corpus ranking and Recall@K for both retrieval directions.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScoreMode;
use crate::error::{Error, Result};
use crate::pipeline::FrozenCorpus;
use crate::score::{total_score, Mat, SimilarityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::ImageToText => write!(f, "image_to_text"),
            Direction::TextToImage => write!(f, "text_to_image"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image_to_text" | "i2t" => Ok(Direction::ImageToText),
            "text_to_image" | "t2i" => Ok(Direction::TextToImage),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Ranking outcome for one direction. `scores` is always the full
/// images × captions matrix; `best_rank[q]` is the 1-based rank of the
/// best-ranked ground-truth answer for query `q`.
#[derive(Debug, Clone)]
pub struct RankingResult {
    pub direction: Direction,
    pub scores: Mat,
    pub best_rank: Vec<usize>,
    pub n_candidates: usize,
}

/// Descending order with ties broken to the lower index.
pub fn ranked_candidates(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn best_rank(scores: &[f64], truth: &[usize]) -> usize {
    let order = ranked_candidates(scores);
    order
        .iter()
        .position(|i| truth.contains(i))
        .map(|p| p + 1)
        .expect("every query has at least one ground-truth answer")
}

/// Dense total-score matrix (images × captions) against frozen encodings.
pub fn score_matrix(corpus: &FrozenCorpus, mode: ScoreMode) -> Result<Mat> {
    let n_cap = corpus.captions.len();
    let rows: Vec<Vec<f64>> = corpus
        .images
        .par_iter()
        .map(|img| {
            corpus
                .captions
                .iter()
                .map(|cap| total_score(img, cap, mode).map(|r| r.s_total))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(corpus.images.len() * n_cap);
    for row in rows {
        data.extend(row);
    }
    Ok(Mat::new(corpus.images.len(), n_cap, data))
}

/// Rank every query in both directions. For image→text queries a hit is any
/// of the image's captions.
pub fn rank_all(corpus: &FrozenCorpus, mode: ScoreMode) -> Result<(RankingResult, RankingResult)> {
    if corpus.images.is_empty() || corpus.captions.is_empty() {
        return Err(Error::data("cannot rank an empty corpus"));
    }
    let scores = score_matrix(corpus, mode)?;
    rank_from_matrix(corpus, scores)
}

/// Ranking given a precomputed score matrix (rows = images).
pub fn rank_from_matrix(
    corpus: &FrozenCorpus,
    scores: Mat,
) -> Result<(RankingResult, RankingResult)> {
    let n_img = corpus.captions_of.len();
    let n_cap = corpus.caption_owner.len();

    let i2t_ranks: Vec<usize> = (0..n_img)
        .map(|i| best_rank(scores.row(i), &corpus.captions_of[i]))
        .collect();

    let t2i_ranks: Vec<usize> = (0..n_cap)
        .map(|j| {
            let column: Vec<f64> = (0..n_img).map(|i| scores.row(i)[j]).collect();
            best_rank(&column, &[corpus.caption_owner[j]])
        })
        .collect();

    Ok((
        RankingResult {
            direction: Direction::ImageToText,
            scores: scores.clone(),
            best_rank: i2t_ranks,
            n_candidates: n_cap,
        },
        RankingResult {
            direction: Direction::TextToImage,
            scores,
            best_rank: t2i_ranks,
            n_candidates: n_img,
        },
    ))
}

/// Fraction of queries whose best ground-truth answer ranks in the top `k`.
/// `k` larger than the candidate pool clamps to the pool size.
pub fn recall_at_k(result: &RankingResult, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("recall_at_k requires k >= 1".into()));
    }
    let k = k.min(result.n_candidates);
    let hits = result.best_rank.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / result.best_rank.len() as f64)
}

/// The three standard recall cutoffs per direction, as fractions, plus
/// their sum over both directions (0..=6).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub ks: [usize; 3],
    pub i2t: [f64; 3],
    pub t2i: [f64; 3],
    pub r_sum: f64,
}

pub fn summarize(i2t: &RankingResult, t2i: &RankingResult) -> Result<RecallSummary> {
    let ks = [1usize, 5, 10];
    let mut s = RecallSummary { ks, i2t: [0.0; 3], t2i: [0.0; 3], r_sum: 0.0 };
    for (n, &k) in ks.iter().enumerate() {
        s.i2t[n] = recall_at_k(i2t, k)?;
        s.t2i[n] = recall_at_k(t2i, k)?;
    }
    s.r_sum = s.i2t.iter().sum::<f64>() + s.t2i.iter().sum::<f64>();
    Ok(s)
}

// ── Report emission ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub direction: String,
    /// `None` for aggregate rows such as r_sum.
    pub k: Option<usize>,
    pub value: f64,
}

/// Per-direction recall table plus R-Sum rows (per direction and combined).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

pub fn report(i2t: &RankingResult, t2i: &RankingResult, ks: &[usize]) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    let mut sums = [0.0f64; 2];
    for (d, r) in [(0usize, i2t), (1, t2i)] {
        for &k in ks {
            let v = recall_at_k(r, k)?;
            sums[d] += v;
            rows.push(MetricRow {
                metric: "recall".into(),
                direction: r.direction.to_string(),
                k: Some(k),
                value: v,
            });
        }
    }
    rows.push(MetricRow {
        metric: "r_sum".into(),
        direction: Direction::ImageToText.to_string(),
        k: None,
        value: sums[0],
    });
    rows.push(MetricRow {
        metric: "r_sum".into(),
        direction: Direction::TextToImage.to_string(),
        k: None,
        value: sums[1],
    });
    rows.push(MetricRow {
        metric: "r_sum".into(),
        direction: "combined".into(),
        k: None,
        value: sums[0] + sums[1],
    });
    Ok(MetricsReport { rows })
}

impl MetricsReport {
    /// One metric per line: `metric<TAB>direction<TAB>k<TAB>value`, with `-`
    /// for aggregate rows. Values are fractions.
    pub fn to_machine(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let k = row.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{}\t{}\t{}\t{}\n", row.metric, row.direction, k, row.value));
        }
        out
    }

    pub fn parse_machine(text: &str) -> Result<MetricsReport> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::data_at(lineno + 1, format!("expected 4 fields, got {}", parts.len())));
            }
            let k = match parts[2] {
                "-" => None,
                other => Some(other.parse::<usize>().map_err(|e| {
                    Error::data_at(lineno + 1, format!("bad k {other:?}: {e}"))
                })?),
            };
            let value: f64 = parts[3]
                .parse()
                .map_err(|e| Error::data_at(lineno + 1, format!("bad value {:?}: {e}", parts[3])))?;
            rows.push(MetricRow {
                metric: parts[0].to_string(),
                direction: parts[1].to_string(),
                k,
                value,
            });
        }
        Ok(MetricsReport { rows })
    }

    /// Human-readable table in percent, Table-style layout.
    pub fn to_table(&self) -> String {
        let find = |metric: &str, direction: &str, k: Option<usize>| -> Option<f64> {
            self.rows
                .iter()
                .find(|r| r.metric == metric && r.direction == direction && r.k == k)
                .map(|r| r.value)
        };
        let mut out = String::new();
        out.push_str("direction        R@1     R@5     R@10    R-Sum\n");
        for dir in ["image_to_text", "text_to_image"] {
            let r1 = find("recall", dir, Some(1)).unwrap_or(f64::NAN) * 100.0;
            let r5 = find("recall", dir, Some(5)).unwrap_or(f64::NAN) * 100.0;
            let r10 = find("recall", dir, Some(10)).unwrap_or(f64::NAN) * 100.0;
            let rsum = find("r_sum", dir, None).unwrap_or(f64::NAN) * 100.0;
            out.push_str(&format!("{dir:<16} {r1:<7.1} {r5:<7.1} {r10:<7.1} {rsum:.1}\n"));
        }
        if let Some(total) = find("r_sum", "combined", None) {
            out.push_str(&format!("combined R-Sum: {:.1}\n", total * 100.0));
        }
        out
    }
}

/// Ground-truth pair score breakdowns, for the debugging dump.
pub fn ground_truth_reports(
    corpus: &FrozenCorpus,
    mode: ScoreMode,
) -> Result<Vec<(String, String, SimilarityReport)>> {
    let mut out = Vec::new();
    for (i, img) in corpus.images.iter().enumerate() {
        for &j in &corpus.captions_of[i] {
            let r = total_score(img, &corpus.captions[j], mode)?;
            out.push((corpus.image_ids[i].clone(), corpus.caption_ids[j].clone(), r));
        }
    }
    Ok(out)
}
