use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::{Relation, TextGraph, VisualGraph};
use crate::error::{Error, Result};

/// Which slice of the corpus a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One image with its visual graph and parsed captions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPair {
    pub id: String,
    pub visual: VisualGraph,
    pub captions: Vec<TextGraph>,
}

/// Immutable-after-load collection of (image, captions) pairs sharing one
/// vocabulary; safe for concurrent read.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<RecordPair>,
    pub split: Split,
    pub feat_dim: usize,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_captions(&self) -> usize {
        self.pairs.iter().map(|p| p.captions.len()).sum()
    }
}

// ── On-disk record layout (one JSON object per line) ───────────────────

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    tokens: Vec<usize>,
    triplets: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    objects: Vec<usize>,
    boxes: Vec<[f64; 4]>,
    relations: Vec<[usize; 3]>,
    node_feats: Vec<f64>,
    edge_feats: Vec<f64>,
    captions: Vec<CaptionRecord>,
}

/// Load a line-oriented dataset file and validate every record against the
/// vocabulary's category counts. Errors carry the 1-based line number.
pub fn load_dataset(path: &Path, vocab: &Vocab, split: Split) -> Result<PairedDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    let mut feat_dim: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|e| Error::data_at(lineno, format!("malformed record: {e}")))?;
        let pair = decode_record(record, vocab, feat_dim).map_err(|e| match e {
            Error::Data { msg, .. } => Error::data_at(lineno, msg),
            other => other,
        })?;
        if feat_dim.is_none() {
            feat_dim = Some(pair.visual.feat_dim);
        }
        pairs.push(pair);
    }

    if pairs.is_empty() {
        return Err(Error::data(format!("no records in {}", path.display())));
    }
    Ok(PairedDataset {
        pairs,
        split,
        feat_dim: feat_dim.unwrap(),
    })
}

fn decode_record(record: Record, vocab: &Vocab, feat_dim: Option<usize>) -> Result<RecordPair> {
    let n = record.objects.len();
    if n == 0 {
        return Err(Error::data(format!("record {:?} has no objects", record.id)));
    }
    let dim = match feat_dim {
        Some(d) => d,
        None => {
            if !record.node_feats.len().is_multiple_of(n) {
                return Err(Error::data(format!(
                    "node_feats length {} not divisible by object count {n}",
                    record.node_feats.len()
                )));
            }
            record.node_feats.len() / n
        }
    };
    let visual = VisualGraph {
        objects: record.objects,
        boxes: record.boxes,
        relations: record
            .relations
            .iter()
            .map(|&[s, p, o]| Relation { subject: s, predicate: p, object: o })
            .collect(),
        node_feats: record.node_feats,
        edge_feats: record.edge_feats,
        feat_dim: dim,
    };
    visual.validate(vocab.n_object_categories, vocab.n_predicate_categories)?;

    if record.captions.is_empty() {
        return Err(Error::data(format!("record {:?} has no captions", record.id)));
    }
    let captions: Vec<TextGraph> = record
        .captions
        .into_iter()
        .map(|c| TextGraph { tokens: c.tokens, triplets: c.triplets })
        .collect();
    for c in &captions {
        c.validate(vocab.len())?;
    }

    Ok(RecordPair { id: record.id, visual, captions })
}

/// Serialize a dataset to the line-oriented format. Load→save→load is a
/// fixed point (serde preserves f64 round trips exactly).
pub fn save_dataset(dataset: &PairedDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for pair in &dataset.pairs {
        let record = Record {
            id: pair.id.clone(),
            objects: pair.visual.objects.clone(),
            boxes: pair.visual.boxes.clone(),
            relations: pair
                .visual
                .relations
                .iter()
                .map(|r| [r.subject, r.predicate, r.object])
                .collect(),
            node_feats: pair.visual.node_feats.clone(),
            edge_feats: pair.visual.edge_feats.clone(),
            captions: pair
                .captions
                .iter()
                .map(|c| CaptionRecord { tokens: c.tokens.clone(), triplets: c.triplets.clone() })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    crate::util::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocab;

    fn tiny_vocab() -> Vocab {
        let caps = vec![vec!["man".to_string(), "hat".to_string(), "wears".to_string()]];
        build_vocab(&caps, 1, 4, 3).unwrap()
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_reports_no_records() {
        let f = write_lines(&[]);
        let err = load_dataset(f.path(), &tiny_vocab(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
    }

    #[test]
    fn malformed_record_names_line() {
        let f = write_lines(&["{not json"]);
        let err = load_dataset(f.path(), &tiny_vocab(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn dangling_relation_index_is_rejected() {
        // one object but relation references index 1 == N_o
        let line = r#"{"id":"g0","objects":[0],"boxes":[[0,0,1,1]],"relations":[[0,0,1]],"node_feats":[1.0,2.0],"edge_feats":[3.0,4.0],"captions":[{"tokens":[0],"triplets":[]}]}"#;
        let f = write_lines(&[line]);
        let err = load_dataset(f.path(), &tiny_vocab(), Split::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("outside"), "{msg}");
    }

    #[test]
    fn roundtrip_is_a_fixed_point() {
        let line = r#"{"id":"g0","objects":[0,2],"boxes":[[0,0,0.5,0.5],[0.25,0.25,1,1]],"relations":[[0,1,1]],"node_feats":[0.1,-0.2,0.3,0.7],"edge_feats":[0.5,0.25],"captions":[{"tokens":[0,1,2],"triplets":[[0,2,1]]}]}"#;
        let f = write_lines(&[line]);
        let vocab = tiny_vocab();
        let first = load_dataset(f.path(), &vocab, Split::Val).unwrap();

        let saved = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&first, saved.path()).unwrap();
        let second = load_dataset(saved.path(), &vocab, Split::Val).unwrap();
        assert_eq!(first, second);

        let saved_again = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&second, saved_again.path()).unwrap();
        assert_eq!(
            std::fs::read(saved.path()).unwrap(),
            std::fs::read(saved_again.path()).unwrap()
        );
    }
}
