//! Named registry of every model tensor (trainable parameters and
//! normalization buffers) plus the binary checkpoint format.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Tensor, TensorId};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Insertion-ordered registry; enumeration order is the construction order,
/// which makes gradient collection and checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn expect(&self, name: &str) -> &Param {
        self.get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} missing from registry"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i])
    }

    pub fn values(&self, name: &str) -> &[f64] {
        self.expect(name).tensor.data()
    }

    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let param = self
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("parameter {name:?} missing from registry")))?;
        if param.tensor.numel() != values.len() {
            return Err(Error::Contract(format!(
                "parameter {name:?} has {} elements, got {}",
                param.tensor.numel(),
                values.len()
            )));
        }
        param.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Shape-compare against another registry; errors name the first
    /// mismatching tensor.
    pub fn check_shapes_match(&self, other: &ParameterSet) -> Result<()> {
        for p in &self.params {
            match other.get(&p.name) {
                None => {
                    return Err(Error::Checkpoint(format!("tensor {:?} missing", p.name)));
                }
                Some(q) if q.tensor.shape() != p.tensor.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        p.name,
                        q.tensor.shape(),
                        p.tensor.shape()
                    )));
                }
                _ => {}
            }
        }
        if let Some(extra) = other.names().find(|n| self.get(n).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra:?}")));
        }
        Ok(())
    }
}

/// Tape handles for one forward pass, keyed by parameter name.
pub struct Bound {
    ids: HashMap<String, TensorId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound to this tape"))
    }
}

/// Copy every parameter onto a tape as a labeled leaf. Trainable tensors
/// request gradients only when `with_grads` is set (evaluation passes skip
/// the bookkeeping).
pub fn bind(tape: &mut Tape, params: &ParameterSet, with_grads: bool) -> Bound {
    let mut ids = HashMap::with_capacity(params.len());
    for p in params.iter() {
        let mut t = p.tensor.clone();
        t.requires_grad = p.trainable && with_grads;
        t.grad = None;
        ids.insert(p.name.clone(), tape.leaf_labeled(t, p.name.clone()));
    }
    Bound { ids }
}

/// Column selection from an embedding table stored one-row-per-category:
/// looking up id `c` returns row `c`. Out-of-range ids are an error.
pub fn embed_labels(tape: &mut Tape, table: TensorId, ids: &[usize]) -> Result<TensorId> {
    let rows = tape.shape(table)[0];
    if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
        return Err(Error::Contract(format!(
            "label id {bad} outside embedding table with {rows} categories"
        )));
    }
    tape.gather_rows(table, ids).map_err(Into::into)
}

/// Inverted dropout: keep with probability `1 - rate` and scale kept values
/// by `1/(1 - rate)`. A rate of zero is the identity.
pub fn dropout(
    tape: &mut Tape,
    x: TensorId,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let numel = tape.tensor(x).numel();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..numel)
        .map(|_| if rng.random_range(0.0..1.0) < rate { 0.0 } else { keep })
        .collect();
    let shape = tape.shape(x).to_vec();
    let mask = tape.leaf(Tensor::new(shape, mask)?);
    tape.mul(x, mask).map_err(Into::into)
}

/// Uniform init in `[-scale, scale]`.
pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("finite init values")
}

/// Xavier-style uniform init scaled by 1/sqrt(fan_in).
pub fn linear_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform_tensor(rng, vec![fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// magic "SGCK", u32 version, u64 manifest length, manifest JSON, then a
// little-endian float blob. Offsets/lengths are in elements. dtype is f64
// on write; f32 blobs are accepted on read and widened.

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
    kind: String, // "param" | "buffer" | "adam_m" | "adam_v"
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    epoch: usize,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Optimizer state stored alongside parameters so training can resume with
/// an identical trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamSnapshot {
    pub step: u64,
    /// (name, first moment, second moment), in registry order.
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub epoch: usize,
    pub params: ParameterSet,
    pub adam: Option<AdamSnapshot>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<f64> = Vec::new();
    for p in ckpt.params.iter() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            dtype: "f64".into(),
            offset: blob.len(),
            len: p.tensor.numel(),
            kind: if p.trainable { "param".into() } else { "buffer".into() },
        });
        blob.extend_from_slice(p.tensor.data());
    }
    if let Some(adam) = &ckpt.adam {
        for (name, m, v) in &adam.moments {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: vec![m.len()],
                dtype: "f64".into(),
                offset: blob.len(),
                len: m.len(),
                kind: "adam_m".into(),
            });
            blob.extend_from_slice(m);
            entries.push(TensorEntry {
                name: name.clone(),
                shape: vec![v.len()],
                dtype: "f64".into(),
                offset: blob.len(),
                len: v.len(),
                kind: "adam_v".into(),
            });
            blob.extend_from_slice(v);
        }
    }
    let manifest = Manifest {
        version: VERSION,
        model: ckpt.model.clone(),
        epoch: ckpt.epoch,
        adam_step: ckpt.adam.as_ref().map(|a| a.step),
        tensors: entries,
    };
    let manifest_json = serde_json::to_vec(&manifest)?;

    let mut bytes = Vec::with_capacity(16 + manifest_json.len() + blob.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    for v in &blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::util::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let manifest_len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated manifest", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: bad manifest: {e}", path.display())))?;

    let mut blob_bytes = Vec::new();
    file.read_to_end(&mut blob_bytes)?;

    let read_values = |entry: &TensorEntry| -> Result<Vec<f64>> {
        let width = match entry.dtype.as_str() {
            "f64" => 8,
            "f32" => 4,
            other => {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has unsupported dtype {other:?}",
                    entry.name
                )))
            }
        };
        let start = entry.offset * width;
        let end = start + entry.len * width;
        if end > blob_bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated blob reading tensor {:?}",
                path.display(),
                entry.name
            )));
        }
        let raw = &blob_bytes[start..end];
        Ok(match width {
            8 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            _ => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        })
    };

    let mut params = ParameterSet::new();
    type MomentPair = (Option<Vec<f64>>, Option<Vec<f64>>);
    let mut moments: HashMap<String, MomentPair> = HashMap::new();
    let mut moment_order: Vec<String> = Vec::new();
    for entry in &manifest.tensors {
        let expected: usize = entry.shape.iter().product();
        if expected != entry.len {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} shape {:?} disagrees with length {}",
                entry.name, entry.shape, entry.len
            )));
        }
        let values = read_values(entry)?;
        match entry.kind.as_str() {
            "param" | "buffer" => {
                let tensor = Tensor::new(entry.shape.clone(), values).map_err(|e| {
                    Error::Checkpoint(format!("tensor {:?}: {e}", entry.name))
                })?;
                params.insert(entry.name.clone(), tensor, entry.kind == "param")?;
            }
            "adam_m" | "adam_v" => {
                let slot = moments.entry(entry.name.clone()).or_insert_with(|| {
                    moment_order.push(entry.name.clone());
                    (None, None)
                });
                if entry.kind == "adam_m" {
                    slot.0 = Some(values);
                } else {
                    slot.1 = Some(values);
                }
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has unknown kind {other:?}",
                    entry.name
                )))
            }
        }
    }

    let adam = if manifest.adam_step.is_some() || !moment_order.is_empty() {
        let step = manifest.adam_step.ok_or_else(|| {
            Error::Checkpoint("optimizer moments present but adam_step missing".into())
        })?;
        let mut list = Vec::with_capacity(moment_order.len());
        for name in moment_order {
            let (m, v) = moments.remove(&name).unwrap();
            match (m, v) {
                (Some(m), Some(v)) => list.push((name, m, v)),
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state for {name:?} is incomplete"
                    )))
                }
            }
        }
        Some(AdamSnapshot { step, moments: list })
    } else {
        None
    };

    Ok(Checkpoint {
        model: manifest.model,
        epoch: manifest.epoch,
        params,
        adam,
    })
}
