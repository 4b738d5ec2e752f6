//! Mini-batch training: in-batch negative mining with a hinge triplet loss,
//! Adam updates, running-statistic maintenance, validation tracking, and
//! resumable checkpoints.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, TensorId};

use crate::config::{Mining, ModelConfig, RelDegenerate, TrainConfig};
use crate::data::{PairedDataset, Vocab};
use crate::error::{Error, Result};
use crate::eval::{rank_all, summarize, RecallSummary};
use crate::params::{bind, AdamSnapshot, Checkpoint, ParameterSet};
use crate::pipeline::{encode_corpus, encode_training_batch, score_matrix_tape};
use crate::readout::register_readout;
use crate::textual::register_textual;
use crate::visual::register_visual;

/// Build the full parameter registry (visual encoder, textual encoder,
/// shared readout) with seeded initialization.
pub fn build_parameters(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is reserved for initialization; epochs use streams 1..
    rng.set_stream(0);
    let mut ps = ParameterSet::new();
    register_visual(&mut ps, cfg, &mut rng)?;
    register_textual(&mut ps, cfg, &mut rng)?;
    register_readout(&mut ps, cfg.graph_dim, &mut rng)?;
    Ok(ps)
}

// ── Triplet loss over the in-batch score matrix ─────────────────────────

/// Hinge loss with in-batch negatives:
/// `L = Σ_k [max(0, m − S_kk + S_k,ĵ) + max(0, m − S_kk + S_î,k)]`,
/// where ĵ/î index the mined negative in row/column k (the diagonal is
/// never mined). Requires a square matrix of at least 2×2.
pub fn batch_loss(
    tape: &mut Tape,
    scores: TensorId,
    margin: f64,
    mining: Mining,
) -> Result<TensorId> {
    let shape = tape.shape(scores).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Contract(format!(
            "batch_loss needs a square score matrix, got {shape:?}"
        )));
    }
    let b = shape[0];
    if b < 2 {
        return Err(Error::Contract(
            "batch_loss needs a batch of at least 2 (one negative per pair)".into(),
        ));
    }
    let values = tape.values(scores).to_vec();

    // mined index among j != k; ties break to the lowest index
    let pick = |get: &dyn Fn(usize) -> f64, k: usize| -> usize {
        let mut best = usize::MAX;
        let mut best_v = f64::NAN;
        for j in 0..b {
            if j == k {
                continue;
            }
            let v = get(j);
            let better = match mining {
                Mining::Hardest => best == usize::MAX || v > best_v,
                Mining::LeastMatching => best == usize::MAX || v < best_v,
            };
            if better {
                best = j;
                best_v = v;
            }
        }
        best
    };

    let mut terms = Vec::with_capacity(2 * b);
    for k in 0..b {
        let diag = tape.select(scores, k, k)?;

        let row_neg = pick(&|j| values[k * b + j], k);
        let s_row = tape.select(scores, k, row_neg)?;
        let gap = tape.sub(s_row, diag)?;
        let shifted = tape.add_scalar(gap, margin)?;
        terms.push(tape.relu(shifted)?);

        let col_neg = pick(&|i| values[i * b + k], k);
        let s_col = tape.select(scores, col_neg, k)?;
        let gap = tape.sub(s_col, diag)?;
        let shifted = tape.add_scalar(gap, margin)?;
        terms.push(tape.relu(shifted)?);
    }
    let stacked = tape.stack_scalars(&terms, 2 * b, 1)?;
    tape.sum_all(stacked).map_err(Into::into)
}

// ── Adam ────────────────────────────────────────────────────────────────

/// Standard Adam with bias correction (β₁=0.9, β₂=0.999, ε=1e-8).
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter. A missing or non-finite
    /// gradient is an error naming the parameter.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &HashMap<String, Vec<f64>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let names: Vec<String> = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.clone())
            .collect();
        for name in names {
            let g = grads
                .get(&name)
                .ok_or_else(|| Error::Contract(format!("gradient missing for parameter {name:?}")))?;
            if let Some(&bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient ({bad}) for parameter {name:?}"
                )));
            }
            let param = params.get_mut(&name).unwrap();
            let data = param.tensor.data_mut();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Moments in registry order, for checkpointing.
    pub fn snapshot(&self, params: &ParameterSet) -> AdamSnapshot {
        let mut moments = Vec::new();
        for p in params.iter().filter(|p| p.trainable) {
            let (m, v) = self
                .moments
                .get(&p.name)
                .cloned()
                .unwrap_or_else(|| (vec![0.0; p.tensor.numel()], vec![0.0; p.tensor.numel()]));
            moments.push((p.name.clone(), m, v));
        }
        AdamSnapshot { step: self.step, moments }
    }

    pub fn from_snapshot(learning_rate: f64, snap: &AdamSnapshot) -> Self {
        let mut adam = Adam::new(learning_rate);
        adam.step = snap.step;
        for (name, m, v) in &snap.moments {
            adam.moments.insert(name.clone(), (m.clone(), v.clone()));
        }
        adam
    }
}

// ── Training loop ───────────────────────────────────────────────────────

pub struct TrainData<'a> {
    pub train: &'a PairedDataset,
    pub val: Option<&'a PairedDataset>,
    pub vocab: &'a Vocab,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val: Option<RecallSummary>,
}

pub struct TrainOutcome {
    /// Best-by-validation checkpoint (falls back to the last epoch when no
    /// validation split is given).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Dropout/shuffle randomness for one epoch: one deterministic stream per
/// epoch, so resuming at an epoch boundary replays the identical sequence.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

/// Collect gradients for every trainable parameter after backward.
fn collect_grads(
    tape: &Tape,
    bound: &crate::params::Bound,
    params: &ParameterSet,
) -> Result<HashMap<String, Vec<f64>>> {
    let mut grads = HashMap::new();
    for p in params.iter().filter(|p| p.trainable) {
        let id = bound.get(&p.name);
        let g = tape
            .grad(id)
            .ok_or_else(|| Error::Contract(format!("backward left no gradient for {:?}", p.name)))?;
        grads.insert(p.name.clone(), g.to_vec());
    }
    Ok(grads)
}

// summation follows registry order so runs stay bit-reproducible
fn clip_global_norm(params: &ParameterSet, grads: &mut HashMap<String, Vec<f64>>, max_norm: f64) {
    let mut total = 0.0;
    for p in params.iter().filter(|p| p.trainable) {
        if let Some(g) = grads.get(&p.name) {
            total += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
}

fn update_running_stats(
    params: &mut ParameterSet,
    prefix: &str,
    stats: &Option<(Vec<f64>, Vec<f64>)>,
    momentum: f64,
) -> Result<()> {
    let Some((mean, var)) = stats else { return Ok(()) };
    for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
        let name = format!("{prefix}.{suffix}");
        let mut current = params.values(&name).to_vec();
        for (c, &b) in current.iter_mut().zip(batch) {
            *c = (1.0 - momentum) * *c + momentum * b;
        }
        params.set_values(&name, &current)?;
    }
    Ok(())
}

/// Run the training recipe: seeded shuffles, one caption per image per
/// batch (captions cycle across epochs), full in-batch score matrix, hinge
/// loss with mined negatives, Adam, per-epoch validation recall.
pub fn train(
    data: &TrainData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    if data.train.feat_dim != model_cfg.image_feat_dim {
        return Err(Error::Config(format!(
            "dataset feature width {} != configured image_feat_dim {}",
            data.train.feat_dim, model_cfg.image_feat_dim
        )));
    }
    if data.vocab.len() != model_cfg.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary size {} != configured vocab_size {}",
            data.vocab.len(),
            model_cfg.vocab_size
        )));
    }

    let (mut params, mut adam, start_epoch) = match resume {
        Some(ckpt) => {
            if ckpt.model != *model_cfg {
                return Err(Error::Checkpoint(
                    "checkpoint model configuration differs from the requested one".into(),
                ));
            }
            let fresh = build_parameters(model_cfg, cfg.seed)?;
            fresh.check_shapes_match(&ckpt.params)?;
            let adam = match &ckpt.adam {
                Some(snap) => Adam::from_snapshot(cfg.learning_rate, snap),
                None => {
                    return Err(Error::Checkpoint(
                        "checkpoint has no optimizer state; cannot resume training".into(),
                    ))
                }
            };
            (ckpt.params, adam, ckpt.epoch)
        }
        None => (build_parameters(model_cfg, cfg.seed)?, Adam::new(cfg.learning_rate), 0),
    };

    let n = data.train.len();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut last_epoch_done = start_epoch;

    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            // captions cycle across epochs; skip-pair mode drops pairs whose
            // selected caption parsed to zero triplets
            let batch: Vec<(&crate::data::VisualGraph, &crate::data::TextGraph)> = chunk
                .iter()
                .map(|&i| {
                    let pair = &data.train.pairs[i];
                    let cap = &pair.captions[epoch % pair.captions.len()];
                    (&pair.visual, cap)
                })
                .filter(|(_, cap)| {
                    model_cfg.rel_degenerate != RelDegenerate::SkipPair || !cap.triplets.is_empty()
                })
                .collect();
            if batch.len() < 2 {
                continue;
            }

            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params, true);
            let encoded = encode_training_batch(&mut tape, &bound, &params, model_cfg, &batch, &mut rng)?;
            let (matrix, _) =
                score_matrix_tape(&mut tape, &encoded.visuals, &encoded.captions, model_cfg.score_mode)?;
            let loss = batch_loss(&mut tape, matrix, cfg.margin, cfg.mining)?;

            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                let diag = tape
                    .first_non_finite()
                    .map(|(_, what)| what)
                    .unwrap_or_else(|| "loss".into());
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}; first non-finite tensor: {diag}"
                )));
            }

            tape.backward(loss)?;
            let mut grads = collect_grads(&tape, &bound, &params)?;
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&params, &mut grads, max_norm);
            }
            adam.step(&mut params, &grads)?;

            update_running_stats(&mut params, "visual.bn_node", &encoded.bn_stats.node, model_cfg.bn_momentum)?;
            update_running_stats(&mut params, "visual.bn_edge", &encoded.bn_stats.edge, model_cfg.bn_momentum)?;

            batch_losses.push(loss_value);
        }

        let mean_loss = if batch_losses.is_empty() {
            0.0
        } else {
            batch_losses.iter().sum::<f64>() / batch_losses.len() as f64
        };

        let val_summary = match data.val {
            Some(val) if !val.is_empty() => {
                let corpus = encode_corpus(&params, val, model_cfg)?;
                let (i2t, t2i) = rank_all(&corpus, model_cfg.score_mode)?;
                Some(summarize(&i2t, &t2i)?)
            }
            _ => None,
        };
        last_epoch_done = epoch + 1;
        if let Some(summary) = &val_summary {
            let is_better = best.as_ref().map(|(b, _, _)| summary.r_sum > *b).unwrap_or(true);
            if is_better {
                best = Some((
                    summary.r_sum,
                    epoch + 1,
                    Checkpoint {
                        model: model_cfg.clone(),
                        epoch: epoch + 1,
                        params: params.clone(),
                        adam: Some(adam.snapshot(&params)),
                    },
                ));
            }
        }
        log.push(EpochLog { epoch: epoch + 1, mean_loss, val: val_summary });

        if let (Some(patience), Some((_, best_at, _))) = (cfg.patience, best.as_ref()) {
            if epoch + 1 >= best_at + patience {
                break;
            }
        }
    }

    let last = Checkpoint {
        model: model_cfg.clone(),
        epoch: last_epoch_done,
        params: params.clone(),
        adam: Some(adam.snapshot(&params)),
    };
    let (best_epoch, best_ckpt) = match best {
        Some((_, at, ckpt)) => (Some(at), ckpt),
        None => (None, last.clone()),
    };
    Ok(TrainOutcome { best: best_ckpt, last, log, best_epoch })
}
