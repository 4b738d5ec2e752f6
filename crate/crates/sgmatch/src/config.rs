use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation used inside the graph-network update layers. `Linear`
/// disables the nonlinearity, which some identity-map tests rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GcnActivation {
    #[default]
    Swish,
    Linear,
}

/// How the per-triplet feature is taken from the two LSTM directions.
///
/// `EndpointStates` follows the written formula: forward state at the first
/// word plus backward state at the last word, averaged. `LastStates` is the
/// prose-consistent variant: each direction's final state, averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TripletFeatureMode {
    #[default]
    EndpointStates,
    LastStates,
}

/// Which terms enter the total similarity (and therefore the training loss
/// and ranking). `LocalOnly` exists for the local-vs-combined ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    LocalGlobal,
    LocalOnly,
}

/// In-batch negative selection for the triplet loss: `Hardest` picks the
/// highest-scoring non-matching candidate; `LeastMatching` the lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    #[default]
    Hardest,
    LeastMatching,
}

/// Handling of pairs where the caption parsed to zero triplets: score the
/// relation term as zero, or keep such pairs out of training batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelDegenerate {
    #[default]
    Zero,
    SkipPair,
}

/// Model dimensions and architectural switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Label/word embedding width (d_W).
    pub word_dim: usize,
    /// Precomputed image feature width (d_I).
    pub image_feat_dim: usize,
    /// Fused feature width (d_F).
    pub fused_dim: usize,
    /// Graph feature width and LSTM hidden size (d).
    pub graph_dim: usize,
    /// Object category count (C_o).
    pub n_object_categories: usize,
    /// Predicate category count (C_p).
    pub n_predicate_categories: usize,
    pub vocab_size: usize,
    pub gcn_layers: usize,
    pub gcn_activation: GcnActivation,
    /// Dropout rate on fused visual features and textual graph inputs.
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub triplet_feature: TripletFeatureMode,
    pub score_mode: ScoreMode,
    pub rel_degenerate: RelDegenerate,
}

impl ModelConfig {
    /// Desk-scale dimensions: quick to train on a single core.
    pub fn desk(vocab_size: usize, n_object_categories: usize, n_predicate_categories: usize) -> Self {
        ModelConfig {
            word_dim: 16,
            image_feat_dim: 32,
            fused_dim: 32,
            graph_dim: 24,
            n_object_categories,
            n_predicate_categories,
            vocab_size,
            gcn_layers: 1,
            gcn_activation: GcnActivation::Swish,
            dropout: 0.3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            triplet_feature: TripletFeatureMode::EndpointStates,
            score_mode: ScoreMode::LocalGlobal,
            rel_degenerate: RelDegenerate::Zero,
        }
    }

    /// Full-scale dimensions (d_W=300, d_I=d_F=2048, d=1024).
    pub fn full_scale(vocab_size: usize, n_object_categories: usize, n_predicate_categories: usize) -> Self {
        ModelConfig {
            word_dim: 300,
            image_feat_dim: 2048,
            fused_dim: 2048,
            graph_dim: 1024,
            ..Self::desk(vocab_size, n_object_categories, n_predicate_categories)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("image_feat_dim", self.image_feat_dim),
            ("fused_dim", self.fused_dim),
            ("graph_dim", self.graph_dim),
            ("vocab_size", self.vocab_size),
            ("n_object_categories", self.n_object_categories),
            ("n_predicate_categories", self.n_predicate_categories),
            ("gcn_layers", self.gcn_layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub mining: Mining,
    /// Early stopping: stop after this many epochs without a new best
    /// validation R-Sum. `None` disables.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.35,
            batch_size: 128,
            learning_rate: 3e-4,
            epochs: 30,
            seed: 0,
            grad_clip: None,
            mining: Mining::Hardest,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 (negative mining needs at least one negative), got {}",
                self.batch_size
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}
