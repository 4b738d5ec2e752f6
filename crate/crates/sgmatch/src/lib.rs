//! Scene-graph matching for image-text retrieval.
//!
//! Images and captions both arrive as scene graphs. A visual encoder fuses
//! label embeddings with precomputed region features and refines them with a
//! graph network; a textual encoder runs bidirectional LSTMs over the
//! sentence and over each relation triplet, then a second graph network over
//! the triplet graph. A shared (Siamese) multi-scale node-attention readout
//! embeds either feature graph into one vector. Pairs are scored by the sum
//! of a local part-matching score and a global cosine score, trained with a
//! hardest-negative triplet loss and evaluated with Recall@K in both
//! retrieval directions.
//!
//! See the crate examples for end-to-end usage; the `sgmatch` binary wraps
//! the same entry points behind `gen`, `train`, `eval`, and `retrieve`
//! subcommands.

pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod gcn;
pub mod lstm;
pub mod params;
pub mod pipeline;
pub mod readout;
pub mod score;
pub mod textual;
pub mod train;
pub mod util;
pub mod visual;

pub use error::{Error, Result};
