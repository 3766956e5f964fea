//! Toolkit for training and evaluating general-purpose text embeddings.
//!
//! * [`curation`] mines text pairs from structured documents and filters them.
//! * [`metrics`] and [`evalsuite`] run the six-task benchmark and build reports.
//! * [`encoder`] and [`trainer`] implement a small hashed encoder and the
//!   three-stage training recipe (masked pre-training, in-batch contrastive
//!   learning, instruction fine-tuning with hard negatives).
//! * [`synth`] generates a seeded synthetic benchmark for desk-scale runs.

pub mod curation;
pub mod datamodel;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod metrics;
pub mod synth;
pub mod trainer;

pub use datamodel::{EmbeddingMatrix, Side, TaskDataset, TaskKind, TextPair};
pub use error::{Error, Result};
