//! Shared domain types: training pairs, embedding matrices, task datasets
//! and evaluation reports, together with their on-disk formats.

mod dataset;
mod embedding;
mod jsonl;
mod report;

use serde::{Deserialize, Serialize};

pub use dataset::{
    load_task_dataset, write_task_dataset, ClassificationSplit, PairClassificationItem,
    RerankingItem, RetrievalSet, StsItem, TaskDataset, TaskKind, TaskPayload,
};
pub use embedding::{
    dot, normalize_rows, read_embedding_matrix, write_embedding_matrix, EmbeddingMatrix,
};
pub use jsonl::{read_jsonl, write_jsonl};
pub use report::{CategoryRow, DatasetResult, EvaluationReport};

use crate::error::{Error, Result};

/// One training instance: a query-side text paired with a passage-side text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPair {
    pub query: String,
    pub passage: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl TextPair {
    pub fn new(
        query: impl Into<String>,
        passage: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        TextPair {
            query: query.into(),
            passage: passage.into(),
            source: source.into(),
            score: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::Validation("text pair has empty query".into()));
        }
        if self.passage.trim().is_empty() {
            return Err(Error::Validation("text pair has empty passage".into()));
        }
        if let Some(s) = self.score {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!(
                    "text pair score {s} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Which tower of a dual encoder a text is fed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Query,
    Passage,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Query => "query",
            Side::Passage => "passage",
        }
    }
}
