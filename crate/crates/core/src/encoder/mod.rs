//! Text encoders: the trainable hashed bag-of-tokens model, a parameter-free
//! hashing encoder, and a client for encoders running in a child process.

pub mod external;
mod hashing;
mod model;
pub mod tokenize;

pub use external::{ExternalConfig, ExternalEncoder};
pub use hashing::HashingEncoder;
pub use model::{load_model, save_model, EncoderModel, Forward, Gradients, ModelShape};
pub use tokenize::{tokenize, TokenizerConfig, RESERVED_BUCKET};

use crate::datamodel::{EmbeddingMatrix, Side};
use crate::error::Result;

/// Anything that maps texts to one embedding row each.
///
/// Implementations must be deterministic: the same text and side always
/// produce the same row.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, texts: &[String], side: Side) -> Result<EmbeddingMatrix>;
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn encode(&self, texts: &[String], side: Side) -> Result<EmbeddingMatrix> {
        (**self).encode(texts, side)
    }
}

/// Instruction prefix form: `instruction + " " + query`. An empty instruction
/// leaves the query untouched.
pub fn prefix_instruction(instruction: &str, query: &str) -> String {
    if instruction.is_empty() {
        query.to_string()
    } else {
        format!("{instruction} {query}")
    }
}
