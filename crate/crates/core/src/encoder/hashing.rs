use super::tokenize::{surface_tokens, TokenizerConfig};
use super::Encoder;
use crate::datamodel::{EmbeddingMatrix, Side};
use crate::error::{Error, Result};

/// Parameter-free encoder: token counts hashed into `dim` buckets.
///
/// Rows are raw counts (not normalized). Used as a baseline and as the
/// reference stub for the external-encoder protocol.
#[derive(Debug, Clone, Copy)]
pub struct HashingEncoder {
    dim: usize,
    tokenizer: TokenizerConfig,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hashing encoder dim must be >= 1".into()));
        }
        Ok(HashingEncoder {
            dim,
            tokenizer: TokenizerConfig::default(),
        })
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut row = vec![0.0f32; self.dim];
        let toks = surface_tokens(text, self.tokenizer);
        if toks.is_empty() {
            row[0] = 1.0;
        }
        for t in toks {
            let b = super::tokenize::fnv1a64(t.as_bytes()) % self.dim as u64;
            row[b as usize] += 1.0;
        }
        row
    }
}

impl Encoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[String], _side: Side) -> Result<EmbeddingMatrix> {
        let data = texts.iter().flat_map(|t| self.embed(t)).collect();
        EmbeddingMatrix::new(texts.len(), self.dim, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_tokens() {
        let enc = HashingEncoder::new(4).unwrap();
        let row = enc.embed("x x y");
        assert_eq!(row.iter().sum::<f32>(), 3.0);
        assert_eq!(enc.embed(""), vec![1.0, 0.0, 0.0, 0.0]);
    }
}
