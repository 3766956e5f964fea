use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenizerConfig};
use super::{prefix_instruction, Encoder};
use crate::datamodel::{EmbeddingMatrix, Side};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMBM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Shape and seed of a freshly initialized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab: usize,
    pub embed_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            vocab: 32768,
            embed_dim: 64,
            out_dim: 64,
            seed: 0,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

/// Hashed bag-of-tokens encoder: token table, mean pooling, linear
/// projection, L2 normalization.
///
/// Parameters are held as `f64` but every stored value is exactly
/// representable as `f32`, so the `f32` model file round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    shape: ModelShape,
    /// `vocab × embed_dim`, row-major.
    pub(crate) token_table: Vec<f64>,
    /// `embed_dim × out_dim`, row-major.
    pub(crate) projection: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub tokens: Vec<u32>,
    pub pooled: Vec<f64>,
    pub norm: f64,
    /// Unit-length output; `e1` when the projected vector was exactly zero.
    pub output: Vec<f64>,
    pub degenerate: bool,
}

/// Sparse gradient over the token table plus a dense projection gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub table: BTreeMap<u32, Vec<f64>>,
    pub projection: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &EncoderModel) -> Self {
        Gradients {
            table: BTreeMap::new(),
            projection: vec![0.0; model.projection.len()],
        }
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl EncoderModel {
    pub fn new(shape: ModelShape) -> Result<Self> {
        if shape.vocab == 0 || shape.embed_dim == 0 || shape.out_dim == 0 {
            return Err(Error::Config(
                "vocab, embed_dim and out_dim must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
        let bound = 0.5 / shape.embed_dim as f64;
        let token_table = (0..shape.vocab * shape.embed_dim)
            .map(|_| round_f32(rng.gen_range(-bound..bound)))
            .collect();
        let mut projection = vec![0.0; shape.embed_dim * shape.out_dim];
        for j in 0..shape.embed_dim.min(shape.out_dim) {
            projection[j * shape.out_dim + j] = 1.0;
        }
        Ok(EncoderModel {
            shape,
            token_table,
            projection,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn vocab(&self) -> usize {
        self.shape.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.shape.embed_dim
    }

    pub fn out_dim(&self) -> usize {
        self.shape.out_dim
    }

    pub fn seed(&self) -> u64 {
        self.shape.seed
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        self.shape.tokenizer
    }

    pub fn token_table(&self) -> &[f64] {
        &self.token_table
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// Mutable parameter access for numerical gradient checks.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.token_table, &mut self.projection)
    }

    pub fn tokens(&self, text: &str) -> Vec<u32> {
        tokenize(text, self.shape.tokenizer, self.shape.vocab)
    }

    pub fn forward_text(&self, text: &str) -> Forward {
        self.forward_tokens(self.tokens(text))
    }

    pub fn forward_tokens(&self, tokens: Vec<u32>) -> Forward {
        let (din, dout) = (self.shape.embed_dim, self.shape.out_dim);
        let mut pooled = vec![0.0; din];
        for &t in &tokens {
            let row = &self.token_table[t as usize * din..(t as usize + 1) * din];
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let inv = 1.0 / tokens.len().max(1) as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        let mut raw = vec![0.0; dout];
        for (j, h) in pooled.iter().enumerate() {
            if *h == 0.0 {
                continue;
            }
            let prow = &self.projection[j * dout..(j + 1) * dout];
            for (r, w) in raw.iter_mut().zip(prow) {
                *r += h * w;
            }
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let degenerate = norm == 0.0 || !norm.is_finite();
        let output = if degenerate {
            let mut e1 = vec![0.0; dout];
            e1[0] = 1.0;
            e1
        } else {
            raw.iter().map(|v| v / norm).collect()
        };
        Forward {
            tokens,
            pooled,
            norm,
            output,
            degenerate,
        }
    }

    /// Accumulates parameter gradients given `d loss / d output` for one forward pass.
    /// The `e1` fallback has zero gradient.
    pub fn backward(&self, fwd: &Forward, grad_out: &[f64], grads: &mut Gradients) {
        if fwd.degenerate {
            return;
        }
        let (din, dout) = (self.shape.embed_dim, self.shape.out_dim);
        // through u = x/|x|: (I - u u^T) g / |x|
        let ug: f64 = fwd.output.iter().zip(grad_out).map(|(u, g)| u * g).sum();
        let grad_raw: Vec<f64> = fwd
            .output
            .iter()
            .zip(grad_out)
            .map(|(u, g)| (g - u * ug) / fwd.norm)
            .collect();
        let mut grad_pooled = vec![0.0; din];
        let rows = self
            .projection
            .chunks_exact(dout)
            .zip(grads.projection.chunks_exact_mut(dout));
        for (((prow, grow), &h), gp) in rows.zip(&fwd.pooled).zip(&mut grad_pooled) {
            let mut acc = 0.0;
            for ((p, g), r) in prow.iter().zip(grow.iter_mut()).zip(&grad_raw) {
                *g += h * r;
                acc += p * r;
            }
            *gp = acc;
        }
        let inv = 1.0 / fwd.tokens.len() as f64;
        for &t in &fwd.tokens {
            let g = grads.table.entry(t).or_insert_with(|| vec![0.0; din]);
            for (a, b) in g.iter_mut().zip(&grad_pooled) {
                *a += b * inv;
            }
        }
    }

    /// Plain SGD step. Updated values are rounded to `f32` precision.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        let din = self.shape.embed_dim;
        for (&t, g) in &grads.table {
            let row = &mut self.token_table[t as usize * din..(t as usize + 1) * din];
            for (p, gi) in row.iter_mut().zip(g) {
                *p = round_f32(*p - lr * gi);
            }
        }
        for (p, g) in self.projection.iter_mut().zip(&grads.projection) {
            *p = round_f32(*p - lr * g);
        }
    }

    /// Encodes texts into unit rows; also returns how many rows fell back to `e1`.
    pub fn encode_counted(
        &self,
        texts: &[String],
        side: Side,
        instruction: Option<&str>,
    ) -> Result<(EmbeddingMatrix, usize)> {
        let rows: Vec<Forward> = texts
            .par_iter()
            .map(|t| match (side, instruction) {
                (Side::Query, Some(ins)) => self.forward_text(&prefix_instruction(ins, t)),
                _ => self.forward_text(t),
            })
            .collect();
        let fallbacks = rows.iter().filter(|f| f.degenerate).count();
        if fallbacks > 0 {
            log::warn!("{fallbacks} text(s) encoded to a zero vector; substituted e1");
        }
        let data = rows
            .iter()
            .flat_map(|f| f.output.iter().map(|v| *v as f32))
            .collect();
        let m = EmbeddingMatrix::from_unit_rows(texts.len(), self.shape.out_dim, data)?;
        Ok((m, fallbacks))
    }

    pub fn encode(
        &self,
        texts: &[String],
        side: Side,
        instruction: Option<&str>,
    ) -> Result<EmbeddingMatrix> {
        Ok(self.encode_counted(texts, side, instruction)?.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.shape;
        let mut buf = Vec::with_capacity(
            HEADER_LEN + 4 * (self.token_table.len() + self.projection.len()) + 4,
        );
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for v in [s.vocab, s.embed_dim, s.out_dim] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&s.seed.to_le_bytes());
        for v in self.token_table.iter().chain(&self.projection) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&s.tokenizer.to_flags().to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("model file shorter than header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected EMBM".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let version = word(4) as u32;
        if version != VERSION {
            return Err(Error::Format(format!(
                "model file version {version}, this build reads version {VERSION}"
            )));
        }
        let (vocab, din, dout) = (word(8), word(12), word(16));
        let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        if vocab == 0 || din == 0 || dout == 0 {
            return Err(Error::Format("model dimensions must be >= 1".into()));
        }
        let n_table = vocab * din;
        let n_proj = din * dout;
        let expected = HEADER_LEN + 4 * (n_table + n_proj) + 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "model file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut vals = bytes[HEADER_LEN..expected - 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let token_table: Vec<f64> = vals.by_ref().take(n_table).collect();
        let projection: Vec<f64> = vals.collect();
        if token_table
            .iter()
            .chain(&projection)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Format(
                "model file contains non-finite parameters".into(),
            ));
        }
        let flags = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        Ok(EncoderModel {
            shape: ModelShape {
                vocab,
                embed_dim: din,
                out_dim: dout,
                seed,
                tokenizer: TokenizerConfig::from_flags(flags),
            },
            token_table,
            projection,
        })
    }
}

pub fn save_model(model: &EncoderModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EncoderModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EncoderModel::from_bytes(&bytes)
}

impl Encoder for EncoderModel {
    fn dim(&self) -> usize {
        self.shape.out_dim
    }

    fn encode(&self, texts: &[String], side: Side) -> Result<EmbeddingMatrix> {
        EncoderModel::encode(self, texts, side, None)
    }
}
