use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{EncoderModel, Gradients, RESERVED_BUCKET};
use crate::error::{Error, Result};

/// Linear decoder from the sentence embedding to token-bucket logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeDecoder {
    vocab: usize,
    dim: usize,
    /// `vocab × dim`, row-major.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MaeDecoder {
    pub fn new(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_6500);
        let bound = 1.0 / (dim as f64).sqrt();
        MaeDecoder {
            vocab,
            dim,
            weights: (0..vocab * dim)
                .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
                .collect(),
            bias: vec![0.0; vocab],
        }
    }

    pub fn for_model(model: &EncoderModel, seed: u64) -> Self {
        MaeDecoder::new(model.vocab(), model.out_dim(), seed)
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    fn zeros(&self) -> DecoderGradients {
        DecoderGradients {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn log_softmax(&self, e: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = (0..self.vocab)
            .map(|v| {
                let row = &self.weights[v * self.dim..(v + 1) * self.dim];
                self.bias[v] + row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter_mut().for_each(|l| *l -= lse);
        logits
    }

    fn apply_sgd(&mut self, g: &DecoderGradients, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            *w = (*w - lr * gw) as f32 as f64;
        }
        for (b, gb) in self.bias.iter_mut().zip(&g.bias) {
            *b = (*b - lr * gb) as f32 as f64;
        }
    }
}

/// A tokenized text with the positions that will be replaced by the mask bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedText {
    pub tokens: Vec<u32>,
    pub masked: Vec<usize>,
}

impl MaskedText {
    /// Tokens as seen by the encoder: masked positions hold the reserved bucket.
    pub fn polluted(&self) -> Vec<u32> {
        let mut t = self.tokens.clone();
        for &i in &self.masked {
            t[i] = RESERVED_BUCKET;
        }
        t
    }
}

/// Picks `ceil(ratio * len)` distinct positions (at least one). Returns
/// `None` for texts shorter than two tokens.
pub fn mask_tokens(tokens: Vec<u32>, ratio: f64, rng: &mut ChaCha8Rng) -> Option<MaskedText> {
    if tokens.len() < 2 {
        return None;
    }
    let n = ((ratio * tokens.len() as f64).ceil() as usize).clamp(1, tokens.len());
    let mut idx: Vec<usize> = (0..tokens.len()).collect();
    idx.shuffle(rng);
    let mut masked = idx[..n].to_vec();
    masked.sort_unstable();
    Some(MaskedText { tokens, masked })
}

/// Mean cross-entropy of the original tokens at all masked positions,
/// predicted from the embedding of the polluted text, plus gradients.
pub fn mae_loss_and_grads(
    model: &EncoderModel,
    decoder: &MaeDecoder,
    batch: &[MaskedText],
) -> Result<(f64, Gradients, DecoderGradients)> {
    if decoder.vocab != model.vocab() || decoder.dim != model.out_dim() {
        return Err(Error::DimMismatch {
            expected: model.out_dim(),
            actual: decoder.dim,
        });
    }
    let total: usize = batch.iter().map(|m| m.masked.len()).sum();
    let mut grads = Gradients::zeros(model);
    let mut dgrads = decoder.zeros();
    if total == 0 {
        return Ok((0.0, grads, dgrads));
    }
    let scale = 1.0 / total as f64;
    let per_text: Vec<_> = batch
        .par_iter()
        .map(|m| {
            let fwd = model.forward_tokens(m.polluted());
            let logp = decoder.log_softmax(&fwd.output);
            let loss: f64 = m.masked.iter().map(|&i| -logp[m.tokens[i] as usize]).sum();
            // d loss / d logit_v = scale * (count * softmax_v - #targets equal to v)
            let count = m.masked.len() as f64;
            let mut dlogits: Vec<f64> = logp.iter().map(|l| scale * count * l.exp()).collect();
            for &i in &m.masked {
                dlogits[m.tokens[i] as usize] -= scale;
            }
            (fwd, loss, dlogits)
        })
        .collect();
    let mut loss = 0.0;
    let d = decoder.dim;
    for (fwd, l, dlogits) in &per_text {
        loss += l;
        let mut grad_e = vec![0.0; d];
        for (v, g) in dlogits.iter().enumerate() {
            dgrads.bias[v] += g;
            let row = &decoder.weights[v * d..(v + 1) * d];
            let grow = &mut dgrads.weights[v * d..(v + 1) * d];
            for k in 0..d {
                grow[k] += g * fwd.output[k];
                grad_e[k] += g * row[k];
            }
        }
        model.backward(fwd, &grad_e, &mut grads);
    }
    Ok((loss * scale, grads, dgrads))
}

/// Outcome of one masked pre-training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeStep {
    pub loss: f64,
    /// Texts skipped for having fewer than two tokens.
    pub skipped: usize,
}

/// Masks, computes the loss, and applies one SGD step to encoder and decoder.
pub fn mae_pretrain_step(
    model: &mut EncoderModel,
    decoder: &mut MaeDecoder,
    texts: &[String],
    mask_ratio: f64,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaeStep> {
    if !(mask_ratio > 0.0 && mask_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "mask_ratio {mask_ratio} must be in (0, 1]"
        )));
    }
    let mut batch = Vec::with_capacity(texts.len());
    let mut skipped = 0;
    for t in texts {
        match mask_tokens(model.tokens(t), mask_ratio, rng) {
            Some(m) => batch.push(m),
            None => skipped += 1,
        }
    }
    let (loss, grads, dgrads) = mae_loss_and_grads(model, decoder, &batch)?;
    model.apply_sgd(&grads, learning_rate);
    decoder.apply_sgd(&dgrads, learning_rate);
    Ok(MaeStep { loss, skipped })
}
