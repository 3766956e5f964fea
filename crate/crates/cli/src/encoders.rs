use std::path::Path;

use anyhow::{Context, Result};
use embkit::encoder::{EncoderModel, ExternalConfig, ExternalEncoder, HashingEncoder};
use embkit::trainer::{load_checkpoint, TrainConfig};

pub fn load_encoder_model(path: &Path) -> Result<(EncoderModel, Option<TrainConfig>)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn spawn_external(command: &str) -> Result<ExternalEncoder> {
    ExternalEncoder::spawn(ExternalConfig::new(command))
        .with_context(|| format!("starting external encoder '{command}'"))
}

pub fn hashing(dim: usize) -> Result<HashingEncoder> {
    Ok(HashingEncoder::new(dim)?)
}
