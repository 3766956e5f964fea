use std::path::PathBuf;

use anyhow::Result;
use embkit::synth::{write_synth, SynthConfig};
use serde_json::json;

use crate::manifest::{manifest_in, RunManifest};
use crate::Outcome;

#[derive(clap::Args)]
pub struct Args {
    /// Output directory; datasets go to `tasks/`, training data to `train/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "EMBKIT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().topics)]
    topics: usize,
    /// Base item count per dataset.
    #[arg(long, default_value_t = SynthConfig::default().size)]
    size: usize,
}

pub fn run(args: Args) -> Result<Outcome> {
    let cfg = SynthConfig {
        seed: args.seed,
        topics: args.topics,
        size: args.size,
    };
    cfg.validate()?;
    let manifest = RunManifest::begin(
        "synth",
        manifest_in(&args.out),
        Some(args.seed),
        json!(cfg),
        Vec::new(),
        vec![args.out.join("tasks"), args.out.join("train")],
    )?;
    let result = write_synth(&cfg, &args.out)
        .map(|_| Outcome::Ok)
        .map_err(Into::into);
    manifest.conclude(result)
}
