use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use embkit::encoder::Encoder;
use embkit::evalsuite::{run_suite, SuiteConfig, TaskList};
use embkit::trainer::Stage;
use embkit::TaskKind;
use serde_json::json;

use crate::encoders::{hashing, load_encoder_model, spawn_external};
use crate::manifest::{manifest_in, RunManifest};
use crate::Outcome;

#[derive(clap::Args, Debug)]
#[group(required = true, multiple = false)]
struct EncoderArgs {
    /// Checkpoint directory or model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Shell command speaking the encoder line protocol.
    #[arg(long)]
    external: Option<String>,
    /// Parameter-free hashing encoder of the given dimension.
    #[arg(long)]
    hashing: Option<usize>,
}

#[derive(clap::Args)]
pub struct Args {
    /// Directory of `<name>.<kind>[.<part>].jsonl` dataset files.
    #[arg(long)]
    tasks: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long)]
    out: PathBuf,
    /// NDCG cutoff for retrieval.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, env = "EMBKIT_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON map of query instructions keyed by task kind or dataset name.
    /// Defaults to the instructions stored with a task-specific checkpoint.
    #[arg(long)]
    instructions: Option<PathBuf>,
}

/// Keys that name a task kind apply to every dataset of that kind; any
/// other key names a single dataset.
fn apply_instructions(cfg: &mut SuiteConfig, map: BTreeMap<String, String>) {
    for (key, ins) in map {
        match key.parse::<TaskKind>() {
            Ok(kind) => {
                cfg.query_instructions.insert(kind, ins);
            }
            Err(_) => {
                cfg.dataset_instructions.insert(key, ins);
            }
        }
    }
}

pub fn run(args: Args) -> Result<Outcome> {
    let tasks = TaskList::discover(&args.tasks)
        .with_context(|| format!("scanning {}", args.tasks.display()))?;
    if tasks.is_empty() {
        bail!("no datasets found in {}", args.tasks.display());
    }
    let mut cfg = SuiteConfig::with_seed(args.seed);
    cfg.k = args.k as usize;

    let mut stored_instructions = None;
    let encoder: Box<dyn Encoder> = match &args.encoder {
        EncoderArgs { model: Some(p), .. } => {
            let (model, train_cfg) = load_encoder_model(p)?;
            if let Some(c) = train_cfg.filter(|c| c.stage == Stage::Taskspecific) {
                stored_instructions = Some(c.instructions);
            }
            Box::new(model)
        }
        EncoderArgs {
            external: Some(cmd),
            ..
        } => Box::new(spawn_external(cmd)?),
        EncoderArgs {
            hashing: Some(d), ..
        } => Box::new(hashing(*d)?),
        _ => unreachable!("clap enforces exactly one encoder"),
    };
    let instructions = match &args.instructions {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => stored_instructions,
    };
    if let Some(map) = instructions {
        apply_instructions(&mut cfg, map);
    }

    let mut inputs = vec![args.tasks.clone()];
    inputs.extend(args.encoder.model.clone());
    inputs.extend(args.instructions.clone());
    let manifest = RunManifest::begin(
        "eval",
        manifest_in(&args.out),
        Some(args.seed),
        json!({
            "encoder": match &args.encoder {
                EncoderArgs { model: Some(p), .. } => json!({ "model": p }),
                EncoderArgs { external: Some(c), .. } => json!({ "external": c }),
                EncoderArgs { hashing: d, .. } => json!({ "hashing": d }),
            },
            "suite": cfg,
        }),
        inputs,
        vec![args.out.clone()],
    )?;
    let report = match run_suite(&tasks, encoder.as_ref(), &cfg, Some(&args.out)) {
        Ok(r) => r,
        Err(e) => return manifest.conclude(Err(e.into())),
    };
    print!("{}", report.table());
    if report.failed > 0 {
        eprintln!("{} of {} dataset(s) failed", report.failed, tasks.len());
        manifest.finish("partial")?;
        return Ok(Outcome::Partial);
    }
    manifest.finish("ok")?;
    Ok(Outcome::Ok)
}
