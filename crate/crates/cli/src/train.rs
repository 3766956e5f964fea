use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use embkit::encoder::{EncoderModel, ModelShape};
use embkit::synth::{read_training_data, TrainingData};
use embkit::trainer::{
    pretrain, run_recipe, save_checkpoint, train_general, train_taskspecific, RecipeConfig,
    RecipeData, Stage, TrainConfig, STAGE_DIRS,
};
use serde_json::json;

use crate::encoders::load_encoder_model;
use crate::manifest::{manifest_in, RunManifest};
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StageArg {
    Pretrain,
    General,
    Taskspecific,
    All,
}

fn rank_window(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad LO '{lo}'"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad HI '{hi}'"))?;
    if lo == 0 || lo > hi {
        return Err(format!("need 1 <= LO <= HI, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be > 0"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be >= 0"))
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Directory with corpus.jsonl, unlabeled.jsonl, labeled.jsonl, pool.jsonl
    /// and instructions.json (only the files the stage needs).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to start from; a fresh model is initialized otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "EMBKIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Overrides the per-stage default.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides the per-stage default.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Overrides the per-stage default.
    #[arg(long, value_parser = non_negative)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = positive)]
    temperature: Option<f64>,
    #[arg(long, value_parser = open_unit)]
    mask_ratio: Option<f64>,
    /// Hard-negative rank window, e.g. `2,100`.
    #[arg(long, value_parser = rank_window)]
    rank_window: Option<(usize, usize)>,
    /// Re-mine hard negatives every N steps.
    #[arg(long)]
    remine_every: Option<usize>,
    /// JSON map from task tag to instruction; defaults to `instructions.json` in --data.
    #[arg(long)]
    instructions: Option<PathBuf>,
    /// Vocabulary size of a fresh model.
    #[arg(long, default_value_t = 4096)]
    vocab: usize,
    /// Token-embedding width of a fresh model.
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Output width of a fresh model.
    #[arg(long, default_value_t = 32)]
    out_dim: usize,
}

impl Args {
    fn config(&self, stage: Stage, instructions: &BTreeMap<String, String>) -> TrainConfig {
        let mut c = TrainConfig::new(stage);
        c.seed = self.seed;
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.mask_ratio {
            c.mask_ratio = v;
        }
        if let Some(v) = self.rank_window {
            c.hard_negative_rank_window = v;
        }
        c.remine_every = self.remine_every;
        if stage == Stage::Taskspecific {
            c.instructions = instructions.clone();
        }
        c
    }
}

fn load_instructions(args: &Args, data: &TrainingData) -> Result<BTreeMap<String, String>> {
    match &args.instructions {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(data.instructions.clone()),
    }
}

pub fn run(args: Args) -> Result<Outcome> {
    let data = read_training_data(&args.data)
        .with_context(|| format!("reading training data from {}", args.data.display()))?;
    let instructions = load_instructions(&args, &data)?;
    let mut model = match &args.init {
        Some(p) => load_encoder_model(p)?.0,
        None => EncoderModel::new(ModelShape {
            vocab: args.vocab,
            embed_dim: args.embed_dim,
            out_dim: args.out_dim,
            seed: args.seed,
            ..ModelShape::default()
        })?,
    };
    let stages: Vec<Stage> = match args.stage {
        StageArg::Pretrain => vec![Stage::Pretrain],
        StageArg::General => vec![Stage::General],
        StageArg::Taskspecific => vec![Stage::Taskspecific],
        StageArg::All => vec![Stage::Pretrain, Stage::General, Stage::Taskspecific],
    };
    let configs: Vec<TrainConfig> = stages
        .iter()
        .map(|s| args.config(*s, &instructions))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    if stages.contains(&Stage::Taskspecific) {
        if let Some(p) = data
            .labeled
            .iter()
            .find(|p| !instructions.contains_key(&p.task))
        {
            bail!(
                "no instruction for task '{}'; provide instructions.json in --data or --instructions",
                p.task
            );
        }
    }

    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.init.clone());
    let outputs = if args.stage == StageArg::All {
        STAGE_DIRS.iter().map(|d| args.out.join(d)).collect()
    } else {
        vec![args.out.clone()]
    };
    let manifest = RunManifest::begin(
        "train",
        manifest_in(&args.out),
        Some(args.seed),
        json!({
            "stage": format!("{:?}", args.stage).to_lowercase(),
            "model": model.shape(),
            "configs": configs,
        }),
        inputs,
        outputs,
    )?;

    let result = (|| -> Result<Outcome> {
        match args.stage {
            StageArg::All => {
                let recipe = RecipeConfig {
                    pretrain: configs[0].clone(),
                    general: configs[1].clone(),
                    finetune: configs[2].clone(),
                };
                let d = RecipeData {
                    corpus: &data.corpus,
                    unlabeled: &data.unlabeled,
                    labeled: &data.labeled,
                    pool: &data.pool,
                };
                let out = run_recipe(model, d, &recipe, Some(&args.out))?;
                if out.mining.fallbacks > 0 {
                    eprintln!(
                        "{} hard negative(s) used the fallback",
                        out.mining.fallbacks
                    );
                }
            }
            _ => {
                let cfg = &configs[0];
                let curve = match cfg.stage {
                    Stage::Pretrain => pretrain(&mut model, &data.corpus, cfg)?.0,
                    Stage::General => train_general(&mut model, &data.unlabeled, cfg)?,
                    Stage::Taskspecific => {
                        let pool = (!data.pool.is_empty()).then_some(data.pool.as_slice());
                        train_taskspecific(&mut model, &data.labeled, pool, cfg)?.0
                    }
                };
                save_checkpoint(&args.out, &model, cfg, &curve)?;
            }
        }
        Ok(Outcome::Ok)
    })();
    manifest.conclude(result)
}
