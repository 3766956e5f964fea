//! Three-stage training: masked-autoencoding pre-training, contrastive
//! learning with in-batch negatives, and instruction fine-tuning with
//! mined hard negatives. All updates are plain SGD.

mod loss;
mod mae;
mod mining;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{info_nce, InfoNceOutput};
pub use mae::{
    mae_loss_and_grads, mae_pretrain_step, mask_tokens, DecoderGradients, MaeDecoder, MaeStep,
    MaskedText,
};
pub use mining::{mine_hard_negatives, MiningStats};

use crate::curation::normalize_text;
use crate::datamodel::TextPair;
use crate::encoder::{
    load_model, prefix_instruction, save_model, EncoderModel, Forward, Gradients,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    General,
    Taskspecific,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::General => "general",
            Stage::Taskspecific => "taskspecific",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "general" => Ok(Stage::General),
            "taskspecific" => Ok(Stage::Taskspecific),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub mask_ratio: f64,
    #[serde(default)]
    pub instructions: BTreeMap<String, String>,
    pub hard_negative_rank_window: (usize, usize),
    /// Re-mine hard negatives with the current model every this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remine_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        TrainConfig {
            stage,
            batch_size: 32,
            temperature: 0.05,
            learning_rate: match stage {
                Stage::Pretrain => 0.1,
                Stage::General => 0.01,
                Stage::Taskspecific => 0.002,
            },
            steps: 200,
            seed: 0,
            mask_ratio: 0.3,
            instructions: BTreeMap::new(),
            hard_negative_rank_window: (2, 100),
            remine_every: None,
        }
    }

    /// `learning_rate = 0` is accepted as a null update.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.stage != Stage::Pretrain && self.batch_size < 2 {
            return Err(Error::Config(
                "contrastive stages need batch_size >= 2 for in-batch negatives".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!(
                "mask_ratio {} must be in (0, 1)",
                self.mask_ratio
            )));
        }
        let (lo, hi) = self.hard_negative_rank_window;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid rank window [{lo}, {hi}]")));
        }
        if self.remine_every == Some(0) {
            return Err(Error::Config("remine_every must be >= 1".into()));
        }
        Ok(())
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        self.validate()?;
        if self.stage != stage {
            return Err(Error::Config(format!(
                "config is for stage '{}', expected '{stage}'",
                self.stage
            )));
        }
        Ok(())
    }
}

/// A training pair tagged with its task, optionally with a hard negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTaskPair {
    #[serde(flatten)]
    pub pair: TextPair,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg: Option<String>,
}

/// Prefixes the task's instruction to a query.
pub fn attach_instruction(
    query: &str,
    task: &str,
    instructions: &BTreeMap<String, String>,
) -> Result<String> {
    instructions
        .get(task)
        .map(|ins| prefix_instruction(ins, query))
        .ok_or_else(|| Error::Config(format!("no instruction registered for task '{task}'")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn push(&mut self, step: usize, loss: f64) {
        self.points.push((step, loss));
    }

    pub fn first(&self) -> Option<f64> {
        self.points.first().map(|p| p.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.points {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Endless seeded shuffling into fixed-size batches; the tail of each
/// permutation that does not fill a batch is dropped.
struct BatchSampler {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler {
            n,
            batch: batch.min(n),
            order: Vec::new(),
            pos: usize::MAX,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.pos.saturating_add(self.batch) > self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        b
    }
}

fn forward_all(model: &EncoderModel, texts: &[String]) -> Vec<Forward> {
    texts.par_iter().map(|t| model.forward_text(t)).collect()
}

/// Contrastive loss of a batch of texts through the encoder, with gradients
/// for every encoder parameter. Row `i` of `queries` pairs with row `i` of
/// `passages`; `hard_negatives`, if given, has one text per row.
pub fn contrastive_loss_and_grads(
    model: &EncoderModel,
    queries: &[String],
    passages: &[String],
    hard_negatives: Option<&[String]>,
    temperature: f64,
) -> Result<(f64, Gradients)> {
    let fq = forward_all(model, queries);
    let fp = forward_all(model, passages);
    let fh = hard_negatives.map(|h| forward_all(model, h));
    let rows = |f: &[Forward]| f.iter().map(|x| x.output.clone()).collect::<Vec<_>>();
    let hard_rows = fh.as_deref().map(rows);
    let out = info_nce(&rows(&fq), &rows(&fp), hard_rows.as_deref(), temperature)?;
    let mut grads = Gradients::zeros(model);
    for (f, g) in fq.iter().zip(&out.grad_queries) {
        model.backward(f, g, &mut grads);
    }
    for (f, g) in fp.iter().zip(&out.grad_passages) {
        model.backward(f, g, &mut grads);
    }
    if let (Some(fh), Some(gh)) = (&fh, &out.grad_hard) {
        for (f, g) in fh.iter().zip(gh) {
            model.backward(f, g, &mut grads);
        }
    }
    Ok((out.loss, grads))
}

/// Masked-autoencoding pre-training on plain texts. The decoder is
/// returned for inspection; the recipe discards it.
pub fn pretrain(
    model: &mut EncoderModel,
    texts: &[String],
    cfg: &TrainConfig,
) -> Result<(LossCurve, MaeDecoder)> {
    cfg.expect_stage(Stage::Pretrain)?;
    let mut decoder = MaeDecoder::for_model(model, cfg.seed);
    let mut curve = LossCurve::default();
    if cfg.steps == 0 {
        return Ok((curve, decoder));
    }
    if texts.is_empty() {
        return Err(Error::InvalidInput("pre-training corpus is empty".into()));
    }
    let mut sampler = BatchSampler::new(texts.len(), cfg.batch_size, cfg.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut skipped = 0;
    for step in 0..cfg.steps {
        let batch: Vec<String> = sampler
            .next_batch()
            .iter()
            .map(|&i| texts[i].clone())
            .collect();
        let s = mae_pretrain_step(
            model,
            &mut decoder,
            &batch,
            cfg.mask_ratio,
            cfg.learning_rate,
            &mut mask_rng,
        )?;
        skipped += s.skipped;
        curve.push(step, s.loss);
    }
    if skipped > 0 {
        log::info!("pre-training skipped {skipped} text(s) shorter than two tokens");
    }
    Ok((curve, decoder))
}

/// Contrastive training on unlabeled pairs with in-batch negatives.
pub fn train_general(
    model: &mut EncoderModel,
    pairs: &[TextPair],
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    cfg.expect_stage(Stage::General)?;
    let mut curve = LossCurve::default();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    if pairs.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "{} pairs cannot fill a batch of {}",
            pairs.len(),
            cfg.batch_size
        )));
    }
    let mut sampler = BatchSampler::new(pairs.len(), cfg.batch_size, cfg.seed);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let q: Vec<String> = idx.iter().map(|&i| pairs[i].query.clone()).collect();
        let p: Vec<String> = idx.iter().map(|&i| pairs[i].passage.clone()).collect();
        let (loss, grads) = contrastive_loss_and_grads(model, &q, &p, None, cfg.temperature)?;
        model.apply_sgd(&grads, cfg.learning_rate);
        curve.push(step, loss);
    }
    Ok(curve)
}

/// Instruction fine-tuning with one hard negative per pair.
///
/// Pairs without a negative get one mined from `pool` before the first
/// step, and again every `remine_every` steps when set. Pairs that came
/// with a negative keep it.
pub fn train_taskspecific(
    model: &mut EncoderModel,
    pairs: &[LabeledTaskPair],
    pool: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<(LossCurve, MiningStats)> {
    cfg.expect_stage(Stage::Taskspecific)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    if pairs.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "{} pairs cannot fill a batch of {}",
            pairs.len(),
            cfg.batch_size
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        if !cfg.instructions.contains_key(&p.task) {
            return Err(Error::Config(format!(
                "pair {i}: no instruction registered for task '{}'",
                p.task
            )));
        }
        if let Some(neg) = &p.neg {
            if normalize_text(neg) == normalize_text(&p.pair.passage) {
                return Err(Error::Validation(format!(
                    "pair {i}: hard negative is identical to the positive"
                )));
            }
        }
    }
    let to_mine: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].neg.is_none())
        .collect();
    if !to_mine.is_empty() && pool.is_none() {
        return Err(Error::InvalidInput(format!(
            "{} pair(s) lack a hard negative and no passage pool was given",
            to_mine.len()
        )));
    }
    let queries: Vec<String> = pairs
        .iter()
        .map(|p| attach_instruction(&p.pair.query, &p.task, &cfg.instructions))
        .collect::<Result<_>>()?;
    let mut negs: Vec<String> = pairs
        .iter()
        .map(|p| p.neg.clone().unwrap_or_default())
        .collect();
    let mut stats = MiningStats::default();
    let mut curve = LossCurve::default();
    if cfg.steps == 0 {
        return Ok((curve, stats));
    }

    let mut mine = |model: &EncoderModel, round: u64, negs: &mut Vec<String>| -> Result<()> {
        if to_mine.is_empty() {
            return Ok(());
        }
        let subset: Vec<LabeledTaskPair> = to_mine.iter().map(|&i| pairs[i].clone()).collect();
        let (mined, s) = mine_hard_negatives(
            model,
            &subset,
            pool.expect("checked above"),
            &cfg.instructions,
            cfg.hard_negative_rank_window,
            cfg.seed.wrapping_add(round),
        )?;
        for (&i, m) in to_mine.iter().zip(mined) {
            negs[i] = m.neg.expect("mined pair has a negative");
        }
        stats.mined += s.mined;
        stats.fallbacks += s.fallbacks;
        Ok(())
    };

    mine(model, 0, &mut negs)?;
    let mut sampler = BatchSampler::new(pairs.len(), cfg.batch_size, cfg.seed);
    for step in 0..cfg.steps {
        if let Some(r) = cfg.remine_every {
            if step > 0 && step % r == 0 {
                mine(model, (step / r) as u64, &mut negs)?;
            }
        }
        let idx = sampler.next_batch();
        let q: Vec<String> = idx.iter().map(|&i| queries[i].clone()).collect();
        let p: Vec<String> = idx.iter().map(|&i| pairs[i].pair.passage.clone()).collect();
        let h: Vec<String> = idx.iter().map(|&i| negs[i].clone()).collect();
        let (loss, grads) = contrastive_loss_and_grads(model, &q, &p, Some(&h), cfg.temperature)?;
        model.apply_sgd(&grads, cfg.learning_rate);
        curve.push(step, loss);
    }
    Ok((curve, stats))
}

pub const MODEL_FILE: &str = "model.bin";
pub const CONFIG_FILE: &str = "train_config.json";
pub const LOSS_FILE: &str = "loss.csv";

/// Writes `model.bin`, the config sidecar and the loss curve into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: &EncoderModel,
    cfg: &TrainConfig,
    curve: &LossCurve,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_model(model, &dir.join(MODEL_FILE))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let mut json = serde_json::to_string_pretty(cfg).expect("config serializes");
    json.push('\n');
    fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))?;
    curve.write_csv(&dir.join(LOSS_FILE))
}

/// Resolves a checkpoint path: a directory holding `model.bin`, or a model file.
pub fn checkpoint_model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads the model and, when present, the config sidecar.
pub fn load_checkpoint(path: &Path) -> Result<(EncoderModel, Option<TrainConfig>)> {
    let model_path = checkpoint_model_path(path);
    let model = load_model(&model_path)?;
    let cfg_path = model_path.with_file_name(CONFIG_FILE);
    let cfg = if cfg_path.exists() {
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: cfg_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?)
    } else {
        None
    };
    Ok((model, cfg))
}

/// Training data for the full recipe.
#[derive(Debug, Clone, Copy)]
pub struct RecipeData<'a> {
    pub corpus: &'a [String],
    pub unlabeled: &'a [TextPair],
    pub labeled: &'a [LabeledTaskPair],
    /// Passage pool for hard-negative mining.
    pub pool: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub pretrain: TrainConfig,
    pub general: TrainConfig,
    pub finetune: TrainConfig,
}

impl RecipeConfig {
    pub fn validate(&self) -> Result<()> {
        self.pretrain.expect_stage(Stage::Pretrain)?;
        self.general.expect_stage(Stage::General)?;
        self.finetune.expect_stage(Stage::Taskspecific)
    }
}

#[derive(Debug, Clone)]
pub struct RecipeOutput {
    pub pretrained: EncoderModel,
    pub general: EncoderModel,
    pub finetuned: EncoderModel,
    pub curves: [LossCurve; 3],
    pub mining: MiningStats,
}

pub const STAGE_DIRS: [&str; 3] = ["pretrain", "general", "finetune"];

/// Runs the three stages in order. With `checkpoint_dir`, each stage's
/// result is saved to `pretrain/`, `general/` and `finetune/` as soon as
/// it finishes, so a failure leaves the earlier checkpoints in place.
pub fn run_recipe(
    init: EncoderModel,
    data: RecipeData<'_>,
    cfg: &RecipeConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<RecipeOutput> {
    cfg.validate()?;
    let save = |i: usize, m: &EncoderModel, c: &TrainConfig, curve: &LossCurve| match checkpoint_dir
    {
        Some(dir) => save_checkpoint(&dir.join(STAGE_DIRS[i]), m, c, curve),
        None => Ok(()),
    };

    let mut model = init;
    let (c1, _) = pretrain(&mut model, data.corpus, &cfg.pretrain)?;
    save(0, &model, &cfg.pretrain, &c1)?;
    let pretrained = model.clone();

    let c2 = train_general(&mut model, data.unlabeled, &cfg.general)?;
    save(1, &model, &cfg.general, &c2)?;
    let general = model.clone();

    let (c3, mining) =
        train_taskspecific(&mut model, data.labeled, Some(data.pool), &cfg.finetune)?;
    save(2, &model, &cfg.finetune, &c3)?;
    Ok(RecipeOutput {
        pretrained,
        general,
        finetuned: model,
        curves: [c1, c2, c3],
        mining,
    })
}
