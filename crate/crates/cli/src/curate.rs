use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use embkit::curation::{run_pipeline, EncoderScorer, FilterConfig, OverlapScorer, PairScorer};
use serde_json::json;

use crate::encoders::{load_encoder_model, spawn_external};
use crate::manifest::RunManifest;
use crate::{unit_interval, Outcome};

#[derive(Debug, Clone)]
enum ScorerSpec {
    Overlap,
    Model(PathBuf),
    External(String),
}

fn parse_scorer(s: &str) -> Result<ScorerSpec, String> {
    match s.split_once(':') {
        None if s == "overlap" => Ok(ScorerSpec::Overlap),
        Some(("encoder", p)) if !p.is_empty() => Ok(ScorerSpec::Model(p.into())),
        Some(("external", c)) if !c.is_empty() => Ok(ScorerSpec::External(c.into())),
        _ => Err(format!(
            "'{s}': expected overlap, encoder:PATH or external:CMD"
        )),
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Structured-document JSONL files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output JSONL of kept pairs.
    #[arg(long)]
    output: PathBuf,
    /// Minimum relatedness score for a pair to be kept.
    #[arg(long, default_value_t = embkit::curation::DEFAULT_THRESHOLD, value_parser = unit_interval)]
    threshold: f64,
    /// `overlap`, `encoder:CHECKPOINT` or `external:COMMAND`.
    #[arg(long, default_value = "overlap", value_parser = parse_scorer)]
    scorer: ScorerSpec,
    #[arg(long, default_value_t = 4)]
    min_chars: usize,
    #[arg(long, default_value_t = 8192)]
    max_chars: usize,
}

pub fn run(args: Args) -> Result<Outcome> {
    let scorer: Arc<dyn PairScorer> = match &args.scorer {
        ScorerSpec::Overlap => Arc::new(OverlapScorer),
        ScorerSpec::Model(p) => Arc::new(EncoderScorer {
            encoder: load_encoder_model(p)?.0,
        }),
        ScorerSpec::External(cmd) => Arc::new(EncoderScorer {
            encoder: spawn_external(cmd)?,
        }),
    };
    let cfg = FilterConfig {
        min_chars: args.min_chars,
        max_chars: args.max_chars,
        semantic_threshold: args.threshold,
        scorer,
        ..FilterConfig::default()
    };
    cfg.validate()?;
    let report_path = args.output.with_extension("report.json");
    let manifest = RunManifest::begin(
        "curate",
        args.output.with_extension("manifest.json"),
        None,
        json!({
            "threshold": args.threshold,
            "scorer": format!("{:?}", args.scorer),
            "min_chars": args.min_chars,
            "max_chars": args.max_chars,
            "min_informative_ratio": cfg.min_informative_ratio,
            "dedup": cfg.dedup,
        }),
        args.input.clone(),
        vec![args.output.clone(), report_path.clone()],
    )?;
    let result = (|| {
        let report = run_pipeline(&args.input, &cfg, &args.output)?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        fs::write(&report_path, json)
            .with_context(|| format!("writing {}", report_path.display()))?;
        eprintln!(
            "curated {} pairs: {} after general filtering, {} kept",
            report.raw, report.after_general, report.after_semantic
        );
        Ok(Outcome::Ok)
    })();
    manifest.conclude(result)
}
