//! Training-pair curation: extract pairs from structured documents, then
//! apply general filtering (length, informativeness, blocklist, exact
//! dedup) and semantic filtering (scorer threshold).

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::datamodel::{dot, Side, TextPair};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.43;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    #[serde(default)]
    pub subtitle: Option<String>,
    pub passage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub q: String,
    pub a: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDoc {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub sections: Vec<Section>,
    #[serde(default)]
    pub qa: Vec<QaItem>,
    #[serde(default)]
    pub source: String,
}

impl StructuredDoc {
    pub fn validate(&self) -> Result<()> {
        let has_title = self.title.as_deref().is_some_and(|t| !t.trim().is_empty());
        if !has_title && self.sections.is_empty() && self.qa.is_empty() {
            return Err(Error::Validation(
                "document has no title, sections or qa items".into(),
            ));
        }
        Ok(())
    }
}

fn non_blank(s: &Option<String>) -> Option<&str> {
    s.as_deref().filter(|t| !t.trim().is_empty())
}

/// Emits (title, body), then (subtitle, passage) per titled section, then
/// (question, answer) per qa item.
pub fn extract_pairs(doc: &StructuredDoc) -> Vec<TextPair> {
    let mut out = Vec::new();
    if let Some(title) = non_blank(&doc.title) {
        let body: Vec<&str> = doc
            .sections
            .iter()
            .map(|s| s.passage.as_str())
            .filter(|p| !p.trim().is_empty())
            .collect();
        if !body.is_empty() {
            out.push(TextPair::new(title, body.join("\n"), "title-body"));
        }
    }
    for sec in &doc.sections {
        if let Some(sub) = non_blank(&sec.subtitle) {
            if !sec.passage.trim().is_empty() {
                out.push(TextPair::new(sub, sec.passage.clone(), "subtitle-passage"));
            }
        }
    }
    for qa in &doc.qa {
        if !qa.q.trim().is_empty() && !qa.a.trim().is_empty() {
            out.push(TextPair::new(qa.q.clone(), qa.a.clone(), "qa"));
        }
    }
    out
}

/// Why a pair was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Length,
    NonTextual,
    Blocked,
    Duplicate,
    BelowThreshold,
    ScorerError,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Length => "length",
            DropReason::NonTextual => "non_textual",
            DropReason::Blocked => "blocked",
            DropReason::Duplicate => "duplicate",
            DropReason::BelowThreshold => "below_threshold",
            DropReason::ScorerError => "scorer_error",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub seen: usize,
    pub kept: usize,
    pub drops: BTreeMap<DropReason, usize>,
}

impl FilterStats {
    fn drop(&mut self, reason: DropReason) {
        *self.drops.entry(reason).or_default() += 1;
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.drops.get(&reason).copied().unwrap_or(0)
    }

    pub fn dropped(&self) -> usize {
        self.drops.values().sum()
    }
}

/// Scores how strongly the two sides of a pair are related, in `[0, 1]`.
pub trait PairScorer: Send + Sync {
    fn score(&self, pair: &TextPair) -> Result<f64>;
}

/// Predicate marking content that must never be kept.
pub type Blocklist = Arc<dyn Fn(&TextPair) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub min_informative_ratio: f64,
    pub dedup: bool,
    pub semantic_threshold: f64,
    pub scorer: Arc<dyn PairScorer>,
    pub blocklist: Option<Blocklist>,
}

impl std::fmt::Debug for FilterConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterConfig")
            .field("min_chars", &self.min_chars)
            .field("max_chars", &self.max_chars)
            .field("min_informative_ratio", &self.min_informative_ratio)
            .field("dedup", &self.dedup)
            .field("semantic_threshold", &self.semantic_threshold)
            .finish_non_exhaustive()
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: 4,
            max_chars: 8192,
            min_informative_ratio: 0.5,
            dedup: true,
            semantic_threshold: DEFAULT_THRESHOLD,
            scorer: Arc::new(OverlapScorer),
            blocklist: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_chars > self.max_chars {
            return Err(Error::Config(format!(
                "min_chars {} exceeds max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        for (name, v) in [
            ("semantic_threshold", self.semantic_threshold),
            ("min_informative_ratio", self.min_informative_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Letters, digits and CJK characters over all non-whitespace characters.
pub fn informative_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut informative = 0usize;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_alphanumeric() || crate::encoder::tokenize::is_cjk(c) {
            informative += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        informative as f64 / total as f64
    }
}

/// NFC, lowercase, whitespace collapsed to single spaces.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized query and passage joined by U+001F.
pub fn dedup_key(pair: &TextPair) -> String {
    format!(
        "{}\u{1F}{}",
        normalize_text(&pair.query),
        normalize_text(&pair.passage)
    )
}

/// Stateful general filter; holds the dedup set across a stream.
pub struct GeneralFilter<'a> {
    cfg: &'a FilterConfig,
    seen: HashSet<String>,
    pub stats: FilterStats,
}

impl<'a> GeneralFilter<'a> {
    pub fn new(cfg: &'a FilterConfig) -> Self {
        GeneralFilter {
            cfg,
            seen: HashSet::new(),
            stats: FilterStats::default(),
        }
    }

    /// Stateless predicates only (no dedup).
    pub fn check(cfg: &FilterConfig, pair: &TextPair) -> std::result::Result<(), DropReason> {
        let len_ok = |s: &str| (cfg.min_chars..=cfg.max_chars).contains(&s.chars().count());
        if !len_ok(&pair.query) || !len_ok(&pair.passage) {
            return Err(DropReason::Length);
        }
        if informative_ratio(&pair.query) < cfg.min_informative_ratio
            || informative_ratio(&pair.passage) < cfg.min_informative_ratio
        {
            return Err(DropReason::NonTextual);
        }
        if cfg.blocklist.as_ref().is_some_and(|b| b(pair)) {
            return Err(DropReason::Blocked);
        }
        Ok(())
    }

    pub fn admit(&mut self, pair: &TextPair) -> bool {
        self.stats.seen += 1;
        let verdict = Self::check(self.cfg, pair).and_then(|_| {
            if self.cfg.dedup && !self.seen.insert(dedup_key(pair)) {
                Err(DropReason::Duplicate)
            } else {
                Ok(())
            }
        });
        match verdict {
            Ok(()) => {
                self.stats.kept += 1;
                true
            }
            Err(r) => {
                self.stats.drop(r);
                false
            }
        }
    }
}

pub fn general_filter<I>(pairs: I, cfg: &FilterConfig) -> (Vec<TextPair>, FilterStats)
where
    I: IntoIterator<Item = TextPair>,
{
    let mut f = GeneralFilter::new(cfg);
    let kept = pairs.into_iter().filter(|p| f.admit(p)).collect();
    (kept, f.stats)
}

/// Keeps pairs scoring at least the threshold; kept pairs carry their score.
/// Scorer failures drop the pair and are counted, never abort.
pub fn semantic_filter<I>(pairs: I, cfg: &FilterConfig) -> (Vec<TextPair>, FilterStats)
where
    I: IntoIterator<Item = TextPair>,
{
    let pairs: Vec<TextPair> = pairs.into_iter().collect();
    let scores: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|p| checked_score(&*cfg.scorer, p))
        .collect();
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for (mut p, s) in pairs.into_iter().zip(scores) {
        stats.seen += 1;
        match s {
            Ok(v) if v >= cfg.semantic_threshold => {
                p.score = Some(v);
                stats.kept += 1;
                kept.push(p);
            }
            Ok(_) => stats.drop(DropReason::BelowThreshold),
            Err(e) => {
                log::debug!("scorer failed: {e}");
                stats.drop(DropReason::ScorerError);
            }
        }
    }
    (kept, stats)
}

fn checked_score(scorer: &dyn PairScorer, pair: &TextPair) -> Result<f64> {
    let v = scorer.score(pair)?;
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!(
            "scorer returned {v} outside [0,1]"
        )));
    }
    Ok(v)
}

fn char_bigrams(s: &str) -> HashSet<(char, char)> {
    let chars: Vec<char> = s.chars().collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Jaccard similarity of the character-bigram sets of both sides.
pub fn builtin_overlap_scorer(pair: &TextPair) -> f64 {
    let a = char_bigrams(&pair.query);
    let b = char_bigrams(&pair.passage);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl PairScorer for OverlapScorer {
    fn score(&self, pair: &TextPair) -> Result<f64> {
        Ok(builtin_overlap_scorer(pair))
    }
}

/// Scores a pair by the cosine of its query and passage embeddings,
/// clamped below at 0.
pub struct EncoderScorer<E> {
    pub encoder: E,
}

impl<E: Encoder> PairScorer for EncoderScorer<E> {
    fn score(&self, pair: &TextPair) -> Result<f64> {
        let q = crate::datamodel::normalize_rows(
            &self
                .encoder
                .encode(std::slice::from_ref(&pair.query), Side::Query)?,
        )?;
        let p = crate::datamodel::normalize_rows(
            &self
                .encoder
                .encode(std::slice::from_ref(&pair.passage), Side::Passage)?,
        )?;
        Ok(dot(q.row(0), p.row(0)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub raw: usize,
    pub after_general: usize,
    pub after_semantic: usize,
    pub drops: BTreeMap<String, usize>,
}

impl CurationReport {
    fn absorb(&mut self, general: &FilterStats, semantic: &FilterStats) {
        self.raw += general.seen;
        self.after_general += general.kept;
        self.after_semantic += semantic.kept;
        for (r, n) in general.drops.iter().chain(&semantic.drops) {
            *self.drops.entry(r.as_str().to_string()).or_default() += n;
        }
    }
}

const CHUNK_DOCS: usize = 1024;

/// Streams documents from `inputs` through extraction and both filters,
/// writing kept pairs to `out`. Output is staged in a temporary file and
/// only moved into place when the whole run succeeds.
pub fn run_pipeline(inputs: &[PathBuf], cfg: &FilterConfig, out: &Path) -> Result<CurationReport> {
    cfg.validate()?;
    let mut readers = Vec::with_capacity(inputs.len());
    for p in inputs {
        let f = File::open(p).map_err(|e| Error::io(p, e))?;
        readers.push((p.clone(), BufReader::new(f)));
    }
    let staging = out.with_extension("partial");
    let result = (|| {
        let file = File::create(&staging).map_err(|e| Error::io(&staging, e))?;
        let mut w = BufWriter::new(file);
        let mut general = GeneralFilter::new(cfg);
        let mut report = CurationReport::default();
        for (path, reader) in readers {
            let mut lines = reader.lines().enumerate().peekable();
            while lines.peek().is_some() {
                let mut docs = Vec::with_capacity(CHUNK_DOCS);
                for (idx, line) in lines.by_ref().take(CHUNK_DOCS) {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let doc: StructuredDoc =
                        serde_json::from_str(&line).map_err(|e| Error::Parse {
                            path: path.clone(),
                            line: idx + 1,
                            message: e.to_string(),
                        })?;
                    doc.validate().map_err(|e| Error::Parse {
                        path: path.clone(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                    docs.push(doc);
                }
                let extracted: Vec<Vec<TextPair>> = docs.par_iter().map(extract_pairs).collect();
                let before = general.stats.clone();
                let passed: Vec<TextPair> = extracted
                    .into_iter()
                    .flatten()
                    .filter(|p| general.admit(p))
                    .collect();
                let chunk_general = diff_stats(&general.stats, &before);
                let (kept, sem) = semantic_filter(passed, cfg);
                for p in &kept {
                    serde_json::to_writer(&mut w, p).map_err(|e| Error::Format(e.to_string()))?;
                    w.write_all(b"\n").map_err(|e| Error::io(&staging, e))?;
                }
                report.absorb(&chunk_general, &sem);
            }
        }
        w.flush().map_err(|e| Error::io(&staging, e))?;
        Ok(report)
    })();
    match result {
        Ok(report) => {
            fs::rename(&staging, out).map_err(|e| Error::io(out, e))?;
            Ok(report)
        }
        Err(e) => {
            let _ = fs::remove_file(&staging);
            Err(e)
        }
    }
}

fn diff_stats(now: &FilterStats, before: &FilterStats) -> FilterStats {
    let mut d = FilterStats {
        seen: now.seen - before.seen,
        kept: now.kept - before.kept,
        drops: BTreeMap::new(),
    };
    for (r, n) in &now.drops {
        let prev = before.drops.get(r).copied().unwrap_or(0);
        if *n > prev {
            d.drops.insert(*r, n - prev);
        }
    }
    d
}
