//! Benchmark harness: runs each task protocol against an [`Encoder`] and
//! aggregates an [`EvaluationReport`].
//!
//! Similarity is always the inner product of L2-normalized embeddings, so
//! every task score is invariant to rescaling the encoder output.

mod kmeans;
mod probe;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{mini_batch_kmeans, KMeansConfig};
pub use probe::{LogisticProbe, ProbeConfig};

use crate::datamodel::{
    dot, load_task_dataset, normalize_rows, ClassificationSplit, DatasetResult, EmbeddingMatrix,
    EvaluationReport, PairClassificationItem, RerankingItem, RetrievalSet, Side, StsItem,
    TaskDataset, TaskKind, TaskPayload,
};
use crate::encoder::{prefix_instruction, Encoder};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, by_score_then_id, mean_average_precision, ndcg_at_k, rank_indices, spearman,
    v_measure, RankedList,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Retrieval cutoff for NDCG.
    pub k: usize,
    pub seed: u64,
    pub probe: ProbeConfig,
    pub kmeans: KMeansConfig,
    /// Prepended to query-side texts of the matching task kind
    /// (retrieval and re-ranking queries only).
    #[serde(default)]
    pub query_instructions: BTreeMap<TaskKind, String>,
    /// Per-dataset instructions, keyed by dataset name; these take
    /// precedence over `query_instructions`.
    #[serde(default)]
    pub dataset_instructions: BTreeMap<String, String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            k: 10,
            seed: 0,
            probe: ProbeConfig::default(),
            kmeans: KMeansConfig::default(),
            query_instructions: BTreeMap::new(),
            dataset_instructions: BTreeMap::new(),
        }
    }
}

impl SuiteConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = SuiteConfig {
            seed,
            ..Default::default()
        };
        cfg.probe.seed = seed;
        cfg.kmeans.seed = seed;
        cfg
    }

    fn instruction(&self, ds: &TaskDataset) -> Option<&str> {
        if !matches!(ds.kind(), TaskKind::Retrieval | TaskKind::Reranking) {
            return None;
        }
        self.dataset_instructions
            .get(&ds.name)
            .or_else(|| self.query_instructions.get(&ds.kind()))
            .map(String::as_str)
    }
}

/// Main-metric score of one task plus auxiliary numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub score: f64,
    pub extras: BTreeMap<String, f64>,
}

impl TaskScore {
    fn plain(score: f64) -> Self {
        TaskScore {
            score,
            extras: BTreeMap::new(),
        }
    }
}

fn embed(enc: &dyn Encoder, texts: &[String], side: Side) -> Result<EmbeddingMatrix> {
    let m = enc.encode(texts, side)?;
    if m.rows() != texts.len() {
        return Err(Error::InvalidInput(format!(
            "encoder returned {} rows for {} texts",
            m.rows(),
            texts.len()
        )));
    }
    normalize_rows(&m)
}

fn with_instruction(texts: impl Iterator<Item = String>, instruction: Option<&str>) -> Vec<String> {
    match instruction {
        Some(ins) => texts.map(|t| prefix_instruction(ins, &t)).collect(),
        None => texts.collect(),
    }
}

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

fn pair_cosines(enc: &dyn Encoder, left: Vec<String>, right: Vec<String>) -> Result<Vec<f64>> {
    let a = embed(enc, &left, Side::Query)?;
    let b = embed(enc, &right, Side::Query)?;
    check_dims(&a, &b)?;
    Ok((0..a.rows()).map(|i| dot(a.row(i), b.row(i))).collect())
}

/// Mean NDCG@k over queries with at least one judged-relevant document.
/// Search is an exact scan of the whole corpus.
pub fn run_retrieval(
    ds: &RetrievalSet,
    enc: &dyn Encoder,
    k: usize,
    instruction: Option<&str>,
) -> Result<TaskScore> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    let scored: Vec<usize> = ds
        .queries
        .iter()
        .enumerate()
        .filter(|(_, (qid, _))| {
            ds.qrels
                .get(qid)
                .is_some_and(|j| j.values().any(|&r| r > 0))
        })
        .map(|(i, _)| i)
        .collect();
    if scored.is_empty() {
        return Err(Error::UndefinedMetric(
            "no query has a judged relevant document".into(),
        ));
    }
    let docs = embed(
        enc,
        &ds.corpus.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
        Side::Passage,
    )?;
    let qtexts = with_instruction(scored.iter().map(|&i| ds.queries[i].1.clone()), instruction);
    let queries = embed(enc, &qtexts, Side::Query)?;
    check_dims(&queries, &docs)?;

    let per_query: Vec<f64> = scored
        .par_iter()
        .enumerate()
        .map(|(row, &qi)| {
            let qid = &ds.queries[qi].0;
            let judged = &ds.qrels[qid];
            let q = queries.row(row);
            let mut hits: Vec<(f64, &str)> = ds
                .corpus
                .iter()
                .enumerate()
                .map(|(d, (id, _))| (dot(q, docs.row(d)), id.as_str()))
                .collect();
            hits.sort_by(|a, b| by_score_then_id(a.0, a.1, b.0, b.1));
            hits.truncate(k);
            let ranked = RankedList::new(
                hits.into_iter()
                    .map(|(s, id)| (id.to_string(), s, judged.get(id).copied().unwrap_or(0)))
                    .collect(),
            );
            let ideal: Vec<u32> = judged.values().copied().collect();
            ndcg_at_k(&ranked, &ideal, k)
        })
        .collect();
    let mut out = TaskScore::plain(per_query.iter().sum::<f64>() / per_query.len() as f64);
    out.extras
        .insert("queries_scored".into(), per_query.len() as f64);
    Ok(out)
}

/// MAP over re-ranking entries, candidates scored by cosine to the query.
pub fn run_reranking(
    items: &[RerankingItem],
    enc: &dyn Encoder,
    instruction: Option<&str>,
) -> Result<TaskScore> {
    let queries = embed(
        enc,
        &with_instruction(items.iter().map(|it| it.query.clone()), instruction),
        Side::Query,
    )?;
    let mut per_query = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let cands: Vec<String> = it.positive.iter().chain(&it.negative).cloned().collect();
        let docs = embed(enc, &cands, Side::Passage)?;
        check_dims(&queries, &docs)?;
        let q = queries.row(i);
        let mut order: Vec<(f64, (&str, usize))> = cands
            .iter()
            .enumerate()
            .map(|(j, t)| (dot(q, docs.row(j)), (t.as_str(), j)))
            .collect();
        order.sort_by(|a, b| by_score_then_id(a.0, &a.1, b.0, &b.1));
        per_query.push(
            order
                .into_iter()
                .map(|(_, (_, j))| j < it.positive.len())
                .collect::<Vec<bool>>(),
        );
    }
    Ok(TaskScore::plain(mean_average_precision(&per_query)?))
}

/// Spearman correlation between pair cosines and gold scores.
pub fn run_sts(items: &[StsItem], enc: &dyn Encoder) -> Result<TaskScore> {
    if items.len() < 2 {
        return Err(Error::InvalidInput("STS needs at least 2 pairs".into()));
    }
    let sims = pair_cosines(
        enc,
        items.iter().map(|it| it.s1.clone()).collect(),
        items.iter().map(|it| it.s2.clone()).collect(),
    )?;
    let gold: Vec<f64> = items.iter().map(|it| it.score).collect();
    let rho = spearman(&sims, &gold).map_err(|e| match e {
        Error::InvalidInput(m) => Error::UndefinedMetric(format!("STS spearman: {m}")),
        other => other,
    })?;
    Ok(TaskScore::plain(rho))
}

fn to_f64_rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| r.iter().map(|v| *v as f64).collect())
        .collect()
}

/// Accuracy of a logistic-regression probe fit on the train split.
/// Extras carry the macro one-vs-rest average precision.
pub fn run_classification(
    split: &ClassificationSplit,
    enc: &dyn Encoder,
    cfg: &ProbeConfig,
) -> Result<TaskScore> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidInput(
            "classification needs train and test items".into(),
        ));
    }
    let texts = |v: &[(String, String)]| v.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
    let labels = |v: &[(String, String)]| v.iter().map(|(_, l)| l.clone()).collect::<Vec<_>>();
    let train = to_f64_rows(&embed(enc, &texts(&split.train), Side::Query)?);
    let test = to_f64_rows(&embed(enc, &texts(&split.test), Side::Query)?);
    let probe = LogisticProbe::fit(&train, &labels(&split.train), cfg)?;
    let truth = labels(&split.test);
    let pred: Vec<String> = test.iter().map(|x| probe.predict(x).to_string()).collect();
    let acc = crate::metrics::accuracy(&truth, &pred)?;

    let probs: Vec<Vec<f64>> = test.iter().map(|x| probe.predict_proba(x)).collect();
    let mut aps = Vec::new();
    for (c, class) in probe.classes().iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let ranked: Vec<bool> = rank_indices(&scores)
            .into_iter()
            .map(|i| &truth[i] == class)
            .collect();
        if let Ok(ap) = average_precision(&ranked) {
            aps.push(ap);
        }
    }
    let mut out = TaskScore::plain(acc);
    if !aps.is_empty() {
        out.extras.insert(
            "macro_ap".into(),
            aps.iter().sum::<f64>() / aps.len() as f64,
        );
    }
    Ok(out)
}

/// Average precision of pairs ranked by cosine similarity.
pub fn run_pair_classification(
    items: &[PairClassificationItem],
    enc: &dyn Encoder,
) -> Result<TaskScore> {
    let has = |l| items.iter().any(|it| it.label == l);
    if !has(0) || !has(1) {
        return Err(Error::UndefinedMetric(
            "pair classification needs both labels present".into(),
        ));
    }
    let sims = pair_cosines(
        enc,
        items.iter().map(|it| it.s1.clone()).collect(),
        items.iter().map(|it| it.s2.clone()).collect(),
    )?;
    let ranked: Vec<bool> = rank_indices(&sims)
        .into_iter()
        .map(|i| items[i].label == 1)
        .collect();
    Ok(TaskScore::plain(average_precision(&ranked)?))
}

/// V-measure of mini-batch k-means with k = number of distinct labels.
pub fn run_clustering(
    items: &[(String, String)],
    enc: &dyn Encoder,
    cfg: &KMeansConfig,
) -> Result<TaskScore> {
    if items.is_empty() {
        return Err(Error::InvalidInput("clustering dataset is empty".into()));
    }
    let k = items
        .iter()
        .map(|(_, l)| l.as_str())
        .collect::<HashSet<_>>()
        .len();
    let texts: Vec<String> = items.iter().map(|(t, _)| t.clone()).collect();
    let points = to_f64_rows(&embed(enc, &texts, Side::Query)?);
    let pred = mini_batch_kmeans(&points, k, cfg)?;
    let truth: Vec<&str> = items.iter().map(|(_, l)| l.as_str()).collect();
    let mut out = TaskScore::plain(v_measure(&truth, &pred)?);
    out.extras.insert("k".into(), k as f64);
    Ok(out)
}

pub fn run_task(ds: &TaskDataset, enc: &dyn Encoder, cfg: &SuiteConfig) -> Result<TaskScore> {
    let ins = cfg.instruction(ds);
    match &ds.payload {
        TaskPayload::Retrieval(r) => run_retrieval(r, enc, cfg.k, ins),
        TaskPayload::Reranking(items) => run_reranking(items, enc, ins),
        TaskPayload::Sts(items) => run_sts(items, enc),
        TaskPayload::Classification(split) => run_classification(split, enc, &cfg.probe),
        TaskPayload::PairClassification(items) => run_pair_classification(items, enc),
        TaskPayload::Clustering(items) => run_clustering(items, enc, &cfg.kmeans),
    }
}

/// One entry of a task list: a loaded dataset, or the reason it failed to load.
#[derive(Debug, Clone)]
pub struct TaskEntry {
    pub name: String,
    pub kind: TaskKind,
    pub dataset: std::result::Result<TaskDataset, String>,
}

#[derive(Debug, Clone, Default)]
pub struct TaskList {
    entries: Vec<TaskEntry>,
}

impl TaskList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ds: TaskDataset) -> Result<()> {
        self.check_name(&ds.name, ds.kind())?;
        self.entries.push(TaskEntry {
            name: ds.name.clone(),
            kind: ds.kind(),
            dataset: Ok(ds),
        });
        Ok(())
    }

    pub fn push_failed(&mut self, name: String, kind: TaskKind, error: String) -> Result<()> {
        self.check_name(&name, kind)?;
        self.entries.push(TaskEntry {
            name,
            kind,
            dataset: Err(error),
        });
        Ok(())
    }

    /// A name may be reused across kinds but not within one.
    fn check_name(&self, name: &str, kind: TaskKind) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|e| e.name == name && e.kind == kind)
        {
            return Err(Error::Validation(format!("duplicate {kind} task '{name}'")));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[TaskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a task list from `<name>.<kind>[.<part>].jsonl` files in `dir`,
    /// sorted by name then kind. Datasets that fail to load are kept as failed entries.
    pub fn discover(dir: &Path) -> Result<Self> {
        let mut stems: BTreeSet<(String, TaskKind)> = BTreeSet::new();
        let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let file = entry.file_name().to_string_lossy().into_owned();
            let Some(base) = file.strip_suffix(".jsonl") else {
                continue;
            };
            let parts: Vec<&str> = base.split('.').collect();
            let found = (1..parts.len()).find_map(|i| {
                let kind: TaskKind = parts[i].parse().ok()?;
                let rest = &parts[i + 1..];
                let ok = match kind.parts() {
                    [] => rest.is_empty(),
                    allowed => rest.len() == 1 && allowed.contains(&rest[0]),
                };
                ok.then(|| (parts[..i].join("."), kind))
            });
            if let Some(key) = found {
                stems.insert(key);
            }
        }
        let mut list = TaskList::new();
        for (name, kind) in stems {
            let stem = dir.join(format!("{name}.{kind}"));
            let path = if kind.parts().is_empty() {
                dir.join(format!("{name}.{kind}.jsonl"))
            } else {
                stem
            };
            match load_task_dataset(&path, kind) {
                Ok(ds) => list.push(ds)?,
                Err(e) => list.push_failed(name, kind, e.to_string())?,
            }
        }
        Ok(list)
    }
}

#[derive(Serialize)]
struct ResultFile<'a> {
    dataset: &'a str,
    kind: TaskKind,
    metric: &'a str,
    score: Option<f64>,
    extras: &'a BTreeMap<String, f64>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Runs every task and aggregates a report. With `out_dir`, writes one
/// `<name>.<kind>.json` result per dataset and `report.json`.
///
/// Task failures are recorded in the report rather than returned; only I/O
/// errors on `out_dir` abort the run.
pub fn run_suite(
    tasks: &TaskList,
    enc: &dyn Encoder,
    cfg: &SuiteConfig,
    out_dir: Option<&Path>,
) -> Result<EvaluationReport> {
    let outcomes: Vec<(DatasetResult, BTreeMap<String, f64>)> = tasks
        .entries()
        .par_iter()
        .map(|entry| {
            let outcome = match &entry.dataset {
                Ok(ds) => run_task(ds, enc, cfg).map_err(|e| e.to_string()),
                Err(msg) => Err(msg.clone()),
            };
            if let Err(msg) = &outcome {
                log::error!("task {} ({}) failed: {msg}", entry.name, entry.kind);
            }
            let (score, extras, error) = match outcome {
                Ok(s) => (Some(s.score), s.extras, None),
                Err(msg) => (None, BTreeMap::new(), Some(msg)),
            };
            (
                DatasetResult {
                    dataset: entry.name.clone(),
                    kind: entry.kind,
                    metric: entry.kind.main_metric().to_string(),
                    score,
                    error,
                },
                extras,
            )
        })
        .collect();

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (res, extras) in &outcomes {
            let file = ResultFile {
                dataset: &res.dataset,
                kind: res.kind,
                metric: &res.metric,
                score: res.score,
                extras,
                seed: cfg.seed,
                error: res.error.as_deref(),
            };
            let path = dir.join(format!("{}.{}.json", res.dataset, res.kind));
            write_json(&path, &file)?;
        }
    }
    let report = EvaluationReport::from_results(outcomes.into_iter().map(|(r, _)| r).collect());
    if let Some(dir) = out_dir {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
