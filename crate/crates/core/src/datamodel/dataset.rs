use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::jsonl::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};

/// The six task categories. Variant order is the report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Retrieval,
    Sts,
    PairClassification,
    Classification,
    Reranking,
    Clustering,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Retrieval,
        TaskKind::Sts,
        TaskKind::PairClassification,
        TaskKind::Classification,
        TaskKind::Reranking,
        TaskKind::Clustering,
    ];

    /// Tag used in file names (`<name>.<tag>.jsonl`) and in result files.
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Retrieval => "retrieval",
            TaskKind::Sts => "sts",
            TaskKind::PairClassification => "pairclassification",
            TaskKind::Classification => "classification",
            TaskKind::Reranking => "reranking",
            TaskKind::Clustering => "clustering",
        }
    }

    /// Column header in the summary report.
    pub fn column(self) -> &'static str {
        match self {
            TaskKind::Retrieval => "Retrieval",
            TaskKind::Sts => "STS",
            TaskKind::PairClassification => "PairCLF",
            TaskKind::Classification => "CLF",
            TaskKind::Reranking => "Re-rank",
            TaskKind::Clustering => "Cluster",
        }
    }

    pub fn main_metric(self) -> &'static str {
        match self {
            TaskKind::Retrieval => "ndcg_at_10",
            TaskKind::Sts => "spearman",
            TaskKind::PairClassification => "ap",
            TaskKind::Classification => "accuracy",
            TaskKind::Reranking => "map",
            TaskKind::Clustering => "v_measure",
        }
    }

    /// Retrieval and classification are stored as several part files sharing a stem.
    pub fn parts(self) -> &'static [&'static str] {
        match self {
            TaskKind::Retrieval => &["corpus", "queries", "qrels"],
            TaskKind::Classification => &["train", "test"],
            _ => &[],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalSet {
    pub corpus: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    /// query id -> (doc id -> graded relevance)
    pub qrels: BTreeMap<String, BTreeMap<String, u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankingItem {
    pub query: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsItem {
    pub s1: String,
    pub s2: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairClassificationItem {
    pub s1: String,
    pub s2: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassificationSplit {
    pub train: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskPayload {
    Retrieval(RetrievalSet),
    Reranking(Vec<RerankingItem>),
    Sts(Vec<StsItem>),
    Classification(ClassificationSplit),
    PairClassification(Vec<PairClassificationItem>),
    /// (text, label)
    Clustering(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub payload: TaskPayload,
}

impl TaskDataset {
    pub fn kind(&self) -> TaskKind {
        match &self.payload {
            TaskPayload::Retrieval(_) => TaskKind::Retrieval,
            TaskPayload::Reranking(_) => TaskKind::Reranking,
            TaskPayload::Sts(_) => TaskKind::Sts,
            TaskPayload::Classification(_) => TaskKind::Classification,
            TaskPayload::PairClassification(_) => TaskKind::PairClassification,
            TaskPayload::Clustering(_) => TaskKind::Clustering,
        }
    }

    /// Checks the structural invariants. Reranking entries lacking positives or
    /// negatives are dropped here rather than rejected.
    pub fn validate(mut self) -> Result<Self> {
        let empty = || Error::Validation("empty dataset".into());
        match &mut self.payload {
            TaskPayload::Retrieval(r) => {
                if r.corpus.is_empty() || r.queries.is_empty() {
                    return Err(empty());
                }
                let docs = unique_ids(&r.corpus, "corpus")?;
                let queries = unique_ids(&r.queries, "query")?;
                for (qid, judged) in &r.qrels {
                    if !queries.contains(qid.as_str()) {
                        return Err(Error::Validation(format!(
                            "qrels query id '{qid}' not in queries"
                        )));
                    }
                    for docid in judged.keys() {
                        if !docs.contains(docid.as_str()) {
                            return Err(Error::Validation(format!(
                                "qrels doc id '{docid}' (query '{qid}') not in corpus"
                            )));
                        }
                    }
                }
            }
            TaskPayload::Reranking(items) => {
                items.retain(|it| !it.positive.is_empty() && !it.negative.is_empty());
                if items.is_empty() {
                    return Err(empty());
                }
            }
            TaskPayload::Sts(items) => {
                if items.is_empty() {
                    return Err(empty());
                }
                if let Some(i) = items.iter().position(|it| !it.score.is_finite()) {
                    return Err(Error::Validation(format!(
                        "STS record {i} has non-finite score"
                    )));
                }
            }
            TaskPayload::Classification(split) => {
                if split.train.is_empty() || split.test.is_empty() {
                    return Err(empty());
                }
            }
            TaskPayload::PairClassification(items) => {
                if items.is_empty() {
                    return Err(empty());
                }
                if let Some(i) = items.iter().position(|it| it.label > 1) {
                    return Err(Error::Validation(format!(
                        "pair-classification record {i} has label outside {{0,1}}"
                    )));
                }
            }
            TaskPayload::Clustering(items) => {
                if items.is_empty() {
                    return Err(empty());
                }
            }
        }
        Ok(self)
    }
}

fn unique_ids<'a>(items: &'a [(String, String)], what: &str) -> Result<HashSet<&'a str>> {
    let mut seen = HashSet::with_capacity(items.len());
    for (id, _) in items {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(seen)
}

#[derive(Serialize, Deserialize)]
struct IdText {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct Qrel {
    qid: String,
    docid: String,
    rel: u32,
}

fn part_path(stem: &Path, part: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(format!(".{part}.jsonl"));
    PathBuf::from(s)
}

fn dataset_name(path: &Path, kind: TaskKind) -> String {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = file.strip_suffix(".jsonl").unwrap_or(&file);
    let suffix = format!(".{}", kind.tag());
    file.strip_suffix(suffix.as_str())
        .unwrap_or(file)
        .to_string()
}

/// Loads a dataset of the given kind.
///
/// Single-file kinds take the `.jsonl` file itself. Retrieval and
/// classification take the shared stem (`dir/<name>.<kind>`); the parts are
/// read from `<stem>.corpus.jsonl`, `<stem>.queries.jsonl`, `<stem>.qrels.jsonl`
/// and `<stem>.train.jsonl`, `<stem>.test.jsonl` respectively.
pub fn load_task_dataset(path: &Path, kind: TaskKind) -> Result<TaskDataset> {
    let name = dataset_name(path, kind);
    let payload = match kind {
        TaskKind::Retrieval => {
            let corpus: Vec<IdText> = read_jsonl(&part_path(path, "corpus"))?;
            let queries: Vec<IdText> = read_jsonl(&part_path(path, "queries"))?;
            let qrels: Vec<Qrel> = read_jsonl(&part_path(path, "qrels"))?;
            let mut map: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
            for q in qrels {
                map.entry(q.qid).or_default().insert(q.docid, q.rel);
            }
            TaskPayload::Retrieval(RetrievalSet {
                corpus: corpus.into_iter().map(|r| (r.id, r.text)).collect(),
                queries: queries.into_iter().map(|r| (r.id, r.text)).collect(),
                qrels: map,
            })
        }
        TaskKind::Reranking => TaskPayload::Reranking(read_jsonl(path)?),
        TaskKind::Sts => TaskPayload::Sts(read_jsonl(path)?),
        TaskKind::Classification => {
            let load = |part| -> Result<Vec<(String, String)>> {
                let recs: Vec<LabeledText> = read_jsonl(&part_path(path, part))?;
                Ok(recs.into_iter().map(|r| (r.text, r.label)).collect())
            };
            TaskPayload::Classification(ClassificationSplit {
                train: load("train")?,
                test: load("test")?,
            })
        }
        TaskKind::PairClassification => TaskPayload::PairClassification(read_jsonl(path)?),
        TaskKind::Clustering => {
            let recs: Vec<LabeledText> = read_jsonl(path)?;
            TaskPayload::Clustering(recs.into_iter().map(|r| (r.text, r.label)).collect())
        }
    };
    TaskDataset { name, payload }.validate()
}

/// Writes `ds` into `dir` following the `<name>.<kind>[.<part>].jsonl` convention.
/// Returns the path that [`load_task_dataset`] expects.
pub fn write_task_dataset(ds: &TaskDataset, dir: &Path) -> Result<PathBuf> {
    let kind = ds.kind();
    let stem = dir.join(format!("{}.{}", ds.name, kind.tag()));
    let labeled = |items: &[(String, String)]| -> Vec<LabeledText> {
        items
            .iter()
            .map(|(t, l)| LabeledText {
                text: t.clone(),
                label: l.clone(),
            })
            .collect()
    };
    match &ds.payload {
        TaskPayload::Retrieval(r) => {
            let id_text = |items: &[(String, String)]| -> Vec<IdText> {
                items
                    .iter()
                    .map(|(id, text)| IdText {
                        id: id.clone(),
                        text: text.clone(),
                    })
                    .collect()
            };
            write_jsonl(&part_path(&stem, "corpus"), &id_text(&r.corpus))?;
            write_jsonl(&part_path(&stem, "queries"), &id_text(&r.queries))?;
            let qrels: Vec<Qrel> = r
                .qrels
                .iter()
                .flat_map(|(qid, docs)| {
                    docs.iter().map(move |(docid, rel)| Qrel {
                        qid: qid.clone(),
                        docid: docid.clone(),
                        rel: *rel,
                    })
                })
                .collect();
            write_jsonl(&part_path(&stem, "qrels"), &qrels)?;
            Ok(stem)
        }
        TaskPayload::Classification(split) => {
            write_jsonl(&part_path(&stem, "train"), &labeled(&split.train))?;
            write_jsonl(&part_path(&stem, "test"), &labeled(&split.test))?;
            Ok(stem)
        }
        other => {
            let path = dir.join(format!("{}.{}.jsonl", ds.name, kind.tag()));
            match other {
                TaskPayload::Reranking(items) => write_jsonl(&path, items)?,
                TaskPayload::Sts(items) => write_jsonl(&path, items)?,
                TaskPayload::PairClassification(items) => write_jsonl(&path, items)?,
                TaskPayload::Clustering(items) => write_jsonl(&path, &labeled(items))?,
                _ => unreachable!(),
            }
            Ok(path)
        }
    }
}
