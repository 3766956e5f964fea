//! Seeded synthetic benchmark.
//!
//! A world is a set of topics; each topic owns a handful of concepts and
//! every concept can be written with any of several synonymous pseudo-words.
//! Texts mix concept words of one topic with filler words shared by all
//! topics. Relevance is topical, so an encoder has to learn which surface
//! words belong together rather than rely on exact token overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    write_jsonl, write_task_dataset, ClassificationSplit, PairClassificationItem, RerankingItem,
    RetrievalSet, StsItem, TaskDataset, TaskPayload, TextPair,
};
use crate::error::{Error, Result};
use crate::trainer::LabeledTaskPair;

pub const SYNONYMS: usize = 3;
pub const CONCEPTS_PER_TOPIC: usize = 4;
pub const FILLER_WORDS: usize = 40;
const DOC_CONCEPTS: usize = 3;
const DOC_FILLER: usize = 3;
const QUERY_CONCEPTS: usize = 2;
const QUERY_FILLER: usize = 1;

/// Instruction registered for the retrieval tag in generated training data.
pub const RETRIEVAL_INSTRUCTION: &str = "retrieve:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub topics: usize,
    /// Base item count; every dataset and training file scales with it.
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            topics: 8,
            size: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::Config("need at least 2 topics".into()));
        }
        if self.size < 4 * self.topics {
            return Err(Error::Config(format!(
                "size {} too small for {} topics (need >= {})",
                self.size,
                self.topics,
                4 * self.topics
            )));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

/// Distinct pronounceable pseudo-words.
fn pseudo_words(n: usize, rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if rng.gen_bool(0.5) {
            w.push_str(["n", "r", "x", "k", "l"].choose(rng).unwrap());
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Topics, their concepts with synonyms, and shared filler words.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// `topics[t][c]` lists the synonyms of concept `c` of topic `t`.
    pub topics: Vec<Vec<Vec<String>>>,
    pub filler: Vec<String>,
}

impl World {
    pub fn new(topics: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let mut taken = BTreeSet::new();
        let filler = pseudo_words(FILLER_WORDS, &mut rng, &mut taken);
        let topics = (0..topics)
            .map(|_| {
                (0..CONCEPTS_PER_TOPIC)
                    .map(|_| pseudo_words(SYNONYMS, &mut rng, &mut taken))
                    .collect()
            })
            .collect();
        World { topics, filler }
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    fn concepts(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..CONCEPTS_PER_TOPIC).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx
    }

    /// Words for the given concepts of `topic` (random synonyms) plus filler, shuffled.
    pub fn text(
        &self,
        topic: usize,
        concepts: &[usize],
        filler: usize,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let mut words: Vec<&str> = concepts
            .iter()
            .map(|&c| self.topics[topic][c].choose(rng).unwrap().as_str())
            .collect();
        for _ in 0..filler {
            words.push(self.filler.choose(rng).unwrap());
        }
        words.shuffle(rng);
        words.join(" ")
    }

    pub fn doc(&self, topic: usize, rng: &mut ChaCha8Rng) -> String {
        let c = self.concepts(rng, DOC_CONCEPTS);
        self.text(topic, &c, DOC_FILLER, rng)
    }

    pub fn query(&self, topic: usize, rng: &mut ChaCha8Rng) -> String {
        let c = self.concepts(rng, QUERY_CONCEPTS);
        self.text(topic, &c, QUERY_FILLER, rng)
    }

    /// A query about a subset of the passage's concepts, with fresh synonyms.
    pub fn pair(&self, topic: usize, rng: &mut ChaCha8Rng) -> (String, String) {
        let c = self.concepts(rng, DOC_CONCEPTS);
        let passage = self.text(topic, &c, DOC_FILLER, rng);
        let query = self.text(topic, &c[..QUERY_CONCEPTS], QUERY_FILLER, rng);
        (query, passage)
    }
}

/// Topic labels spread evenly over `n` items.
fn topic_cycle(n: usize, topics: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut t: Vec<usize> = (0..n).map(|i| i % topics).collect();
    t.shuffle(rng);
    t
}

fn label(t: usize) -> String {
    format!("topic{t:02}")
}

/// Retrieval set: relevance 1 for every corpus document sharing the query's topic.
pub fn retrieval_set(
    world: &World,
    docs: usize,
    queries: usize,
    rng: &mut ChaCha8Rng,
) -> RetrievalSet {
    let k = world.num_topics();
    let doc_topics = topic_cycle(docs, k, rng);
    let corpus: Vec<(String, String)> = doc_topics
        .iter()
        .enumerate()
        .map(|(i, &t)| (format!("d{i:05}"), world.doc(t, rng)))
        .collect();
    let query_topics = topic_cycle(queries, k, rng);
    let mut qrels = BTreeMap::new();
    let qs = query_topics
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let id = format!("q{i:05}");
            let rel = doc_topics
                .iter()
                .enumerate()
                .filter(|(_, &dt)| dt == t)
                .map(|(j, _)| (corpus[j].0.clone(), 1u32))
                .collect();
            qrels.insert(id.clone(), rel);
            (id, world.query(t, rng))
        })
        .collect();
    RetrievalSet {
        corpus,
        queries: qs,
        qrels,
    }
}

fn other_topic(t: usize, k: usize, rng: &mut ChaCha8Rng) -> usize {
    (t + rng.gen_range(1..k)) % k
}

/// All six datasets of the synthetic suite, each named `synth`.
pub fn synth_suite(cfg: &SynthConfig) -> Result<Vec<TaskDataset>> {
    cfg.validate()?;
    let world = World::new(cfg.topics, cfg.seed);
    let k = cfg.topics;
    let n = cfg.size;
    let mut out = Vec::new();

    let mut rng = rng_for(cfg.seed, 1);
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::Retrieval(retrieval_set(&world, n, (n / 4).max(k), &mut rng)),
    });

    let mut rng = rng_for(cfg.seed, 2);
    let rerank = topic_cycle((n / 4).max(k), k, &mut rng)
        .into_iter()
        .map(|t| RerankingItem {
            query: world.query(t, &mut rng),
            positive: (0..2).map(|_| world.doc(t, &mut rng)).collect(),
            negative: (0..8)
                .map(|_| {
                    let o = other_topic(t, k, &mut rng);
                    world.doc(o, &mut rng)
                })
                .collect(),
        })
        .collect();
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::Reranking(rerank),
    });

    // Score: concepts in common (0..=half) plus one point for a shared topic.
    let half = CONCEPTS_PER_TOPIC / 2;
    let mut rng = rng_for(cfg.seed, 3);
    let sts = (0..n / 2)
        .map(|_| {
            let t = rng.gen_range(0..k);
            let c = world.concepts(&mut rng, 2 * half);
            let s1 = world.text(t, &c[..half], 1, &mut rng);
            if rng.gen_bool(0.25) {
                let o = other_topic(t, k, &mut rng);
                let c2 = world.concepts(&mut rng, half);
                StsItem {
                    s1,
                    s2: world.text(o, &c2, 1, &mut rng),
                    score: 0.0,
                }
            } else {
                let shared = rng.gen_range(0..=half);
                let mut c2: Vec<usize> = c[..shared].to_vec();
                c2.extend_from_slice(&c[half..2 * half - shared]);
                StsItem {
                    s1,
                    s2: world.text(t, &c2, 1, &mut rng),
                    score: 1.0 + shared as f64,
                }
            }
        })
        .collect();
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::Sts(sts),
    });

    let mut rng = rng_for(cfg.seed, 4);
    let pairs = (0..n / 2)
        .map(|i| {
            let t = rng.gen_range(0..k);
            let s1 = world.query(t, &mut rng);
            let (t2, label) = if i % 2 == 0 {
                (t, 1)
            } else {
                (other_topic(t, k, &mut rng), 0)
            };
            PairClassificationItem {
                s1,
                s2: world.query(t2, &mut rng),
                label,
            }
        })
        .collect();
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::PairClassification(pairs),
    });

    let mut rng = rng_for(cfg.seed, 5);
    let labeled = |count: usize, rng: &mut ChaCha8Rng| -> Vec<(String, String)> {
        topic_cycle(count, k, rng)
            .into_iter()
            .map(|t| (world.doc(t, rng), label(t)))
            .collect()
    };
    let train = labeled((n / 2).max(2 * k), &mut rng);
    let test = labeled((n / 4).max(k), &mut rng);
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::Classification(ClassificationSplit { train, test }),
    });

    let mut rng = rng_for(cfg.seed, 6);
    let clusters = topic_cycle((n / 2).max(2 * k), k, &mut rng)
        .into_iter()
        .map(|t| (world.doc(t, &mut rng), label(t)))
        .collect();
    out.push(TaskDataset {
        name: "synth".into(),
        payload: TaskPayload::Clustering(clusters),
    });
    out.into_iter().map(TaskDataset::validate).collect()
}

/// Inputs for the three training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Plain texts for masked pre-training.
    pub corpus: Vec<String>,
    pub unlabeled: Vec<TextPair>,
    /// Tagged `retrieval`, without negatives; mine them from `pool`.
    pub labeled: Vec<LabeledTaskPair>,
    pub pool: Vec<String>,
    pub instructions: BTreeMap<String, String>,
}

pub fn synth_training(cfg: &SynthConfig) -> Result<TrainingData> {
    cfg.validate()?;
    let world = World::new(cfg.topics, cfg.seed);
    let k = cfg.topics;
    let n = cfg.size;

    let mut rng = rng_for(cfg.seed, 10);
    let corpus = topic_cycle(2 * n, k, &mut rng)
        .into_iter()
        .map(|t| world.doc(t, &mut rng))
        .collect();

    let mut rng = rng_for(cfg.seed, 11);
    let unlabeled = topic_cycle(4 * n, k, &mut rng)
        .into_iter()
        .map(|t| {
            let (q, p) = world.pair(t, &mut rng);
            TextPair::new(q, p, "synth-unlabeled")
        })
        .collect();

    let mut rng = rng_for(cfg.seed, 12);
    let labeled: Vec<LabeledTaskPair> = topic_cycle(n, k, &mut rng)
        .into_iter()
        .map(|t| LabeledTaskPair {
            pair: TextPair::new(
                world.query(t, &mut rng),
                world.doc(t, &mut rng),
                "synth-labeled",
            ),
            task: "retrieval".into(),
            neg: None,
        })
        .collect();
    let mut pool: Vec<String> = labeled.iter().map(|p| p.pair.passage.clone()).collect();
    pool.extend(
        topic_cycle(n, k, &mut rng)
            .into_iter()
            .map(|t| world.doc(t, &mut rng)),
    );

    let mut instructions = BTreeMap::new();
    instructions.insert("retrieval".to_string(), RETRIEVAL_INSTRUCTION.to_string());
    Ok(TrainingData {
        corpus,
        unlabeled,
        labeled,
        pool,
        instructions,
    })
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CorpusLineOwned {
    text: String,
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const UNLABELED_FILE: &str = "unlabeled.jsonl";
pub const LABELED_FILE: &str = "labeled.jsonl";
pub const POOL_FILE: &str = "pool.jsonl";
pub const INSTRUCTIONS_FILE: &str = "instructions.json";

/// Writes `TrainingData` as `corpus.jsonl`, `unlabeled.jsonl`,
/// `labeled.jsonl`, `pool.jsonl` and `instructions.json` under `dir`.
pub fn write_training_data(data: &TrainingData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fn texts(v: &[String]) -> Vec<CorpusLine<'_>> {
        v.iter().map(|t| CorpusLine { text: t }).collect()
    }
    write_jsonl(&dir.join(CORPUS_FILE), &texts(&data.corpus))?;
    write_jsonl(&dir.join(UNLABELED_FILE), &data.unlabeled)?;
    write_jsonl(&dir.join(LABELED_FILE), &data.labeled)?;
    write_jsonl(&dir.join(POOL_FILE), &texts(&data.pool))?;
    let path = dir.join(INSTRUCTIONS_FILE);
    let mut json = serde_json::to_string_pretty(&data.instructions).expect("map serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads the files written by [`write_training_data`]. Missing files yield
/// empty collections so a directory may hold data for a single stage.
pub fn read_training_data(dir: &Path) -> Result<TrainingData> {
    use crate::datamodel::read_jsonl;
    let texts = |name: &str| -> Result<Vec<String>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl::<CorpusLineOwned>(&p)?
            .into_iter()
            .map(|l| l.text)
            .collect())
    };
    let opt = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    let instructions = match opt(INSTRUCTIONS_FILE) {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => BTreeMap::new(),
    };
    Ok(TrainingData {
        corpus: texts(CORPUS_FILE)?,
        unlabeled: opt(UNLABELED_FILE)
            .map(|p| read_jsonl(&p))
            .transpose()?
            .unwrap_or_default(),
        labeled: opt(LABELED_FILE)
            .map(|p| read_jsonl(&p))
            .transpose()?
            .unwrap_or_default(),
        pool: texts(POOL_FILE)?,
        instructions,
    })
}

/// Writes the suite under `dir/tasks` and the training data under `dir/train`.
pub fn write_synth(cfg: &SynthConfig, dir: &Path) -> Result<()> {
    let tasks = dir.join("tasks");
    fs::create_dir_all(&tasks).map_err(|e| Error::io(&tasks, e))?;
    for ds in synth_suite(cfg)? {
        write_task_dataset(&ds, &tasks)?;
    }
    write_training_data(&synth_training(cfg)?, &dir.join("train"))
}

/// Two retrieval tasks over one corpus that differ only in which genre of
/// passage is relevant. Queries carry no genre cue, so only an instruction
/// can tell the tasks apart.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreTasks {
    pub train: Vec<LabeledTaskPair>,
    pub pool: Vec<String>,
    pub instructions: BTreeMap<String, String>,
    /// One retrieval dataset per task, named after its tag.
    pub eval: Vec<TaskDataset>,
}

pub const GENRES: [&str; 2] = ["news", "forum"];
const GENRE_MARKERS: usize = 6;
const DOC_MARKERS: usize = 2;

pub fn genre_tasks(cfg: &SynthConfig) -> Result<GenreTasks> {
    cfg.validate()?;
    let world = World::new(cfg.topics, cfg.seed);
    let k = cfg.topics;
    let n = cfg.size;
    let mut rng = rng_for(cfg.seed, 20);
    let mut taken: BTreeSet<String> = world
        .topics
        .iter()
        .flatten()
        .flatten()
        .chain(&world.filler)
        .cloned()
        .collect();
    let markers: Vec<Vec<String>> = GENRES
        .iter()
        .map(|_| pseudo_words(GENRE_MARKERS, &mut rng, &mut taken))
        .collect();
    let doc = |t: usize, g: usize, rng: &mut ChaCha8Rng| {
        let mut text = world.doc(t, rng);
        for _ in 0..DOC_MARKERS {
            text.push(' ');
            text.push_str(markers[g].choose(rng).unwrap());
        }
        text
    };

    let mut instructions = BTreeMap::new();
    instructions.insert(
        GENRES[0].to_string(),
        "find a news report about".to_string(),
    );
    instructions.insert(
        GENRES[1].to_string(),
        "find a forum discussion about".to_string(),
    );

    let mut train = Vec::with_capacity(n);
    for (i, t) in topic_cycle(n, k, &mut rng).into_iter().enumerate() {
        let g = i % 2;
        train.push(LabeledTaskPair {
            pair: TextPair::new(world.query(t, &mut rng), doc(t, g, &mut rng), "synth-genre"),
            task: GENRES[g].into(),
            neg: None,
        });
    }
    let mut pool: Vec<String> = train.iter().map(|p| p.pair.passage.clone()).collect();
    for (i, t) in topic_cycle(n, k, &mut rng).into_iter().enumerate() {
        pool.push(doc(t, i % 2, &mut rng));
    }

    // Shared eval corpus; each topic has documents of both genres.
    let docs = n;
    let labels: Vec<(usize, usize)> = topic_cycle(docs, k, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, (i / k) % 2))
        .collect();
    let corpus: Vec<(String, String)> = labels
        .iter()
        .enumerate()
        .map(|(i, &(t, g))| (format!("d{i:05}"), doc(t, g, &mut rng)))
        .collect();
    let mut eval = Vec::new();
    for (g, tag) in GENRES.iter().enumerate() {
        let mut qrels = BTreeMap::new();
        let queries = topic_cycle((n / 4).max(k), k, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let id = format!("q{i:05}");
                let rel = labels
                    .iter()
                    .zip(&corpus)
                    .filter(|((dt, dg), _)| *dt == t && *dg == g)
                    .map(|(_, (d, _))| (d.clone(), 1u32))
                    .collect();
                qrels.insert(id.clone(), rel);
                (id, world.query(t, &mut rng))
            })
            .collect();
        eval.push(
            TaskDataset {
                name: tag.to_string(),
                payload: TaskPayload::Retrieval(RetrievalSet {
                    corpus: corpus.clone(),
                    queries,
                    qrels,
                }),
            }
            .validate()?,
        );
    }
    Ok(GenreTasks {
        train,
        pool,
        instructions,
        eval,
    })
}
