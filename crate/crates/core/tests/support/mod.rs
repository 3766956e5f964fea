//! Shared test helpers: brute-force metric oracles, random instance
//! generators, finite-difference gradient checks, a lookup-table encoder and
//! a curation fixture. Also compiled into the CLI acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use embkit::curation::{PairScorer, QaItem, StructuredDoc};
use embkit::encoder::{EncoderModel, Gradients, ModelShape};
use embkit::metrics::{
    accuracy, average_precision, mean_average_precision, ndcg_at_k, spearman, v_measure, RankedList,
};
use embkit::trainer::{
    contrastive_loss_and_grads, mae_loss_and_grads, mask_tokens, MaeDecoder, MaskedText,
};
use embkit::{EmbeddingMatrix, Error, Result, Side, TextPair};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Metric oracles. Each recomputes its metric straight from the textbook
// formula with no shared code paths.

/// Selection sort on (score desc, id asc), then the DCG sum with `ln` logs.
pub fn ndcg_oracle(items: &[(String, f64, u32)], judged: &[u32], k: usize) -> f64 {
    let mut left: Vec<&(String, f64, u32)> = items.iter().collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (left[i], left[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = i;
            }
        }
        order.push(left.remove(best).2);
    }
    let dcg = |rels: &[u32]| -> f64 {
        let mut s = 0.0;
        for (i, &r) in rels.iter().enumerate().take(k) {
            s += r as f64 * std::f64::consts::LN_2 / ((i + 2) as f64).ln();
        }
        s
    };
    let mut ideal = judged.to_vec();
    let mut sorted = Vec::new();
    while !ideal.is_empty() {
        let (pos, _) = ideal.iter().enumerate().max_by_key(|(_, r)| **r).unwrap();
        sorted.push(ideal.remove(pos));
    }
    let idcg = dcg(&sorted);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(&order) / idcg
    }
}

/// Precision at each hit, recounting the prefix every time.
pub fn ap_oracle(labels: &[bool]) -> Option<f64> {
    let mut precisions = Vec::new();
    for i in 0..labels.len() {
        if labels[i] {
            let hits = labels[..=i].iter().filter(|&&l| l).count();
            precisions.push(hits as f64 / (i + 1) as f64);
        }
    }
    if precisions.is_empty() {
        None
    } else {
        Some(precisions.iter().sum::<f64>() / precisions.len() as f64)
    }
}

pub fn map_oracle(queries: &[Vec<bool>]) -> Option<f64> {
    let valid: Vec<f64> = queries
        .iter()
        .filter(|q| q.iter().any(|&l| l) && q.iter().any(|&l| !l))
        .map(|q| ap_oracle(q).unwrap())
        .collect();
    if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    }
}

/// Average rank of each value: 1 + #smaller + (#equal - 1) / 2.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let less = x.iter().filter(|b| *b < a).count() as f64;
            let eq = x.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

/// Rank, then Pearson via raw sums. `None` when either side is constant.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let sx: f64 = rx.iter().sum();
    let sy: f64 = ry.iter().sum();
    let sxx: f64 = rx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| v * v).sum();
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx.abs() < 1e-9 || vy.abs() < 1e-9 {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx * vy).sqrt())
}

/// Entropies from an explicit contingency table over sorted label lists.
pub fn v_measure_oracle(truth: &[u32], pred: &[u32]) -> f64 {
    let mut classes: Vec<u32> = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut clusters: Vec<u32> = pred.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let n = truth.len() as f64;
    let table: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| {
            clusters
                .iter()
                .map(|k| {
                    truth
                        .iter()
                        .zip(pred)
                        .filter(|(a, b)| *a == c && *b == k)
                        .count() as f64
                })
                .collect()
        })
        .collect();
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..clusters.len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let (hc, hk) = (h(&row), h(&col));
    let mut hc_k = 0.0;
    let mut hk_c = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v > 0.0 {
                hc_k -= v / n * (v / col[j]).ln();
                hk_c -= v / n * (v / row[i]).ln();
            }
        }
    }
    let homogeneity = if hc == 0.0 { 1.0 } else { 1.0 - hc_k / hc };
    let completeness = if hk == 0.0 { 1.0 } else { 1.0 - hk_c / hk };
    if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    }
}

pub fn accuracy_oracle(truth: &[u32], pred: &[u32]) -> f64 {
    let mut hits = 0.0;
    for i in 0..truth.len() {
        if truth[i] == pred[i] {
            hits += 1.0;
        }
    }
    hits / truth.len() as f64
}

/// Largest disagreement between library and oracle, per metric.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleSweep {
    pub ndcg: f64,
    pub ap: f64,
    pub map: f64,
    pub spearman: f64,
    pub v_measure: f64,
    pub accuracy: f64,
    /// Cases where exactly one side reported the metric as undefined.
    pub definedness_mismatches: usize,
}

impl OracleSweep {
    pub fn worst(&self) -> f64 {
        [
            self.ndcg,
            self.ap,
            self.map,
            self.spearman,
            self.v_measure,
            self.accuracy,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn bools(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    (0..len).map(|_| rng.gen_bool(0.4)).collect()
}

/// Coarse values so that ties are common.
fn tied_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.gen_range(0..5) as f64 * 0.25)
        .collect()
}

fn labels(rng: &mut ChaCha8Rng, len: usize, alphabet: u32) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
}

fn track<T>(worst: &mut f64, mismatches: &mut usize, lib: Result<f64>, oracle: Option<T>)
where
    T: Into<f64>,
{
    match (lib, oracle) {
        (Ok(a), Some(b)) => *worst = worst.max((a - b.into()).abs()),
        (Err(_), None) => {}
        _ => *mismatches += 1,
    }
}

/// Compares every metric with its oracle on `instances` random inputs of
/// length at most 12.
pub fn metric_oracle_sweep(instances: usize, seed: u64) -> OracleSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = OracleSweep::default();
    let mut mm = 0;
    for _ in 0..instances {
        let len = rng.gen_range(1..=12);

        let mut ids: Vec<usize> = (0..len).collect();
        ids.shuffle(&mut rng);
        let items: Vec<(String, f64, u32)> = ids
            .iter()
            .map(|i| {
                (
                    format!("d{i:02}"),
                    rng.gen_range(0..4) as f64 / 3.0,
                    rng.gen_range(0..3),
                )
            })
            .collect();
        let mut judged: Vec<u32> = items.iter().map(|it| it.2).collect();
        for _ in 0..rng.gen_range(0..3) {
            judged.push(rng.gen_range(1..3));
        }
        let k = rng.gen_range(1..=12);
        let lib = ndcg_at_k(&RankedList::new(items.clone()), &judged, k);
        s.ndcg = s.ndcg.max((lib - ndcg_oracle(&items, &judged, k)).abs());

        let l = bools(&mut rng, len);
        track(&mut s.ap, &mut mm, average_precision(&l), ap_oracle(&l));

        let qs: Vec<Vec<bool>> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let n = rng.gen_range(1..=12);
                bools(&mut rng, n)
            })
            .collect();
        track(
            &mut s.map,
            &mut mm,
            mean_average_precision(&qs),
            map_oracle(&qs),
        );

        let n = rng.gen_range(2..=12);
        let (x, y) = (tied_values(&mut rng, n), tied_values(&mut rng, n));
        track(
            &mut s.spearman,
            &mut mm,
            spearman(&x, &y),
            spearman_oracle(&x, &y),
        );

        let (t, p) = (labels(&mut rng, len, 3), labels(&mut rng, len, 4));
        let v = v_measure(&t, &p).expect("non-empty labeling");
        s.v_measure = s.v_measure.max((v - v_measure_oracle(&t, &p)).abs());

        let (t, p) = (labels(&mut rng, len, 3), labels(&mut rng, len, 3));
        let a = accuracy(&t, &p).expect("non-empty labeling");
        s.accuracy = s.accuracy.max((a - accuracy_oracle(&t, &p)).abs());
    }
    s.definedness_mismatches = mm;
    s
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks on small random models.

pub const FD_STEP: f64 = 1e-4;

const WORDS: usize = 40;

pub fn small_model(seed: u64) -> EncoderModel {
    let mut model = EncoderModel::new(ModelShape {
        vocab: 64,
        embed_dim: 8,
        out_dim: 8,
        seed,
        ..ModelShape::default()
    })
    .unwrap();
    // a generic projection, so no coordinate is trivially zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let (table, proj) = model.params_mut();
    for v in table.iter_mut() {
        *v *= 8.0;
    }
    for v in proj.iter_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    model
}

pub fn random_text(rng: &mut ChaCha8Rng, min_words: usize, max_words: usize) -> String {
    let n = rng.gen_range(min_words..=max_words);
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..WORDS)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn dense(model: &EncoderModel, g: &Gradients) -> Vec<f64> {
    let d = model.embed_dim();
    let mut out = vec![0.0; model.vocab() * d];
    for (&t, row) in &g.table {
        out[t as usize * d..(t as usize + 1) * d].copy_from_slice(row);
    }
    out.extend_from_slice(&g.projection);
    out
}

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn encoder_param(m: &mut EncoderModel, which: usize, i: usize) -> &mut f64 {
    let (table, proj) = m.params_mut();
    if which == 0 {
        &mut table[i]
    } else {
        &mut proj[i]
    }
}

fn decoder_param(d: &mut MaeDecoder, which: usize, i: usize) -> &mut f64 {
    let (weights, bias) = d.params_mut();
    if which == 0 {
        &mut weights[i]
    } else {
        &mut bias[i]
    }
}

/// Central difference of `loss` in the parameter reached by `slot`.
fn central<P>(p: &mut P, slot: impl Fn(&mut P) -> &mut f64, loss: impl Fn(&P) -> f64) -> f64 {
    let orig = *slot(p);
    *slot(p) = orig + FD_STEP;
    let up = loss(p);
    *slot(p) = orig - FD_STEP;
    let down = loss(p);
    *slot(p) = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Central differences over every encoder parameter (token table, then projection).
fn fd_encoder(model: &EncoderModel, loss: impl Fn(&EncoderModel) -> f64) -> Vec<f64> {
    let mut m = model.clone();
    let sizes = [m.params_mut().0.len(), m.params_mut().1.len()];
    let mut out = Vec::with_capacity(sizes[0] + sizes[1]);
    for (which, len) in sizes.into_iter().enumerate() {
        for i in 0..len {
            out.push(central(&mut m, |m| encoder_param(m, which, i), &loss));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ContrastiveInstance {
    pub model: EncoderModel,
    pub queries: Vec<String>,
    pub passages: Vec<String>,
    pub hard: Option<Vec<String>>,
    pub temperature: f64,
}

pub fn contrastive_instance(seed: u64) -> ContrastiveInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.gen_range(1..=6);
    let mut texts = |n: usize| {
        (0..n)
            .map(|_| random_text(&mut rng, 1, 5))
            .collect::<Vec<_>>()
    };
    let queries = texts(b);
    let passages = texts(b);
    let hard = texts(b);
    ContrastiveInstance {
        model: small_model(seed),
        queries,
        passages,
        hard: seed.is_multiple_of(2).then_some(hard),
        temperature: ChaCha8Rng::seed_from_u64(seed ^ 7).gen_range(0.1..1.0),
    }
}

/// Relative error of the contrastive gradient through the encoder.
pub fn contrastive_fd_error(inst: &ContrastiveInstance) -> f64 {
    let run = |m: &EncoderModel| {
        contrastive_loss_and_grads(
            m,
            &inst.queries,
            &inst.passages,
            inst.hard.as_deref(),
            inst.temperature,
        )
        .unwrap()
    };
    let (_, grads) = run(&inst.model);
    let numeric = fd_encoder(&inst.model, |m| run(m).0);
    relative_error(&dense(&inst.model, &grads), &numeric)
}

#[derive(Debug, Clone)]
pub struct MaeInstance {
    pub model: EncoderModel,
    pub decoder: MaeDecoder,
    pub batch: Vec<MaskedText>,
}

pub fn mae_instance(seed: u64) -> MaeInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = small_model(seed);
    let b = rng.gen_range(1..=6);
    let ratio = rng.gen_range(0.1..0.9);
    let batch = (0..b)
        .map(|_| {
            let text = random_text(&mut rng, 2, 6);
            mask_tokens(model.tokens(&text), ratio, &mut rng).expect("two or more tokens")
        })
        .collect();
    MaeInstance {
        decoder: MaeDecoder::new(64, 8, seed),
        model,
        batch,
    }
}

/// Relative error of the masked-reconstruction gradient over encoder and
/// decoder parameters together.
pub fn mae_fd_error(inst: &MaeInstance) -> f64 {
    let loss_of =
        |m: &EncoderModel, d: &MaeDecoder| mae_loss_and_grads(m, d, &inst.batch).unwrap().0;
    let (_, g, dg) = mae_loss_and_grads(&inst.model, &inst.decoder, &inst.batch).unwrap();
    let mut analytic = dense(&inst.model, &g);
    analytic.extend_from_slice(&dg.weights);
    analytic.extend_from_slice(&dg.bias);

    let mut numeric = fd_encoder(&inst.model, |m| loss_of(m, &inst.decoder));
    let mut dec = inst.decoder.clone();
    let sizes = [dec.params_mut().0.len(), dec.params_mut().1.len()];
    for (which, len) in sizes.into_iter().enumerate() {
        for i in 0..len {
            let g = central(
                &mut dec,
                |d| decoder_param(d, which, i),
                |d| loss_of(&inst.model, d),
            );
            numeric.push(g);
        }
    }
    relative_error(&analytic, &numeric)
}

// ---------------------------------------------------------------------------
// Encoders with hand-placed vectors.

/// Returns a fixed vector per text; unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct LookupEncoder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f32>>,
}

impl LookupEncoder {
    pub fn new(dim: usize) -> Self {
        LookupEncoder {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn with(mut self, text: &str, v: &[f32]) -> Self {
        assert_eq!(v.len(), self.dim);
        self.table.insert(text.to_string(), v.to_vec());
        self
    }
}

impl embkit::encoder::Encoder for LookupEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[String], _side: Side) -> Result<EmbeddingMatrix> {
        let rows = texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no vector for '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::from_rows(self.dim, &rows)
    }
}

// ---------------------------------------------------------------------------
// Curation fixture.

/// Scores pairs from a table keyed by query; unknown queries score 0.
#[derive(Debug, Clone, Default)]
pub struct TableScorer(pub BTreeMap<String, f64>);

impl PairScorer for TableScorer {
    fn score(&self, pair: &TextPair) -> Result<f64> {
        Ok(self.0.get(&pair.query).copied().unwrap_or(0.0))
    }
}

const FIXTURE: [(&str, &str, f64); 8] = [
    (
        "how do solar panels work",
        "they turn sunlight into current",
        0.90,
    ),
    (
        "what is a tidal pool",
        "a rock basin left by the ebbing sea",
        0.43,
    ),
    ("why do cats purr", "nobody is entirely sure about it", 0.42),
    ("best way to boil an egg", "the train leaves at nine", 0.10),
    (
        "who wrote the odyssey",
        "the epic is credited to homer",
        0.70,
    ),
    ("how tall is a giraffe", "pasta needs salted water", 0.30),
    ("what do bees eat", "nectar and pollen from flowers", 0.55),
    ("where is lake baikal", "in southern siberia, russia", 0.80),
];

/// Writes two document files yielding 10 raw pairs: 8 distinct plus two
/// near-duplicates (case and spacing changes). Three distinct pairs score
/// below 0.43, one scores exactly 0.43. Returns the inputs and the scorer.
pub fn write_curation_fixture(dir: &Path) -> (Vec<PathBuf>, Arc<TableScorer>) {
    let qa = |rows: &[(&str, &str)]| StructuredDoc {
        title: None,
        sections: Vec::new(),
        qa: rows
            .iter()
            .map(|(q, a)| QaItem {
                q: q.to_string(),
                a: a.to_string(),
            })
            .collect(),
        source: "faq".into(),
    };
    let first: Vec<(&str, &str)> = FIXTURE[..5].iter().map(|r| (r.0, r.1)).collect();
    let mut second: Vec<(&str, &str)> = FIXTURE[5..].iter().map(|r| (r.0, r.1)).collect();
    second.push((
        "How do solar  panels work",
        "They turn sunlight into current",
    ));
    second.push(("who wrote the ODYSSEY", "the epic is credited to  homer"));
    let paths = vec![dir.join("a.jsonl"), dir.join("b.jsonl")];
    for (path, rows) in paths.iter().zip([first, second]) {
        let mut text = String::new();
        for chunk in rows.chunks(2) {
            text.push_str(&serde_json::to_string(&qa(chunk)).unwrap());
            text.push('\n');
        }
        fs::write(path, text).unwrap();
    }
    let scores = FIXTURE.iter().map(|r| (r.0.to_string(), r.2)).collect();
    (paths, Arc::new(TableScorer(scores)))
}

pub fn fixture_kept_queries() -> Vec<&'static str> {
    FIXTURE
        .iter()
        .filter(|r| r.2 >= 0.43)
        .map(|r| r.0)
        .collect()
}

/// Random Q&A documents whose answers reuse a random share of the
/// question's words, so overlap scores spread over `[0, 1]`.
pub fn write_overlap_corpus(path: &Path, docs: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..300).map(|i| format!("term{i}")).collect();
    let mut text = String::new();
    for _ in 0..docs {
        let items = (0..rng.gen_range(1..=3))
            .map(|_| {
                let q: Vec<&str> = (0..rng.gen_range(3..9))
                    .map(|_| vocab.choose(&mut rng).unwrap().as_str())
                    .collect();
                let keep = rng.gen_range(0.0..=1.0);
                let a: Vec<&str> = q
                    .iter()
                    .map(|w| {
                        if rng.gen_bool(keep) {
                            *w
                        } else {
                            vocab.choose(&mut rng).unwrap().as_str()
                        }
                    })
                    .collect();
                QaItem {
                    q: q.join(" "),
                    a: a.join(" "),
                }
            })
            .collect();
        let doc = StructuredDoc {
            title: None,
            sections: Vec::new(),
            qa: items,
            source: "synthetic".into(),
        };
        text.push_str(&serde_json::to_string(&doc).unwrap());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

pub fn read_pairs(path: &Path) -> Vec<TextPair> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// True when `small` appears in order inside `big`.
pub fn is_subsequence<T: PartialEq>(small: &[T], big: &[T]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

// ---------------------------------------------------------------------------
// Training trends on the synthetic benchmark.

pub const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn trend_world(seed: u64) -> embkit::synth::SynthConfig {
    embkit::synth::SynthConfig {
        seed,
        topics: 128,
        size: 1024,
    }
}

pub fn trend_model(seed: u64) -> EncoderModel {
    EncoderModel::new(ModelShape {
        vocab: 4096,
        embed_dim: 32,
        out_dim: 32,
        seed,
        ..ModelShape::default()
    })
    .unwrap()
}

pub fn retrieval_ndcg(
    enc: &dyn embkit::encoder::Encoder,
    ds: &embkit::TaskDataset,
    instruction: Option<&str>,
) -> f64 {
    let embkit::datamodel::TaskPayload::Retrieval(r) = &ds.payload else {
        panic!("{} is not a retrieval set", ds.name)
    };
    embkit::evalsuite::run_retrieval(r, enc, 10, instruction)
        .unwrap()
        .score
}

fn general_cfg(batch: usize, seed: u64) -> embkit::trainer::TrainConfig {
    embkit::trainer::TrainConfig {
        batch_size: batch,
        steps: 50,
        learning_rate: 0.01,
        temperature: 0.05,
        seed,
        ..embkit::trainer::TrainConfig::new(embkit::trainer::Stage::General)
    }
}

fn finetune_cfg(seed: u64, instructions: BTreeMap<String, String>) -> embkit::trainer::TrainConfig {
    embkit::trainer::TrainConfig {
        batch_size: 32,
        steps: 100,
        learning_rate: 0.002,
        temperature: 0.05,
        seed,
        instructions,
        ..embkit::trainer::TrainConfig::new(embkit::trainer::Stage::Taskspecific)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Retrieval NDCG@10 after general-stage training with batch 8, 64 and 256.
pub fn batch_size_run(seed: u64) -> [f64; 3] {
    let sc = trend_world(seed);
    let suite = embkit::synth::synth_suite(&sc).unwrap();
    let data = embkit::synth::synth_training(&sc).unwrap();
    let init = trend_model(seed);
    [8, 64, 256].map(|b| {
        let mut m = init.clone();
        embkit::trainer::train_general(&mut m, &data.unlabeled, &general_cfg(b, seed)).unwrap();
        retrieval_ndcg(&m, &suite[0], None)
    })
}

/// Retrieval NDCG@10 of the random init, the general model and the
/// fine-tuned model (evaluated with its instruction) of a full recipe run.
pub fn staged_run(seed: u64) -> [f64; 3] {
    use embkit::trainer::{run_recipe, RecipeConfig, RecipeData, Stage, TrainConfig};
    let sc = trend_world(seed);
    let suite = embkit::synth::synth_suite(&sc).unwrap();
    let data = embkit::synth::synth_training(&sc).unwrap();
    let init = trend_model(seed);
    let cfg = RecipeConfig {
        pretrain: TrainConfig {
            steps: 100,
            learning_rate: 0.1,
            seed,
            ..TrainConfig::new(Stage::Pretrain)
        },
        general: general_cfg(64, seed),
        finetune: finetune_cfg(seed, data.instructions.clone()),
    };
    let d = RecipeData {
        corpus: &data.corpus,
        unlabeled: &data.unlabeled,
        labeled: &data.labeled,
        pool: &data.pool,
    };
    let out = run_recipe(init.clone(), d, &cfg, None).unwrap();
    let ins = data.instructions["retrieval"].as_str();
    [
        retrieval_ndcg(&init, &suite[0], None),
        retrieval_ndcg(&out.general, &suite[0], None),
        retrieval_ndcg(&out.finetuned, &suite[0], Some(ins)),
    ]
}

/// Mean NDCG@10 over the two genre tasks after fine-tuning from a general
/// warm start, with and without instructions.
pub fn instruction_run(seed: u64) -> [f64; 2] {
    let sc = trend_world(seed);
    let data = embkit::synth::synth_training(&sc).unwrap();
    let g = embkit::synth::genre_tasks(&sc).unwrap();
    let mut start = trend_model(seed);
    embkit::trainer::train_general(&mut start, &data.unlabeled, &general_cfg(64, seed)).unwrap();
    let blank: BTreeMap<String, String> = g
        .instructions
        .keys()
        .map(|k| (k.clone(), String::new()))
        .collect();
    [g.instructions.clone(), blank].map(|ins| {
        let mut m = start.clone();
        embkit::trainer::train_taskspecific(
            &mut m,
            &g.train,
            Some(&g.pool),
            &finetune_cfg(seed, ins.clone()),
        )
        .unwrap();
        g.eval
            .iter()
            .map(|ds| retrieval_ndcg(&m, ds, Some(&ins[&ds.name])))
            .sum::<f64>()
            / g.eval.len() as f64
    })
}
