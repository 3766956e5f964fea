use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{attach_instruction, LabeledTaskPair};
use crate::curation::normalize_text;
use crate::datamodel::{dot, normalize_rows, Side};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub mined: usize,
    /// Pairs whose rank window was empty after excluding the positive; they
    /// received the highest-ranked non-positive instead.
    pub fallbacks: usize,
}

/// Ranks `pool` by cosine to each instructed query and draws one negative
/// per pair uniformly from ranks `window.0..=window.1` (1-based, counted
/// after removing passages textually equal to the positive).
///
/// Pairs that already carry a negative are re-mined too; callers that want
/// to keep given negatives should pass only the pairs lacking one.
pub fn mine_hard_negatives<E: Encoder + ?Sized>(
    encoder: &E,
    pairs: &[LabeledTaskPair],
    pool: &[String],
    instructions: &BTreeMap<String, String>,
    window: (usize, usize),
    seed: u64,
) -> Result<(Vec<LabeledTaskPair>, MiningStats)> {
    let (lo, hi) = window;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid rank window [{lo}, {hi}]")));
    }
    if pairs.is_empty() {
        return Ok((Vec::new(), MiningStats::default()));
    }
    let queries = pairs
        .iter()
        .map(|p| attach_instruction(&p.pair.query, &p.task, instructions))
        .collect::<Result<Vec<_>>>()?;
    let q = normalize_rows(&encoder.encode(&queries, Side::Query)?)?;
    let c = normalize_rows(&encoder.encode(pool, Side::Passage)?)?;
    let pool_keys: Vec<String> = pool.par_iter().map(|t| normalize_text(t)).collect();

    // Candidates in rank order, truncated to what the window can reach.
    let ranked: Vec<Vec<usize>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let positive = normalize_text(&p.pair.passage);
            let qi = q.row(i);
            let mut scored: Vec<(f64, usize)> = (0..c.rows())
                .filter(|&j| pool_keys[j] != positive)
                .map(|j| (dot(qi, c.row(j)), j))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.truncate(hi);
            scored.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = MiningStats::default();
    let mut out = Vec::with_capacity(pairs.len());
    for (p, cands) in pairs.iter().zip(&ranked) {
        let Some(&top) = cands.first() else {
            return Err(Error::InvalidInput(format!(
                "no non-positive passage in the pool for query '{}'",
                p.pair.query
            )));
        };
        let pick = if cands.len() >= lo {
            cands[rng.gen_range(lo - 1..cands.len())]
        } else {
            stats.fallbacks += 1;
            top
        };
        stats.mined += 1;
        let mut mined = p.clone();
        mined.neg = Some(pool[pick].clone());
        out.push(mined);
    }
    if stats.fallbacks > 0 {
        log::warn!(
            "{} pair(s) fell back to the top-ranked non-positive",
            stats.fallbacks
        );
    }
    Ok((out, stats))
}
