//! Main metrics of the six benchmark task families.
//!
//! All functions are pure. Rankings are always ordered by descending score
//! with ties broken by ascending id, so results are reproducible bit-for-bit.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// A scored ranking of documents with their judged relevance grades.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    items: Vec<(String, f64, u32)>,
}

impl RankedList {
    /// Sorts `(doc_id, score, relevance)` triples into canonical order.
    pub fn new(mut items: Vec<(String, f64, u32)>) -> Self {
        items.sort_by(|a, b| by_score_then_id(a.1, &a.0, b.1, &b.0));
        RankedList { items }
    }

    pub fn items(&self) -> &[(String, f64, u32)] {
        &self.items
    }

    pub fn relevances(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().map(|it| it.2)
    }
}

/// Descending score, then ascending id.
pub fn by_score_then_id<I: Ord + ?Sized>(sa: f64, ia: &I, sb: f64, ib: &I) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ia.cmp(ib))
}

/// Indices of `scores` in canonical ranking order, using the index as the id.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| by_score_then_id(scores[a], &a, scores[b], &b));
    idx
}

fn dcg(rels: impl Iterator<Item = u32>, k: usize) -> f64 {
    rels.take(k)
        .enumerate()
        .map(|(i, r)| r as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with linear gain. Returns 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranked: &RankedList, ideal_rels: &[u32], k: usize) -> f64 {
    let mut ideal = ideal_rels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(ranked.relevances(), k) / idcg
}

/// Average precision of an already-ordered list of binary labels.
pub fn average_precision(ranked_labels: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranked_labels.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs a positive".into(),
        ));
    }
    Ok(sum / hits as f64)
}

/// Mean of per-query AP. Queries with no positives or no negatives are skipped.
pub fn mean_average_precision(per_query: &[Vec<bool>]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for labels in per_query {
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == labels.len() {
            continue;
        }
        total += average_precision(labels)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "MAP: every query lacks positives or negatives".into(),
        ));
    }
    Ok(total / used as f64)
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "correlation needs at least 2 points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput(
            "correlation of a constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// V-measure (harmonic mean of homogeneity and completeness), natural-log entropies.
pub fn v_measure<A, B>(labels_true: &[A], labels_pred: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if labels_true.len() != labels_pred.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            labels_true.len(),
            labels_pred.len()
        )));
    }
    if labels_true.is_empty() {
        return Err(Error::InvalidInput("v-measure of an empty labeling".into()));
    }
    let n = labels_true.len() as f64;
    let mut classes: HashMap<&A, usize> = HashMap::new();
    let mut clusters: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (a, b) in labels_true.iter().zip(labels_pred) {
        let nc = classes.len();
        let ci = *classes.entry(a).or_insert(nc);
        let nk = clusters.len();
        let ki = *clusters.entry(b).or_insert(nk);
        *joint.entry((ci, ki)).or_default() += 1;
    }
    let mut class_sizes = vec![0usize; classes.len()];
    let mut cluster_sizes = vec![0usize; clusters.len()];
    let mut cells: Vec<((usize, usize), usize)> = joint.into_iter().collect();
    cells.sort_unstable();
    for &((c, k), v) in &cells {
        class_sizes[c] += v;
        cluster_sizes[k] += v;
    }
    let h_c = entropy(class_sizes.iter().copied(), n);
    let h_k = entropy(cluster_sizes.iter().copied(), n);
    // H(C|K) = -sum n_ck/n ln(n_ck/n_k); H(K|C) symmetric
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for &((c, k), v) in &cells {
        let p = v as f64 / n;
        h_c_given_k -= p * (v as f64 / cluster_sizes[k] as f64).ln();
        h_k_given_c -= p * (v as f64 / class_sizes[c] as f64).ln();
    }
    let h = if h_c == 0.0 {
        1.0
    } else {
        1.0 - h_c_given_k / h_c
    };
    let c = if h_k == 0.0 {
        1.0
    } else {
        1.0 - h_k_given_c / h_k
    };
    if h + c == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * h * c / (h + c))
}

pub fn accuracy<T: PartialEq>(labels_true: &[T], labels_pred: &[T]) -> Result<f64> {
    if labels_true.len() != labels_pred.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            labels_true.len(),
            labels_pred.len()
        )));
    }
    if labels_true.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty labeling".into()));
    }
    let hits = labels_true
        .iter()
        .zip(labels_pred)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / labels_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(rels: &[u32]) -> RankedList {
        RankedList::new(
            rels.iter()
                .enumerate()
                .map(|(i, &r)| (format!("d{i}"), -(i as f64), r))
                .collect(),
        )
    }

    #[test]
    fn ndcg_perfect() {
        assert_eq!(ndcg_at_k(&ranked(&[1, 1]), &[1, 1], 10), 1.0);
    }

    #[test]
    fn ndcg_second_position() {
        let v = ndcg_at_k(&ranked(&[0, 1]), &[1], 10);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 5e-6);
    }

    #[test]
    fn ndcg_no_hits_and_no_judgments() {
        assert_eq!(ndcg_at_k(&ranked(&[0, 0]), &[1], 10), 0.0);
        assert_eq!(ndcg_at_k(&ranked(&[1]), &[], 10), 0.0);
    }

    #[test]
    fn ranked_list_breaks_ties_by_id() {
        let r = RankedList::new(vec![
            ("b".into(), 1.0, 0),
            ("a".into(), 1.0, 1),
            ("c".into(), 2.0, 0),
        ]);
        let ids: Vec<&str> = r.items().iter().map(|i| i.0.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, true]).unwrap(), 0.5);
        assert!(matches!(
            average_precision(&[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn map_cases() {
        let v = mean_average_precision(&[vec![true, false], vec![false, true]]).unwrap();
        assert_eq!(v, 0.75);
        assert!(mean_average_precision(&[vec![true, true]]).is_err());
        let v = mean_average_precision(&[vec![false, true, false], vec![true]]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(),
            -1.0
        );
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(
            fractional_ranks(&[1.0, 2.0, 2.0, 3.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
    }

    #[test]
    fn v_measure_trivial_cases() {
        assert_eq!(v_measure(&["a", "a", "b"], &[1, 1, 2]).unwrap(), 1.0);
        assert_eq!(
            v_measure(&["a", "a", "b", "b"], &[0, 0, 0, 0]).unwrap(),
            0.0
        );
        assert!(v_measure(&["a"], &[1, 2]).is_err());
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[2, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }
}
