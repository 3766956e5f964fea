mod support;

use std::time::Instant;

use embkit::metrics::{
    average_precision, fractional_ranks, mean_average_precision, ndcg_at_k, spearman, v_measure,
    RankedList,
};
use proptest::prelude::*;
use support::*;

#[test]
fn thousand_random_instances_match_brute_force() {
    let t = Instant::now();
    let s = metric_oracle_sweep(1000, 11);
    assert_eq!(s.definedness_mismatches, 0, "{s:?}");
    assert!(s.worst() <= 1e-10, "{s:?}");
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn different_seeds_agree_too() {
    for seed in [1, 2, 3] {
        let s = metric_oracle_sweep(300, seed);
        assert_eq!(s.definedness_mismatches, 0);
        assert!(s.worst() <= 1e-10, "seed {seed}: {s:?}");
    }
}

fn ranked(rels: &[u32]) -> RankedList {
    RankedList::new(
        rels.iter()
            .enumerate()
            .map(|(i, &r)| (format!("d{i}"), -(i as f64), r))
            .collect(),
    )
}

#[test]
fn hand_evaluated_values() {
    let expect = 1.0 / 3f64.log2();
    assert!((ndcg_at_k(&ranked(&[0, 1]), &[1], 10) - expect).abs() < 1e-15);
    assert!((expect - 0.63093).abs() < 5e-6);
    assert_eq!(average_precision(&[false, true]).unwrap(), 0.5);
    let two = vec![vec![true, false], vec![false, true]];
    assert_eq!(mean_average_precision(&two).unwrap(), 0.75);
    assert_eq!(
        v_measure(&["a", "a", "b", "b"], &[1, 1, 2, 2]).unwrap(),
        1.0
    );
    assert_eq!(
        v_measure(&["a", "a", "b", "b"], &[1, 1, 1, 1]).unwrap(),
        0.0
    );
}

#[test]
fn spearman_tie_case_matches_explicit_ranks() {
    let (x, y) = ([1.0, 2.0, 2.0, 3.0], [1.0, 3.0, 2.0, 4.0]);
    assert_eq!(average_ranks(&x), vec![1.0, 2.5, 2.5, 4.0]);
    let lib = spearman(&x, &y).unwrap();
    assert!((lib - spearman_oracle(&x, &y).unwrap()).abs() < 1e-12);
}

#[test]
fn v_measure_two_by_two_table() {
    let truth = [0u32, 0, 1, 1];
    let pred = [1u32, 1, 1, 2];
    let lib = v_measure(&truth, &pred).unwrap();
    assert!((lib - v_measure_oracle(&truth, &pred)).abs() < 1e-12);
    // H(C) = ln 2, H(C|K) = 3/4 H(2/3), H(K) = H(3/4), H(K|C) = 1/2 ln 2
    let h = |p: f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
    let homo = 1.0 - 0.75 * h(2.0 / 3.0) / 2f64.ln();
    let comp = 1.0 - 0.5 * 2f64.ln() / h(0.75);
    let expect = 2.0 * homo * comp / (homo + comp);
    assert!((lib - expect).abs() < 1e-12);
}

fn permutations(v: &[bool]) -> Vec<Vec<bool>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_is_at_least_the_worst_ordering(labels in proptest::collection::vec(any::<bool>(), 1..=7)) {
        prop_assume!(labels.iter().any(|&l| l));
        let worst = permutations(&labels)
            .iter()
            .map(|p| average_precision(p).unwrap())
            .fold(f64::INFINITY, f64::min);
        let ap = average_precision(&labels).unwrap();
        prop_assert!(ap + 1e-12 >= worst);
        prop_assert!(worst > 0.0);
    }

    #[test]
    fn ndcg_is_in_unit_interval(rels in proptest::collection::vec(0u32..4, 1..12), k in 1usize..12) {
        let v = ndcg_at_k(&ranked(&rels), &rels, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn ideal_order_scores_one(mut rels in proptest::collection::vec(0u32..4, 1..12), k in 1usize..12) {
        prop_assume!(rels.iter().any(|&r| r > 0));
        rels.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert!((ndcg_at_k(&ranked(&rels), &rels, k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_symmetric_and_bounded(
        x in proptest::collection::vec(0i32..6, 3..12),
        y in proptest::collection::vec(0i32..6, 3..12),
    ) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
        if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&y, &x)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn fractional_ranks_sum_to_triangular(x in proptest::collection::vec(0i32..5, 1..12)) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let n = x.len() as f64;
        let total: f64 = fractional_ranks(&x).iter().sum();
        prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn v_measure_ignores_cluster_renaming(
        t in proptest::collection::vec(0u32..3, 1..12),
        p in proptest::collection::vec(0u32..3, 1..12),
    ) {
        let n = t.len().min(p.len());
        let renamed: Vec<u32> = p[..n].iter().map(|c| 10 + 2 - c).collect();
        let a = v_measure(&t[..n], &p[..n]).unwrap();
        let b = v_measure(&t[..n], &renamed).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }
}
