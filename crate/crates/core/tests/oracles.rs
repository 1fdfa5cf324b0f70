//! Aggregation and ranking against naive reference implementations.

use bsc_core::aggregation::{aggregate_scores, kemeny_aggregate_with, kendall_tau_distance, rank_by_score};
use bsc_core::model::{AggregatedScore, CandidateList, Judgment, Ranking};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

/// Insertion sort: moves an item left only past strictly lower scores.
fn naive_rank(order: &[String], scores: &[f64]) -> Vec<String> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (id, &s) in order.iter().zip(scores) {
        let at = out.iter().position(|(_, t)| *t < s).unwrap_or(out.len());
        out.insert(at, (id.clone(), s));
    }
    out.into_iter().map(|(id, _)| id).collect()
}

fn naive_kendall(a: &[String], b: &[String]) -> u64 {
    let pos = |x: &String| b.iter().position(|y| y == x).unwrap();
    let mut d = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if pos(&a[i]) > pos(&a[j]) {
                d += 1;
            }
        }
    }
    d
}

fn permuted(n: usize, keys: &[u32]) -> Vec<String> {
    let mut v: Vec<(u32, String)> = keys.iter().copied().zip(ids(n)).collect();
    v.sort();
    v.into_iter().map(|(_, id)| id).collect()
}

proptest! {
    #[test]
    fn stable_descending_rank(scores in prop::collection::vec(0u8..=12, 1..40)) {
        let order = ids(scores.len());
        let list = CandidateList::new("q", order.clone()).unwrap();
        let means: Vec<f64> = scores.iter().map(|&s| f64::from(s) / 4.0).collect();
        let aggregated: Vec<AggregatedScore> = order
            .iter()
            .zip(&means)
            .map(|(id, &score)| AggregatedScore { query_id: "q".into(), passage_id: id.clone(), score, support: 4 })
            .collect();
        let ranking = rank_by_score(&list, &aggregated).unwrap();
        prop_assert_eq!(ranking.order, naive_rank(&order, &means));
    }

    #[test]
    fn mean_of_judgments(scores in prop::collection::vec(0u8..=3, 1..16)) {
        let js: Vec<Judgment> = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Judgment { query_id: "q".into(), passage_id: "p".into(), call_index: i as u32 + 1, score })
            .collect();
        let m = scores.len() as u32;
        let got = aggregate_scores(&js, m).unwrap();
        let expected = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / f64::from(m);
        prop_assert!((got.score - expected).abs() < 1e-12);
        prop_assert_eq!(got.support, m);
        prop_assert!(aggregate_scores(&js, m + 1).is_err());
    }

    #[test]
    fn kendall_matches_pair_count(keys_a in prop::collection::vec(any::<u32>(), 1..30), seed in any::<u64>()) {
        let n = keys_a.len();
        let keys_b: Vec<u32> = keys_a.iter().map(|k| k.wrapping_mul(2_654_435_761).wrapping_add(seed as u32)).collect();
        let a = permuted(n, &keys_a);
        let b = permuted(n, &keys_b);
        let got = kendall_tau_distance(&Ranking::new("q", a.clone()), &Ranking::new("q", b.clone())).unwrap();
        prop_assert_eq!(got, naive_kendall(&a, &b));
    }

    #[test]
    fn approximate_consensus_is_no_worse_than_any_input(
        inputs in prop::collection::vec(prop::collection::vec(any::<u32>(), 24), 1..6)
    ) {
        let rankings: Vec<Ranking> = inputs.iter().map(|k| Ranking::new("q", permuted(24, k))).collect();
        let cost = |r: &Ranking| -> u64 { rankings.iter().map(|x| naive_kendall(&r.order, &x.order)).sum() };
        let result = kemeny_aggregate_with(&rankings, 18).unwrap();
        prop_assert!(!result.exact);
        prop_assert_eq!(result.objective, cost(&result.ranking));
        let best_input = rankings.iter().map(cost).min().unwrap();
        prop_assert!(result.objective <= best_input);
    }
}

#[test]
fn exact_and_approximate_agree_on_small_inputs() {
    let rankings: Vec<Ranking> = [[0u32, 1, 2, 3, 4, 5], [1, 0, 2, 3, 5, 4], [0, 2, 1, 3, 4, 5], [5, 4, 3, 2, 1, 0]]
        .iter()
        .map(|k| Ranking::new("q", permuted(6, k)))
        .collect();
    let exact = kemeny_aggregate_with(&rankings, 18).unwrap();
    let approx = kemeny_aggregate_with(&rankings, 0).unwrap();
    assert!(exact.exact && !approx.exact);
    assert!(approx.objective >= exact.objective);
    assert_eq!(exact.ranking.order, ids(6));
}
