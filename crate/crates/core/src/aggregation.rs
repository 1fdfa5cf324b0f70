//! Self-consistency aggregation: mean pointwise scores, score-sorted
//! rankings, Kendall-tau distance and Kemeny consensus.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::model::{AggregatedScore, CandidateList, Judgment, Ranking};

/// Largest list size solved exactly by the subset dynamic program.
pub const DEFAULT_EXACT_THRESHOLD: usize = 18;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("expected {expected} judgments for {query_id}/{passage_id}, found {found}")]
    IncompleteRun {
        query_id: String,
        passage_id: String,
        expected: u32,
        found: usize,
    },
    #[error("judgments mix several (query, passage) pairs")]
    MixedJudgments,
    #[error("no score for passage {0}")]
    MissingScore(String),
    #[error("rankings are over different item sets")]
    MismatchedItems,
    #[error("no rankings to aggregate")]
    Empty,
}

/// Mean of exactly `m` judgments for one (query, passage) pair.
pub fn aggregate_scores(judgments: &[Judgment], m: u32) -> Result<AggregatedScore, AggregationError> {
    let first = judgments.first().ok_or(AggregationError::Empty)?;
    if judgments
        .iter()
        .any(|j| j.query_id != first.query_id || j.passage_id != first.passage_id)
    {
        return Err(AggregationError::MixedJudgments);
    }
    if judgments.len() != m as usize {
        return Err(AggregationError::IncompleteRun {
            query_id: first.query_id.clone(),
            passage_id: first.passage_id.clone(),
            expected: m,
            found: judgments.len(),
        });
    }
    let total: u32 = judgments.iter().map(|j| u32::from(j.score)).sum();
    Ok(AggregatedScore {
        query_id: first.query_id.clone(),
        passage_id: first.passage_id.clone(),
        score: f64::from(total) / f64::from(m),
        support: m,
    })
}

/// Sorts the candidates by descending score; equal scores keep their
/// initial-list order.
///
/// Means of small integers compare exactly as `f64`: equal fractions round to
/// the same float and rounding is monotone.
pub fn rank_by_score(candidates: &CandidateList, scores: &[AggregatedScore]) -> Result<Ranking, AggregationError> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.passage_id.as_str(), s.score)).collect();
    rank_by(candidates, |pid| by_id.get(pid).copied())
}

/// [`rank_by_score`] over an arbitrary score lookup.
pub fn rank_by(
    candidates: &CandidateList,
    score_of: impl Fn(&str) -> Option<f64>,
) -> Result<Ranking, AggregationError> {
    let mut keyed = Vec::with_capacity(candidates.depth());
    for pid in candidates.passages() {
        let score = score_of(pid).ok_or_else(|| AggregationError::MissingScore(pid.clone()))?;
        keyed.push((score, pid));
    }
    // `sort_by` is stable.
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    Ok(Ranking::new(
        candidates.query_id(),
        keyed.into_iter().map(|(_, p)| p.clone()).collect(),
    ))
}

/// Positions of `ranking`'s items in `reference`, or `None` if the item sets
/// differ.
fn positions_in(reference: &[String], ranking: &[String]) -> Option<Vec<usize>> {
    if reference.len() != ranking.len() {
        return None;
    }
    let pos: HashMap<&str, usize> = reference.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    if pos.len() != reference.len() {
        return None;
    }
    let mut seen = vec![false; reference.len()];
    let mut out = Vec::with_capacity(ranking.len());
    for item in ranking {
        let &p = pos.get(item.as_str())?;
        if std::mem::replace(&mut seen[p], true) {
            return None;
        }
        out.push(p);
    }
    Some(out)
}

/// Counts inversions with a merge sort.
fn count_inversions(seq: &mut [usize], scratch: &mut Vec<usize>) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut seq[..mid], scratch) + count_inversions(&mut seq[mid..], scratch);
    scratch.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            scratch.push(seq[i]);
            i += 1;
        } else {
            scratch.push(seq[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    scratch.extend_from_slice(&seq[i..mid]);
    scratch.extend_from_slice(&seq[j..n]);
    seq.copy_from_slice(scratch);
    count
}

/// Number of item pairs ordered differently by the two rankings.
pub fn kendall_tau_distance(a: &Ranking, b: &Ranking) -> Result<u64, AggregationError> {
    let mut seq = positions_in(&b.order, &a.order).ok_or(AggregationError::MismatchedItems)?;
    let mut scratch = Vec::with_capacity(seq.len());
    Ok(count_inversions(&mut seq, &mut scratch))
}

/// `w[i][j]` counts input rankings placing item `i` before item `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceMatrix {
    n: usize,
    m: u32,
    w: Vec<u32>,
}

impl PreferenceMatrix {
    /// Builds the matrix from rankings given as permutations of `0..n`.
    pub fn from_permutations(perms: &[Vec<usize>], n: usize) -> Self {
        let mut w = vec![0u32; n * n];
        let mut pos = vec![0usize; n];
        for perm in perms {
            for (p, &item) in perm.iter().enumerate() {
                pos[item] = p;
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && pos[i] < pos[j] {
                        w[i * n + j] += 1;
                    }
                }
            }
        }
        let matrix = Self {
            n,
            m: perms.len() as u32,
            w,
        };
        debug_assert!((0..n).all(|i| (0..n).all(|j| i == j || matrix.get(i, j) + matrix.get(j, i) == matrix.m)));
        matrix
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn rounds(&self) -> u32 {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.w[i * self.n + j]
    }

    /// Summed Kendall-tau distance from `order` to every input ranking.
    pub fn objective(&self, order: &[usize]) -> u64 {
        let mut total = 0u64;
        for (a, &x) in order.iter().enumerate() {
            for &y in &order[a + 1..] {
                total += u64::from(self.get(y, x));
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemenyResult {
    pub ranking: Ranking,
    /// Σ Kendall-tau distance to the inputs.
    pub objective: u64,
    /// False when the local-search fallback produced the ranking.
    pub exact: bool,
}

pub fn kemeny_aggregate(rankings: &[Ranking]) -> Result<KemenyResult, AggregationError> {
    kemeny_aggregate_with(rankings, DEFAULT_EXACT_THRESHOLD)
}

/// Consensus ranking minimizing the summed Kendall-tau distance.
///
/// Lists of at most `exact_threshold` items are solved exactly; among
/// co-optimal orders the one lexicographically closest to the first input
/// ranking is returned. Longer lists use Borda initialization refined by
/// insertion local search, reported with `exact = false`.
pub fn kemeny_aggregate_with(rankings: &[Ranking], exact_threshold: usize) -> Result<KemenyResult, AggregationError> {
    let first = rankings.first().ok_or(AggregationError::Empty)?;
    let items = &first.order;
    let n = items.len();
    let perms = rankings
        .iter()
        .map(|r| positions_in(items, &r.order))
        .collect::<Option<Vec<_>>>()
        .ok_or(AggregationError::MismatchedItems)?;
    let matrix = PreferenceMatrix::from_permutations(&perms, n);

    let (order, exact) = if n <= exact_threshold {
        (exact_order(&matrix), true)
    } else {
        (approximate_order(&matrix, &perms), false)
    };
    let objective = matrix.objective(&order);
    Ok(KemenyResult {
        ranking: Ranking::new(first.query_id.clone(), order.into_iter().map(|i| items[i].clone()).collect()),
        objective,
        exact,
    })
}

/// Subset dynamic program over the set of items still to be placed.
///
/// `best[r]` is the minimum cost of ordering the items in bitmask `r`; placing
/// `j` first among `r` costs the number of input pairs that put some other
/// member of `r` ahead of `j`.
fn exact_order(matrix: &PreferenceMatrix) -> Vec<usize> {
    let n = matrix.len();
    if n == 0 {
        return Vec::new();
    }
    let full = (1usize << n) - 1;
    let lead_cost = |set: usize, j: usize| -> u64 {
        let mut cost = 0u64;
        let mut rest = set & !(1 << j);
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            cost += u64::from(matrix.get(i, j));
            rest &= rest - 1;
        }
        cost
    };

    let mut best = vec![0u64; full + 1];
    for set in 1..=full {
        let mut min = u64::MAX;
        let mut bits = set;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let c = lead_cost(set, j) + best[set & !(1 << j)];
            min = min.min(c);
        }
        best[set] = min;
    }

    let mut order = Vec::with_capacity(n);
    let mut set = full;
    while set != 0 {
        let j = (0..n)
            .find(|&j| set & (1 << j) != 0 && lead_cost(set, j) + best[set & !(1 << j)] == best[set])
            .expect("some item attains the optimum");
        order.push(j);
        set &= !(1 << j);
    }
    order
}

fn approximate_order(matrix: &PreferenceMatrix, perms: &[Vec<usize>]) -> Vec<usize> {
    let n = matrix.len();
    let mut borda = vec![0usize; n];
    for perm in perms {
        for (p, &item) in perm.iter().enumerate() {
            borda[item] += p;
        }
    }
    let mut start: Vec<usize> = (0..n).collect();
    start.sort_by_key(|&i| (borda[i], i));

    let mut best = local_search(matrix, start);
    let mut best_cost = matrix.objective(&best);
    for perm in perms {
        let candidate = local_search(matrix, perm.clone());
        let cost = matrix.objective(&candidate);
        if cost < best_cost {
            best = candidate;
            best_cost = cost;
        }
    }
    best
}

/// Adjacent swaps, then best single-item moves, until neither improves.
fn local_search(matrix: &PreferenceMatrix, mut order: Vec<usize>) -> Vec<usize> {
    let n = order.len();
    loop {
        let mut improved = false;
        for a in 0..n.saturating_sub(1) {
            let (x, y) = (order[a], order[a + 1]);
            if matrix.get(y, x) > matrix.get(x, y) {
                order.swap(a, a + 1);
                improved = true;
            }
        }
        if improved {
            continue;
        }

        let mut best_move: Option<(i64, usize, usize)> = None;
        for from in 0..n {
            let x = order[from];
            let mut delta = 0i64;
            for to in (0..from).rev() {
                let y = order[to];
                delta += i64::from(matrix.get(y, x)) - i64::from(matrix.get(x, y));
                if delta < best_move.map_or(0, |b| b.0) {
                    best_move = Some((delta, from, to));
                }
            }
            delta = 0;
            for to in from + 1..n {
                let y = order[to];
                delta += i64::from(matrix.get(x, y)) - i64::from(matrix.get(y, x));
                if delta < best_move.map_or(0, |b| b.0) {
                    best_move = Some((delta, from, to));
                }
            }
        }
        match best_move {
            Some((_, from, to)) => {
                let x = order.remove(from);
                order.insert(to, x);
            }
            None => return order,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(items: &[&str]) -> Ranking {
        Ranking::new("q", items.iter().map(|s| s.to_string()).collect())
    }

    fn judgments(scores: &[u8]) -> Vec<Judgment> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Judgment {
                query_id: "q".into(),
                passage_id: "p".into(),
                call_index: i as u32 + 1,
                score: s,
            })
            .collect()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(aggregate_scores(&judgments(&[2, 3, 3]), 3).unwrap().score, 8.0 / 3.0);
        assert_eq!(aggregate_scores(&judgments(&[0, 0, 0]), 3).unwrap().score, 0.0);
        let one = aggregate_scores(&judgments(&[3]), 1).unwrap();
        assert_eq!((one.score, one.support), (3.0, 1));
    }

    #[test]
    fn mean_requires_exactly_m() {
        assert!(matches!(
            aggregate_scores(&judgments(&[1, 2]), 3),
            Err(AggregationError::IncompleteRun { found: 2, expected: 3, .. })
        ));
        assert!(aggregate_scores(&judgments(&[1, 2, 3, 0]), 3).is_err());
        let mut mixed = judgments(&[1, 2]);
        mixed[1].passage_id = "other".into();
        assert_eq!(aggregate_scores(&mixed, 2), Err(AggregationError::MixedJudgments));
    }

    fn scored(ids: &[&str], scores: &[f64]) -> (CandidateList, Vec<AggregatedScore>) {
        let cands = CandidateList::new("q", ids.iter().map(|s| s.to_string()).collect()).unwrap();
        let scores = ids
            .iter()
            .zip(scores)
            .map(|(p, &s)| AggregatedScore {
                query_id: "q".into(),
                passage_id: p.to_string(),
                score: s,
                support: 1,
            })
            .collect();
        (cands, scores)
    }

    #[test]
    fn rank_ties_keep_initial_order() {
        let (c, s) = scored(&["a", "b", "c"], &[1.0, 1.0, 1.0]);
        assert_eq!(rank_by_score(&c, &s).unwrap().order, vec!["a", "b", "c"]);
        let (c, s) = scored(&["a", "b", "c"], &[0.0, 3.0, 3.0]);
        assert_eq!(rank_by_score(&c, &s).unwrap().order, vec!["b", "c", "a"]);
        let (c, s) = scored(&["a", "b", "c"], &[0.0, 3.0]);
        assert_eq!(
            rank_by_score(&c, &s),
            Err(AggregationError::MissingScore("c".into()))
        );
    }

    #[test]
    fn kendall_examples() {
        let r = ranking(&["a", "b", "c", "d"]);
        assert_eq!(kendall_tau_distance(&r, &r).unwrap(), 0);
        assert_eq!(kendall_tau_distance(&r, &ranking(&["d", "c", "b", "a"])).unwrap(), 6);
        assert_eq!(
            kendall_tau_distance(&r, &ranking(&["a", "b", "c", "x"])),
            Err(AggregationError::MismatchedItems)
        );
    }

    #[test]
    fn kemeny_identical_inputs() {
        let r = ranking(&["c", "a", "d", "b"]);
        let out = kemeny_aggregate(&[r.clone(), r.clone(), r.clone()]).unwrap();
        assert_eq!(out.ranking, r);
        assert_eq!(out.objective, 0);
        assert!(out.exact);
    }

    #[test]
    fn kemeny_majority_example() {
        let abc = ranking(&["a", "b", "c"]);
        let out = kemeny_aggregate(&[abc.clone(), abc.clone(), ranking(&["c", "b", "a"])]).unwrap();
        assert_eq!(out.ranking, abc);
        assert_eq!(out.objective, 3);
    }

    #[test]
    fn kemeny_ties_prefer_first_input() {
        // Two opposite rankings: every order costs 1; the first input wins.
        let out = kemeny_aggregate(&[ranking(&["b", "a"]), ranking(&["a", "b"])]).unwrap();
        assert_eq!(out.ranking, ranking(&["b", "a"]));
        assert_eq!(out.objective, 1);
    }

    #[test]
    fn kemeny_errors() {
        assert_eq!(kemeny_aggregate(&[]), Err(AggregationError::Empty));
        assert_eq!(
            kemeny_aggregate(&[ranking(&["a", "b"]), ranking(&["a", "c"])]),
            Err(AggregationError::MismatchedItems)
        );
    }

    #[test]
    fn approximate_path_is_flagged() {
        let r = ranking(&["a", "b", "c", "d", "e"]);
        let out = kemeny_aggregate_with(&[r.clone(), r.clone()], 3).unwrap();
        assert!(!out.exact);
        assert_eq!(out.ranking, r);
        assert_eq!(out.objective, 0);
    }
}
