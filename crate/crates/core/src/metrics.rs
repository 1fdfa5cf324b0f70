//! Ranking and assessment metrics, and position-bias profiles.

use std::cmp::Ordering;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Judgment, Qrels, Ranking};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error("AUC-PR is undefined without positive labels")]
    NoPositives,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

/// NDCG@k with exponential gain `2^grade - 1` and `log2(rank + 1)` discount.
///
/// The ideal ordering is taken over the ranked candidates themselves.
/// Unlabeled passages count as grade 0; a query without gain scores 0.
pub fn ndcg_at_k(ranking: &Ranking, qrels: &Qrels, k: usize) -> Result<f64, MetricsError> {
    let grades: Vec<u32> = ranking
        .order
        .iter()
        .map(|p| qrels.grade(&ranking.query_id, p))
        .collect();
    ndcg_from_grades(&grades, k)
}

/// NDCG@k over grades listed in ranked order.
pub fn ndcg_from_grades(grades: &[u32], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroCutoff);
    }
    let dcg = |gs: &[u32]| -> f64 {
        gs.iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(grades) / idcg)
}

/// Area under the precision-recall curve, average-precision style.
///
/// Items with equal probability form one threshold group: the group adds
/// its precision at the group boundary times the recall it gains, so the
/// result does not depend on how ties are ordered.
pub fn auc_pr(probabilities: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if probabilities.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: probabilities.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut items: Vec<(f64, bool)> = probabilities.iter().copied().zip(labels.iter().copied()).collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut area = 0.0;
    let mut seen = 0usize;
    let mut hits = 0usize;
    let mut start = 0;
    while start < items.len() {
        let mut end = start;
        while end < items.len() && items[end].0.total_cmp(&items[start].0) == Ordering::Equal {
            end += 1;
        }
        let group_hits = items[start..end].iter().filter(|(_, l)| *l).count();
        seen += end - start;
        hits += group_hits;
        if group_hits > 0 {
            area += (hits as f64 / seen as f64) * (group_hits as f64 / positives as f64);
        }
        start = end;
    }
    Ok(area)
}

/// Unweighted mean of the defined values, `None` if there are none.
pub fn macro_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// A judgment together with where its passage sat when it was scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionedJudgment {
    #[serde(flatten)]
    pub judgment: Judgment,
    pub batch_index: u32,
    /// 1-based position inside the call.
    pub position: u32,
    pub batch_len: u32,
    /// 1-based rank in the initial retrieval list.
    pub initial_rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionAxis {
    /// Position within the LLM call.
    InCall,
    /// Rank in the initial list.
    InitialRank,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub position: u32,
    pub relevant_sum: f64,
    pub relevant_count: u64,
    pub irrelevant_sum: f64,
    pub irrelevant_count: u64,
}

impl BiasRow {
    pub fn relevant_mean(&self) -> Option<f64> {
        (self.relevant_count > 0).then(|| self.relevant_sum / self.relevant_count as f64)
    }

    pub fn irrelevant_mean(&self) -> Option<f64> {
        (self.irrelevant_count > 0).then(|| self.irrelevant_sum / self.irrelevant_count as f64)
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.relevant_count + self.irrelevant_count;
        (n > 0).then(|| (self.relevant_sum + self.irrelevant_sum) / n as f64)
    }

    pub fn count(&self) -> u64 {
        self.relevant_count + self.irrelevant_count
    }
}

/// Mean score per position, split by binary relevance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub axis: Option<PositionAxis>,
    pub rows: Vec<BiasRow>,
}

impl BiasProfile {
    /// Relevant minus irrelevant mean, pooled over the given 1-based positions.
    pub fn gap(&self, positions: RangeInclusive<u32>) -> Option<f64> {
        let mut pooled = BiasRow::default();
        for row in self.rows.iter().filter(|r| positions.contains(&r.position)) {
            pooled.relevant_sum += row.relevant_sum;
            pooled.relevant_count += row.relevant_count;
            pooled.irrelevant_sum += row.irrelevant_sum;
            pooled.irrelevant_count += row.irrelevant_count;
        }
        Some(pooled.relevant_mean()? - pooled.irrelevant_mean()?)
    }

    pub fn row(&self, position: u32) -> Option<&BiasRow> {
        self.rows.get(position.checked_sub(1)? as usize)
    }
}

pub fn bias_profile(
    judgments: &[PositionedJudgment],
    is_relevant: impl Fn(&Judgment) -> bool,
    axis: PositionAxis,
) -> BiasProfile {
    let position_of = |j: &PositionedJudgment| match axis {
        PositionAxis::InCall => j.position,
        PositionAxis::InitialRank => j.initial_rank,
    };
    let len = judgments.iter().map(position_of).max().unwrap_or(0);
    let mut rows: Vec<BiasRow> = (1..=len)
        .map(|position| BiasRow {
            position,
            ..BiasRow::default()
        })
        .collect();
    for j in judgments {
        let pos = position_of(j);
        if pos == 0 {
            continue;
        }
        let row = &mut rows[pos as usize - 1];
        let score = f64::from(j.judgment.score);
        if is_relevant(&j.judgment) {
            row.relevant_sum += score;
            row.relevant_count += 1;
        } else {
            row.irrelevant_sum += score;
            row.irrelevant_count += 1;
        }
    }
    BiasProfile {
        axis: Some(axis),
        rows,
    }
}

/// Positions that are strict local maxima of `values` and exceed the median
/// of all defined values by at least `min_prominence`. Positions are 1-based
/// and undefined values never qualify.
pub fn find_peaks(values: &[Option<f64>], min_prominence: f64) -> Vec<u32> {
    let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Vec::new();
    }
    defined.sort_by(f64::total_cmp);
    let mid = defined.len() / 2;
    let median = if defined.len().is_multiple_of(2) {
        (defined[mid - 1] + defined[mid]) / 2.0
    } else {
        defined[mid]
    };
    (0..values.len())
        .filter(|&i| {
            let Some(v) = values[i] else { return false };
            let left = i.checked_sub(1).and_then(|l| values[l]);
            let right = values.get(i + 1).copied().flatten();
            left.is_none_or(|l| v > l) && right.is_none_or(|r| v > r) && v - median >= min_prominence
        })
        .map(|i| i as u32 + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QrelsLabel;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_from_grades(&[3, 2, 1, 0], 10).unwrap(), 1.0);
        assert_eq!(ndcg_from_grades(&[0, 0, 0], 10).unwrap(), 0.0);
        let v = ndcg_from_grades(&[1, 0, 3], 3).unwrap();
        assert!((v - 0.58971).abs() < 1e-5, "{v}");
        assert_eq!(ndcg_from_grades(&[1], 0), Err(MetricsError::ZeroCutoff));
    }

    #[test]
    fn ndcg_uses_qrels_and_defaults_to_zero() {
        let qrels: Qrels = [("b", 3), ("c", 1)]
            .iter()
            .map(|(p, g)| QrelsLabel {
                query_id: "q".into(),
                passage_id: p.to_string(),
                grade: *g,
            })
            .collect();
        let ideal = Ranking::new("q", vec!["b".into(), "c".into(), "a".into()]);
        assert_eq!(ndcg_at_k(&ideal, &qrels, 10).unwrap(), 1.0);
        let worse = Ranking::new("q", vec!["a".into(), "c".into(), "b".into()]);
        assert!(ndcg_at_k(&worse, &qrels, 10).unwrap() < 1.0);
    }

    #[test]
    fn auc_examples() {
        let v = auc_pr(&[0.9, 0.5, 0.3, 0.1], &[true, false, false, false]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(auc_pr(&[0.2, 0.7], &[true, true]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.2, 0.7], &[false, false]), Err(MetricsError::NoPositives));
        assert!(auc_pr(&[0.2], &[true, false]).is_err());
    }

    #[test]
    fn auc_tied_group() {
        // Groups: {0.9: +,-} then {0.5: +} then {0.1: -}.
        // 0.5 * 1/2 + 2/3 * 1/2
        let v = auc_pr(&[0.9, 0.9, 0.5, 0.1], &[true, false, true, false]).unwrap();
        assert!((v - (0.25 + 1.0 / 3.0)).abs() < 1e-12);
        let swapped = auc_pr(&[0.9, 0.9, 0.5, 0.1], &[false, true, true, false]).unwrap();
        assert_eq!(v, swapped);
    }

    fn pj(score: u8, position: u32, relevant: bool) -> (PositionedJudgment, bool) {
        (
            PositionedJudgment {
                judgment: Judgment {
                    query_id: "q".into(),
                    passage_id: format!("p{position}"),
                    call_index: 1,
                    score,
                },
                batch_index: 0,
                position,
                batch_len: 3,
                initial_rank: position,
            },
            relevant,
        )
    }

    #[test]
    fn bias_single_sample() {
        let (j, _) = pj(3, 1, true);
        let profile = bias_profile(&[j], |_| true, PositionAxis::InCall);
        assert_eq!(profile.rows.len(), 1);
        assert_eq!(profile.rows[0].relevant_mean(), Some(3.0));
        assert_eq!(profile.rows[0].relevant_count, 1);
        assert_eq!(profile.rows[0].irrelevant_mean(), None);
    }

    #[test]
    fn bias_empty_positions_reported() {
        let samples = [pj(3, 1, true), pj(0, 3, false)];
        let js: Vec<PositionedJudgment> = samples.iter().map(|(j, _)| j.clone()).collect();
        let profile = bias_profile(&js, |j| j.score > 1, PositionAxis::InCall);
        assert_eq!(profile.rows.len(), 3);
        assert_eq!(profile.rows[1].count(), 0);
        assert_eq!(profile.gap(1..=3), Some(3.0));
    }

    #[test]
    fn peaks() {
        let v = [Some(3.0), Some(1.0), Some(1.1), Some(1.0), Some(2.5), Some(1.0), None];
        assert_eq!(find_peaks(&v, 0.5), vec![1, 5]);
        assert_eq!(find_peaks(&v, 0.04), vec![1, 3, 5]);
        assert!(find_peaks(&[], 0.1).is_empty());
    }

    #[test]
    fn macro_mean_skips_nothing() {
        assert_eq!(macro_mean([1.0, 0.0]), Some(0.5));
        assert_eq!(macro_mean(std::iter::empty()), None);
    }
}
