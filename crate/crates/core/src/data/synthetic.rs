//! Seeded synthetic corpora with controllable initial-ranking quality.

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::model::{CandidateList, Passage, QrelsLabel, Query};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    pub depth: usize,
    /// Probability of grades 0, 1, 2 and 3.
    pub grade_distribution: [f64; 4],
    /// Blend between a grade-sorted (1) and a random (0) initial order.
    pub correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_queries: 50,
            depth: 90,
            grade_distribution: [0.6, 0.2, 0.12, 0.08],
            correlation: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.depth == 0 {
            return Err(DataError::InvalidDistribution("depth must be at least 1".into()));
        }
        let dist = &self.grade_distribution;
        if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DataError::InvalidDistribution(format!("{dist:?} has a negative or non-finite entry")));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidDistribution(format!("{dist:?} sums to {total}")));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(DataError::InvalidDistribution(format!(
                "correlation {} is outside [0, 1]",
                self.correlation
            )));
        }
        Ok(())
    }
}

/// Builds a corpus as a pure function of `spec`.
///
/// Every passage is labelled (grade 0 included). The initial order sorts
/// passages by `correlation * grade / 3 + (1 - correlation) * u` with `u`
/// uniform, so `correlation = 1` yields a grade-sorted list and
/// `correlation = 0` an order drawn independently of the grades. A query whose
/// grades all come out 0 gets its first passage promoted to the highest grade
/// with nonzero probability, so every query has something to find.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let top_grade = (0..4).rev().find(|&g| spec.grade_distribution[g] > 0.0).unwrap_or(0) as u32;
    let mut dataset = Dataset::default();

    for q in 0..spec.num_queries {
        let query_id = format!("q{:03}", q + 1);
        dataset.queries.insert(
            query_id.clone(),
            Query {
                id: query_id.clone(),
                text: format!("synthetic information need {query_id}"),
            },
        );

        let mut grade_rng = StreamKey::new("synthetic-grades", spec.seed).with_str(&query_id).stream();
        let mut grades: Vec<u32> = (0..spec.depth)
            .map(|_| {
                let u = grade_rng.unit_f64();
                let mut acc = 0.0;
                let mut grade = top_grade;
                for (g, p) in spec.grade_distribution.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        grade = g as u32;
                        break;
                    }
                }
                grade
            })
            .collect();
        if top_grade > 0 && grades.iter().all(|&g| g == 0) {
            grades[0] = top_grade;
        }

        let mut order_rng = StreamKey::new("synthetic-order", spec.seed).with_str(&query_id).stream();
        let mut keyed: Vec<(f64, usize)> = grades
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let u = order_rng.unit_f64();
                (spec.correlation * f64::from(g) / 3.0 + (1.0 - spec.correlation) * u, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let ids: Vec<String> = (0..spec.depth).map(|i| format!("{query_id}-p{:03}", i + 1)).collect();
        for (i, id) in ids.iter().enumerate() {
            dataset.passages.insert(
                id.clone(),
                Passage {
                    id: id.clone(),
                    text: format!("Synthetic passage {id} written for query {query_id}."),
                },
            );
            dataset.qrels.insert(QrelsLabel {
                query_id: query_id.clone(),
                passage_id: id.clone(),
                grade: grades[i],
            });
        }
        let initial = keyed.iter().map(|&(_, i)| ids[i].clone()).collect();
        dataset.candidates.push(CandidateList::new(query_id, initial)?);
    }
    Ok(dataset)
}
