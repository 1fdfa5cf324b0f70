//! Domain types shared across the pipeline.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest grade on the pointwise relevance scale.
pub const MAX_SCORE: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("score {0} is outside [0, 3]")]
    ScoreOutOfRange(f64),
    #[error("candidate list for query {0} is empty")]
    EmptyCandidates(String),
    #[error("candidate list for query {query_id} repeats passage {passage_id}")]
    DuplicatePassage { query_id: String, passage_id: String },
    #[error("ranking for query {0} is not a permutation of its candidate list")]
    NotAPermutation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// The initial retrieval order for one query. Order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    query_id: String,
    passages: Vec<String>,
}

impl CandidateList {
    pub fn new(query_id: impl Into<String>, passages: Vec<String>) -> Result<Self, ModelError> {
        let query_id = query_id.into();
        if passages.is_empty() {
            return Err(ModelError::EmptyCandidates(query_id));
        }
        let mut seen = HashSet::with_capacity(passages.len());
        for p in &passages {
            if !seen.insert(p.as_str()) {
                return Err(ModelError::DuplicatePassage {
                    query_id,
                    passage_id: p.clone(),
                });
            }
        }
        Ok(Self { query_id, passages })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn passages(&self) -> &[String] {
        &self.passages
    }

    /// List depth `D`.
    pub fn depth(&self) -> usize {
        self.passages.len()
    }

    /// Keeps the first `depth` passages.
    pub fn truncated(&self, depth: usize) -> Self {
        let keep = depth.max(1).min(self.passages.len());
        Self {
            query_id: self.query_id.clone(),
            passages: self.passages[..keep].to_vec(),
        }
    }

    /// 1-based rank of a passage in the initial list.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.passages.iter().position(|p| p == passage_id).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelsLabel {
    pub query_id: String,
    pub passage_id: String,
    pub grade: u32,
}

/// Gold graded relevance, at most one grade per (query, passage) pair.
///
/// Grades are stored as ingested; binarization and gain mapping happen at
/// evaluation time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    labels: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label, returning the grade it replaced.
    pub fn insert(&mut self, label: QrelsLabel) -> Option<u32> {
        self.labels
            .entry(label.query_id)
            .or_default()
            .insert(label.passage_id, label.grade)
    }

    pub fn get(&self, query_id: &str, passage_id: &str) -> Option<u32> {
        self.labels.get(query_id)?.get(passage_id).copied()
    }

    /// Unlabeled pairs count as grade 0.
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.get(query_id, passage_id).unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.labels.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels in (query, passage) order.
    pub fn iter(&self) -> impl Iterator<Item = QrelsLabel> + '_ {
        self.labels.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(p, g)| QrelsLabel {
                query_id: q.clone(),
                passage_id: p.clone(),
                grade: *g,
            })
        })
    }
}

impl FromIterator<QrelsLabel> for Qrels {
    fn from_iter<I: IntoIterator<Item = QrelsLabel>>(iter: I) -> Self {
        let mut qrels = Qrels::new();
        for label in iter {
            qrels.insert(label);
        }
        qrels
    }
}

/// One score emitted for one passage by one LLM call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    pub passage_id: String,
    /// Self-consistency round, 1-based.
    pub call_index: u32,
    pub score: u8,
}

/// Mean of the `support` judgments collected for one passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedScore {
    pub query_id: String,
    pub passage_id: String,
    pub score: f64,
    pub support: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub order: Vec<String>,
}

impl Ranking {
    pub fn new(query_id: impl Into<String>, order: Vec<String>) -> Self {
        Self {
            query_id: query_id.into(),
            order,
        }
    }

    /// The initial list taken as a ranking.
    pub fn initial(candidates: &CandidateList) -> Self {
        Self::new(candidates.query_id(), candidates.passages().to_vec())
    }

    /// Checks the permutation invariant against the candidate list.
    pub fn validate(&self, candidates: &CandidateList) -> Result<(), ModelError> {
        let mut ours: Vec<&str> = self.order.iter().map(String::as_str).collect();
        let mut theirs: Vec<&str> = candidates.passages().iter().map(String::as_str).collect();
        ours.sort_unstable();
        theirs.sort_unstable();
        if ours == theirs && self.query_id == candidates.query_id() {
            Ok(())
        } else {
            Err(ModelError::NotAPermutation(self.query_id.clone()))
        }
    }
}

/// Maps a mean score on the 0-3 scale to a relevance probability.
pub fn score_to_probability(score: f64) -> Result<f64, ModelError> {
    if !(0.0..=f64::from(MAX_SCORE)).contains(&score) {
        return Err(ModelError::ScoreOutOfRange(score));
    }
    Ok(score / f64::from(MAX_SCORE))
}

/// 1 iff `grade >= threshold`.
pub fn binarize_label(grade: u32, threshold: u32) -> u8 {
    u8::from(grade >= threshold)
}

/// Gold grade clamped onto the 0-3 scale.
pub fn cap_grade(grade: u32) -> u8 {
    grade.min(u32::from(MAX_SCORE)) as u8
}
