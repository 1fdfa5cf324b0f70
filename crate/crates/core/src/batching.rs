//! Call schedules for every batching and ordering strategy.
//!
//! A [`CallPlan`] lists every LLM call needed for one query. Each passage of
//! the candidate list appears in exactly `m` calls, one per self-consistency
//! round.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CandidateList;
use crate::rng::StreamKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BatchingError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("cannot split {len} items into {batches} batches")]
    BadSplit { len: usize, batches: usize },
    #[error("self-consistency count m must be at least 1")]
    ZeroRounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllInOneOrder {
    Initial,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubBatchOrder {
    Initial,
    /// Shuffle the full list, then split.
    ShuffleThenBatch,
    /// Split once, then shuffle inside each batch.
    BatchThenShuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    OneByOne,
    AllInOne { order: AllInOneOrder },
    SubBatched { order: SubBatchOrder, batches: usize },
}

impl Strategy {
    /// Whether every round of the plan is the same sequence of calls.
    pub fn is_round_invariant(&self) -> bool {
        matches!(
            self,
            Strategy::OneByOne
                | Strategy::AllInOne {
                    order: AllInOneOrder::Initial
                }
                | Strategy::SubBatched {
                    order: SubBatchOrder::Initial,
                    ..
                }
        )
    }

    pub fn validate(&self, depth: usize) -> Result<(), BatchingError> {
        if let Strategy::SubBatched { batches, .. } = *self {
            if batches < 2 {
                return Err(BatchingError::InvalidStrategy(format!(
                    "sub-batching needs at least 2 batches, got {batches}"
                )));
            }
            if batches > depth {
                return Err(BatchingError::InvalidStrategy(format!(
                    "{batches} batches exceed list depth {depth}"
                )));
            }
        }
        Ok(())
    }

    /// Largest batch the strategy produces for a list of `depth` passages.
    pub fn batch_size(&self, depth: usize) -> usize {
        match *self {
            Strategy::OneByOne => 1,
            Strategy::AllInOne { .. } => depth,
            Strategy::SubBatched { batches, .. } => depth.div_ceil(batches.max(1)),
        }
    }

    /// Short name of the ordering, as used on the command line.
    pub fn order_name(&self) -> &'static str {
        match self {
            Strategy::OneByOne => "none",
            Strategy::AllInOne { order } => match order {
                AllInOneOrder::Initial => "init",
                AllInOneOrder::Shuffled => "shuffled",
            },
            Strategy::SubBatched { order, .. } => match order {
                SubBatchOrder::Initial => "init",
                SubBatchOrder::ShuffleThenBatch => "stb",
                SubBatchOrder::BatchThenShuffle => "bts",
            },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Strategy::OneByOne => "one-by-one",
            Strategy::AllInOne { .. } => "all-in-one",
            Strategy::SubBatched { .. } => "sub-batch",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::OneByOne => f.write_str("one-by-one"),
            Strategy::AllInOne { .. } => write!(f, "all-in-one/{}", self.order_name()),
            Strategy::SubBatched { batches, .. } => {
                write!(f, "sub-batch/{}/B={batches}", self.order_name())
            }
        }
    }
}

/// One LLM call: an ordered batch of passages scored together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCall {
    pub query_id: String,
    /// Self-consistency round, 1-based.
    pub call_index: u32,
    /// Position of the call within its round, 0-based.
    pub batch_index: u32,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPlan {
    pub query_id: String,
    pub m: u32,
    pub calls: Vec<BatchCall>,
}

impl CallPlan {
    /// Calls belonging to one round, in batch order.
    pub fn round(&self, call_index: u32) -> impl Iterator<Item = &BatchCall> {
        self.calls.iter().filter(move |c| c.call_index == call_index)
    }

    /// The plan restricted to its first `m` rounds.
    pub fn prefix(&self, m: u32) -> CallPlan {
        CallPlan {
            query_id: self.query_id.clone(),
            m: m.min(self.m),
            calls: self
                .calls
                .iter()
                .filter(|c| c.call_index <= m)
                .cloned()
                .collect(),
        }
    }
}

/// Splits `items` into `batches` contiguous intervals whose sizes differ by at
/// most one, earlier intervals taking the remainder.
pub fn split_into_batches<T: Clone>(items: &[T], batches: usize) -> Result<Vec<Vec<T>>, BatchingError> {
    if batches < 1 || batches > items.len() {
        return Err(BatchingError::BadSplit {
            len: items.len(),
            batches,
        });
    }
    let base = items.len() / batches;
    let extra = items.len() % batches;
    let mut out = Vec::with_capacity(batches);
    let mut start = 0;
    for b in 0..batches {
        let size = base + usize::from(b < extra);
        out.push(items[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// A uniform permutation drawn from the stream keyed by
/// `(seed, query_id, round, batch_index)`.
pub fn seeded_permutation<T: Clone>(
    items: &[T],
    seed: u64,
    query_id: &str,
    round: u32,
    batch_index: u32,
) -> Vec<T> {
    let mut rng = StreamKey::new("plan", seed)
        .with_str(query_id)
        .with_u64(u64::from(round))
        .with_u64(u64::from(batch_index))
        .stream();
    let mut out = items.to_vec();
    rng.shuffle(&mut out);
    out
}

pub fn build_call_plan(
    candidates: &CandidateList,
    strategy: Strategy,
    m: u32,
    seed: u64,
) -> Result<CallPlan, BatchingError> {
    if m == 0 {
        return Err(BatchingError::ZeroRounds);
    }
    strategy.validate(candidates.depth())?;
    let qid = candidates.query_id();
    let ids = candidates.passages();

    let mut calls = Vec::new();
    for round in 1..=m {
        let batches: Vec<Vec<String>> = match strategy {
            Strategy::OneByOne => ids.iter().map(|p| vec![p.clone()]).collect(),
            Strategy::AllInOne { order } => match order {
                AllInOneOrder::Initial => vec![ids.to_vec()],
                AllInOneOrder::Shuffled => vec![seeded_permutation(ids, seed, qid, round, 0)],
            },
            Strategy::SubBatched { order, batches } => match order {
                SubBatchOrder::Initial => split_into_batches(ids, batches)?,
                SubBatchOrder::ShuffleThenBatch => {
                    let shuffled = seeded_permutation(ids, seed, qid, round, 0);
                    split_into_batches(&shuffled, batches)?
                }
                SubBatchOrder::BatchThenShuffle => split_into_batches(ids, batches)?
                    .iter()
                    .enumerate()
                    .map(|(b, batch)| seeded_permutation(batch, seed, qid, round, b as u32))
                    .collect(),
            },
        };
        calls.extend(batches.into_iter().enumerate().map(|(b, passages)| BatchCall {
            query_id: qid.to_string(),
            call_index: round,
            batch_index: b as u32,
            passages,
        }));
    }
    Ok(CallPlan {
        query_id: qid.to_string(),
        m,
        calls,
    })
}
