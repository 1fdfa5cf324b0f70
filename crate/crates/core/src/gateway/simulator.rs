//! A deterministic stand-in for an LLM judge with position-dependent noise.
//!
//! At each position of a call the simulator emits the gold grade (capped to
//! 0-3) with probability `1 - ε(pos, len)` and otherwise a uniformly chosen
//! wrong grade. Responses use the same text format a real model is asked
//! for, so the parser sits on the tested path.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, CompletionRequest, TaskKind};
use crate::batching::BatchCall;
use crate::model::{cap_grade, CandidateList, Qrels, MAX_SCORE};
use crate::prompting::{format_permutation, format_scores};
use crate::rng::StreamKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimulationError {
    #[error("passage {passage_id} has no gold grade for query {query_id}")]
    UnknownPassage { query_id: String, passage_id: String },
}

/// Per-position error probability of the simulated judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BiasModel {
    /// `ε = base_error` everywhere.
    Uniform { base_error: f64 },
    /// `ε = base_error + slope * max(0, pos - knee * len) / scale`, where
    /// `scale` is `reference_len` if set and the call length otherwise.
    ///
    /// With `reference_len` unset the decay is relative to the call, so a
    /// 30-passage call degrades like a 90-passage one; setting it makes the
    /// decay grow with absolute position.
    TailDecay {
        base_error: f64,
        slope: f64,
        knee: f64,
        #[serde(default)]
        reference_len: Option<u32>,
    },
    /// Error peaks at the middle of the call:
    /// `ε = base_error + slope * max(0, 1 - |pos - c| / (len / 2))` with
    /// `c = (len + 1) / 2`. A single passage has no middle and gets
    /// `base_error`.
    LostInMiddle { base_error: f64, slope: f64 },
    /// `ε = base_error`, lowered by `relief` at the first position of a call.
    JunctionPeak { base_error: f64, relief: f64 },
}

impl Default for BiasModel {
    fn default() -> Self {
        BiasModel::Uniform { base_error: 0.0 }
    }
}

impl BiasModel {
    /// The noiseless judge.
    pub fn exact() -> Self {
        Self::default()
    }

    /// Error probability at 1-based `position` of a call of `len` passages.
    pub fn error_rate(&self, position: usize, len: usize) -> f64 {
        let pos = position as f64;
        let len_f = len.max(1) as f64;
        let eps = match *self {
            BiasModel::Uniform { base_error } => base_error,
            BiasModel::TailDecay {
                base_error,
                slope,
                knee,
                reference_len,
            } => {
                let scale = reference_len.map_or(len_f, f64::from).max(1.0);
                base_error + slope * (pos - knee * len_f).max(0.0) / scale
            }
            BiasModel::LostInMiddle { base_error, slope } => {
                if len <= 1 {
                    base_error
                } else {
                    let centre = (len_f + 1.0) / 2.0;
                    base_error + slope * (1.0 - (pos - centre).abs() / (len_f / 2.0)).max(0.0)
                }
            }
            BiasModel::JunctionPeak { base_error, relief } => {
                if position == 1 {
                    base_error - relief
                } else {
                    base_error
                }
            }
        };
        if eps.is_nan() {
            0.0
        } else {
            eps.clamp(0.0, 1.0)
        }
    }
}

fn simulated_grades(
    query_id: &str,
    round: u32,
    batch_index: u32,
    passages: &[String],
    gold: impl Fn(&str) -> Option<u32>,
    bias: &BiasModel,
    seed: u64,
) -> Result<Vec<u8>, SimulationError> {
    let len = passages.len();
    passages
        .iter()
        .enumerate()
        .map(|(i, pid)| {
            let grade = gold(pid).ok_or_else(|| SimulationError::UnknownPassage {
                query_id: query_id.to_string(),
                passage_id: pid.clone(),
            })?;
            let truth = cap_grade(grade);
            let mut rng = StreamKey::new("sim", seed)
                .with_str(query_id)
                .with_u64(u64::from(round))
                .with_u64(u64::from(batch_index))
                .with_str(pid)
                .stream();
            if rng.unit_f64() < bias.error_rate(i + 1, len) {
                let k = rng.below(u64::from(MAX_SCORE)) as u8;
                Ok(if k >= truth { k + 1 } else { k })
            } else {
                Ok(truth)
            }
        })
        .collect()
}

/// Simulated pointwise response for one call. Every passage must carry a
/// label in `qrels` (grade 0 included).
pub fn simulate_scores(call: &BatchCall, qrels: &Qrels, bias: &BiasModel, seed: u64) -> Result<String, SimulationError> {
    let grades = simulated_grades(
        &call.query_id,
        call.call_index,
        call.batch_index,
        &call.passages,
        |pid| qrels.get(&call.query_id, pid),
        bias,
        seed,
    )?;
    Ok(format_scores(&grades))
}

/// Simulated listwise response: the call's passages ordered by simulated
/// score, ties kept in presentation order.
pub fn simulate_listwise(call: &BatchCall, qrels: &Qrels, bias: &BiasModel, seed: u64) -> Result<String, SimulationError> {
    let grades = simulated_grades(
        &call.query_id,
        call.call_index,
        call.batch_index,
        &call.passages,
        |pid| qrels.get(&call.query_id, pid),
        bias,
        seed,
    )?;
    let mut order: Vec<usize> = (1..=grades.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(grades[i - 1]));
    Ok(format_permutation(&order))
}

/// Simulator backend over a dataset. Candidates without a qrels entry are
/// judged as grade 0; passages outside a query's candidate list are rejected.
pub struct SimulatedBackend {
    gold: Qrels,
    bias: BiasModel,
    seed: u64,
}

impl SimulatedBackend {
    pub fn new<'a>(
        qrels: &Qrels,
        candidates: impl IntoIterator<Item = &'a CandidateList>,
        bias: BiasModel,
        seed: u64,
    ) -> Self {
        let mut completed: BTreeMap<(String, String), u32> = BTreeMap::new();
        for list in candidates {
            for pid in list.passages() {
                completed.insert(
                    (list.query_id().to_string(), pid.clone()),
                    qrels.grade(list.query_id(), pid),
                );
            }
        }
        let gold = completed
            .into_iter()
            .map(|((query_id, passage_id), grade)| crate::model::QrelsLabel {
                query_id,
                passage_id,
                grade,
            })
            .collect();
        Self { gold, bias, seed }
    }

    pub fn bias(&self) -> &BiasModel {
        &self.bias
    }
}

#[async_trait]
impl Backend for SimulatedBackend {
    fn id(&self) -> String {
        "simulator".into()
    }

    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let call = BatchCall {
            query_id: request.tag.query_id.clone(),
            call_index: request.tag.round,
            batch_index: request.tag.batch_index,
            passages: request.passage_ids.clone(),
        };
        let out = match request.task {
            TaskKind::Pointwise => simulate_scores(&call, &self.gold, &self.bias, self.seed),
            TaskKind::Listwise => simulate_listwise(&call, &self.gold, &self.bias, self.seed),
        };
        out.map_err(|e| BackendError::Fatal(e.to_string()))
    }
}
