//! Batched self-consistency relevance assessment and reranking with LLMs.
//!
//! The crate builds deterministic call schedules for one-by-one, all-in-one
//! and sub-batched pointwise scoring (plus a listwise baseline), renders and
//! parses prompts, executes calls against live, replayed or simulated
//! backends, aggregates the self-consistency outputs and evaluates the
//! resulting rankings and relevance probabilities.

pub mod aggregation;
pub mod batching;
pub mod data;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod prompting;
pub mod rng;

pub use model::{
    AggregatedScore, CandidateList, Judgment, ModelError, Passage, Qrels, QrelsLabel, Query,
    Ranking,
};
