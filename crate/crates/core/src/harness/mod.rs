//! End-to-end experiments: plan, call, parse, aggregate, rank, evaluate.

mod config;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{bias_preset, BackendSpec, DatasetConfig, ExperimentConfig, Method, OrderName, StrategyName};

use crate::aggregation::{aggregate_scores, kemeny_aggregate, rank_by_score};
use crate::batching::{build_call_plan, CallPlan};
use crate::data::{generate_synthetic, DataError, Dataset, JudgmentRow, SyntheticSpec};
use crate::gateway::{
    Backend, BackendError, CallStats, CompletionRequest, CompletionResult, Gateway, GatewayError, HttpBackend,
    RecordingBackend, ReplayBackend, RequestTag, SimulatedBackend,
};
use crate::metrics::{
    auc_pr, bias_profile, macro_mean, ndcg_at_k, BiasProfile, MetricsError, PositionAxis, PositionedJudgment,
};
use crate::model::{binarize_label, score_to_probability, AggregatedScore, CandidateList, Judgment, Passage, Ranking};
use crate::prompting::{parse_permutation, parse_scores, PromptRenderer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("{0}")]
    Domain(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum QueryStatus {
    Complete,
    Incomplete { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusInfo {
    pub objective: u64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub status: QueryStatus,
    pub depth: usize,
    pub planned_calls: u64,
    pub ranking: Option<Ranking>,
    /// Mean pointwise scores in initial-list order; empty for listwise.
    pub scores: Vec<AggregatedScore>,
    pub ndcg: Option<f64>,
    pub initial_ndcg: f64,
    pub auc_pr: Option<f64>,
    pub consensus: Option<ConsensusInfo>,
}

impl QueryOutcome {
    pub fn is_complete(&self) -> bool {
        self.status == QueryStatus::Complete
    }
}

/// A parser diagnostic attached to the call that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFlag {
    pub tag: RequestTag,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub queries: usize,
    pub complete: usize,
    pub ndcg: Option<f64>,
    pub initial_ndcg: Option<f64>,
    /// Macro average over complete queries with at least one positive.
    pub auc_pr: Option<f64>,
    /// AUC-PR over all judged passages of complete queries at once.
    pub auc_pr_pooled: Option<f64>,
    /// Complete queries whose AUC-PR is undefined for lack of positives.
    pub auc_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub method: Method,
    pub backend: String,
    pub queries: Vec<QueryOutcome>,
    /// Judgments of complete queries, ordered by query, round, batch and
    /// position.
    pub judgments: Vec<JudgmentRow>,
    pub planned_calls: u64,
    pub stats: CallStats,
    pub flags: Vec<RunFlag>,
    pub summary: Summary,
}

impl RunRecord {
    pub fn incomplete(&self) -> impl Iterator<Item = &QueryOutcome> {
        self.queries.iter().filter(|q| !q.is_complete())
    }
}

/// Loads or generates the configured dataset, cut to the configured depth.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let dataset = match &config.dataset {
        DatasetConfig::Files {
            queries,
            corpus,
            qrels,
            run,
        } => {
            let loaded = Dataset::from_files(queries, corpus, qrels, run, config.depth)?;
            loaded.value
        }
        DatasetConfig::Synthetic {
            num_queries,
            grade_distribution,
            correlation,
            seed,
        } => generate_synthetic(&SyntheticSpec {
            num_queries: *num_queries,
            depth: config.depth,
            grade_distribution: *grade_distribution,
            correlation: *correlation,
            seed: seed.unwrap_or(config.seed),
        })?,
    };
    Ok(dataset.with_depth(config.depth))
}

pub fn build_backend(config: &ExperimentConfig, dataset: &Dataset) -> Result<Arc<dyn Backend>, HarnessError> {
    let backend: Arc<dyn Backend> = match config.backend_spec()? {
        BackendSpec::Live(name) => {
            let adapter = config
                .adapters
                .get(&name)
                .ok_or_else(|| HarnessError::Config(format!("no adapter named {name:?}")))?;
            Arc::new(HttpBackend::new(&name, adapter.clone())?)
        }
        BackendSpec::Replay(path) => Arc::new(
            ReplayBackend::open(&path)
                .map_err(|e| HarnessError::Config(format!("replay cache {}: {e}", path.display())))?,
        ),
        BackendSpec::Sim(_) => Arc::new(SimulatedBackend::new(
            &dataset.qrels,
            &dataset.candidates,
            config.bias_model()?,
            config.seed,
        )),
    };
    Ok(match &config.record {
        Some(path) => Arc::new(RecordingBackend::new(backend, path)?),
        None => backend,
    })
}

/// A query's plan and rendered requests, or why it could not be prepared.
struct PreparedQuery {
    candidates: CandidateList,
    plan: Result<(CallPlan, Vec<CompletionRequest>), String>,
}

fn prepare(config: &ExperimentConfig, method: Method, dataset: &Dataset, m: u32) -> Vec<PreparedQuery> {
    let renderer = PromptRenderer::new(config.max_prompt_chars);
    dataset
        .candidates
        .iter()
        .map(|candidates| {
            let plan = (|| {
                let query = dataset
                    .query(candidates.query_id())
                    .ok_or_else(|| format!("query {} has no text", candidates.query_id()))?;
                let plan = build_call_plan(candidates, method.plan_strategy(), m, config.seed)
                    .map_err(|e| e.to_string())?;
                let mut requests = Vec::with_capacity(plan.calls.len());
                for call in &plan.calls {
                    let passages = call
                        .passages
                        .iter()
                        .map(|p| dataset.passage(p).ok_or_else(|| format!("passage {p} is not in the corpus")))
                        .collect::<Result<Vec<&Passage>, String>>()?;
                    let prompt = match method {
                        Method::Pointwise(_) => renderer.render_pointwise(query, &passages),
                        Method::Listwise(_) => renderer.render_listwise(query, &passages),
                    }
                    .map_err(|e| e.to_string())?;
                    requests.push(CompletionRequest {
                        prompt,
                        temperature: config.temperature,
                        max_output_tokens: config.max_output_tokens,
                        tag: RequestTag {
                            query_id: call.query_id.clone(),
                            round: call.call_index,
                            batch_index: call.batch_index,
                        },
                        task: method.task(),
                        passage_ids: call.passages.clone(),
                    });
                }
                Ok((plan, requests))
            })();
            PreparedQuery {
                candidates: candidates.clone(),
                plan,
            }
        })
        .collect()
}

type Outcomes = Vec<Result<CompletionResult, GatewayError>>;

/// Issues every call of every query. Concurrency is bounded by the gateway;
/// results come back in plan order per query.
async fn dispatch(prepared: &[PreparedQuery], gateway: &Gateway) -> Vec<Outcomes> {
    join_all(prepared.iter().map(|q| async move {
        match &q.plan {
            Ok((_, requests)) => join_all(requests.iter().map(|r| gateway.complete(r))).await,
            Err(_) => Vec::new(),
        }
    }))
    .await
}

struct Assembled {
    outcome: QueryOutcome,
    judgments: Vec<JudgmentRow>,
    flags: Vec<RunFlag>,
}

fn assemble_query(
    config: &ExperimentConfig,
    method: Method,
    dataset: &Dataset,
    prepared: &PreparedQuery,
    outcomes: &Outcomes,
    m: u32,
) -> Assembled {
    let candidates = &prepared.candidates;
    let qid = candidates.query_id();
    let initial_ndcg = ndcg_at_k(&Ranking::initial(candidates), &dataset.qrels, config.ndcg_cutoff).unwrap_or(0.0);
    let mut outcome = QueryOutcome {
        query_id: qid.to_string(),
        status: QueryStatus::Complete,
        depth: candidates.depth(),
        planned_calls: 0,
        ranking: None,
        scores: Vec::new(),
        ndcg: None,
        initial_ndcg,
        auc_pr: None,
        consensus: None,
    };
    let fail = |mut outcome: QueryOutcome, reason: String| {
        log::warn!("query {}: {reason}", outcome.query_id);
        outcome.status = QueryStatus::Incomplete { reason };
        Assembled {
            outcome,
            judgments: Vec::new(),
            flags: Vec::new(),
        }
    };

    let (plan, _) = match &prepared.plan {
        Ok(p) => p,
        Err(reason) => return fail(outcome, reason.clone()),
    };
    let calls: Vec<_> = plan
        .calls
        .iter()
        .zip(outcomes)
        .filter(|(c, _)| c.call_index <= m)
        .collect();
    outcome.planned_calls = calls.len() as u64;

    let mut flags = Vec::new();
    let mut judgments = Vec::new();
    let mut permutations = Vec::new();
    for (call, result) in calls {
        let tag = RequestTag {
            query_id: qid.to_string(),
            round: call.call_index,
            batch_index: call.batch_index,
        };
        let text = match result {
            Ok(r) => &r.text,
            Err(e) => return fail(outcome, e.to_string()),
        };
        match method {
            Method::Pointwise(_) => {
                let parsed = match parse_scores(text, call.passages.len()) {
                    Ok(p) => p,
                    Err(e) => return fail(outcome, format!("{tag}: {e}")),
                };
                flags.extend(parsed.flags.iter().map(|f| RunFlag {
                    tag: tag.clone(),
                    detail: serde_json::to_value(f).expect("flags serialize"),
                }));
                for (i, (pid, score)) in call.passages.iter().zip(parsed.scores).enumerate() {
                    judgments.push(JudgmentRow {
                        query_id: qid.to_string(),
                        passage_id: pid.clone(),
                        call_index: call.call_index,
                        batch_index: call.batch_index,
                        position: i as u32 + 1,
                        batch_len: call.passages.len() as u32,
                        initial_rank: candidates.rank_of(pid).unwrap_or(0) as u32,
                        score,
                        gold_grade: dataset.qrels.grade(qid, pid),
                    });
                }
            }
            Method::Listwise(_) => {
                let parsed = match parse_permutation(text, call.passages.len()) {
                    Ok(p) => p,
                    Err(e) => return fail(outcome, format!("{tag}: {e}")),
                };
                flags.extend(parsed.repairs.iter().map(|r| RunFlag {
                    tag: tag.clone(),
                    detail: serde_json::to_value(r).expect("repairs serialize"),
                }));
                let order = parsed.order.iter().map(|&i| call.passages[i - 1].clone()).collect();
                permutations.push(Ranking::new(qid, order));
            }
        }
    }

    let ranking = match method {
        Method::Pointwise(_) => {
            let mut per_passage: BTreeMap<&str, Vec<Judgment>> = BTreeMap::new();
            for row in &judgments {
                per_passage.entry(row.passage_id.as_str()).or_default().push(row.judgment());
            }
            let mut scores = Vec::with_capacity(candidates.depth());
            for pid in candidates.passages() {
                let js = per_passage.get(pid.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                let aggregated = if js.is_empty() {
                    Err(format!("no judgments for passage {pid}"))
                } else {
                    aggregate_scores(js, m).map_err(|e| e.to_string())
                };
                match aggregated {
                    Ok(s) => scores.push(s),
                    Err(e) => return fail(outcome, e),
                }
            }
            let ranking = match rank_by_score(candidates, &scores) {
                Ok(r) => r,
                Err(e) => return fail(outcome, e.to_string()),
            };

            let probabilities: Vec<f64> = scores
                .iter()
                .map(|s| score_to_probability(s.score).expect("means of 0-3 grades stay in range"))
                .collect();
            let labels: Vec<bool> = scores
                .iter()
                .map(|s| binarize_label(dataset.qrels.grade(qid, &s.passage_id), config.binarize_threshold) == 1)
                .collect();
            outcome.auc_pr = match auc_pr(&probabilities, &labels) {
                Ok(v) => Some(v),
                Err(MetricsError::NoPositives) => None,
                Err(e) => return fail(outcome, e.to_string()),
            };
            outcome.scores = scores;
            ranking
        }
        Method::Listwise(_) => match kemeny_aggregate(&permutations) {
            Ok(result) => {
                outcome.consensus = Some(ConsensusInfo {
                    objective: result.objective,
                    exact: result.exact,
                });
                result.ranking
            }
            Err(e) => return fail(outcome, e.to_string()),
        },
    };
    debug_assert!(ranking.validate(candidates).is_ok());
    outcome.ndcg = ndcg_at_k(&ranking, &dataset.qrels, config.ndcg_cutoff).ok();
    outcome.ranking = Some(ranking);
    Assembled {
        outcome,
        judgments,
        flags,
    }
}

fn assemble(
    config: &ExperimentConfig,
    method: Method,
    dataset: &Dataset,
    prepared: &[PreparedQuery],
    outcomes: &[Outcomes],
    m: u32,
    gateway: &Gateway,
) -> RunRecord {
    let mut queries = Vec::with_capacity(prepared.len());
    let mut judgments = Vec::new();
    let mut flags = Vec::new();
    for (p, o) in prepared.iter().zip(outcomes) {
        let a = assemble_query(config, method, dataset, p, o, m);
        queries.push(a.outcome);
        judgments.extend(a.judgments);
        flags.extend(a.flags);
    }
    judgments.sort_by(|a, b| {
        (&a.query_id, a.call_index, a.batch_index, a.position).cmp(&(&b.query_id, b.call_index, b.batch_index, b.position))
    });

    let complete: Vec<&QueryOutcome> = queries.iter().filter(|q| q.is_complete()).collect();
    let mut pooled_probs = Vec::new();
    let mut pooled_labels = Vec::new();
    for q in &complete {
        for s in &q.scores {
            pooled_probs.push(s.score / 3.0);
            pooled_labels.push(
                binarize_label(dataset.qrels.grade(&q.query_id, &s.passage_id), config.binarize_threshold) == 1,
            );
        }
    }
    let summary = Summary {
        queries: queries.len(),
        complete: complete.len(),
        ndcg: macro_mean(complete.iter().filter_map(|q| q.ndcg)),
        initial_ndcg: macro_mean(complete.iter().map(|q| q.initial_ndcg)),
        auc_pr: macro_mean(complete.iter().filter_map(|q| q.auc_pr)),
        auc_pr_pooled: auc_pr(&pooled_probs, &pooled_labels).ok(),
        auc_undefined: match method {
            Method::Pointwise(_) => complete.iter().filter(|q| q.auc_pr.is_none()).count(),
            Method::Listwise(_) => 0,
        },
    };
    let mut config = config.clone();
    config.m = m;
    config.set_method(method);
    RunRecord {
        config,
        method,
        backend: gateway.backend_id(),
        planned_calls: queries.iter().map(|q| q.planned_calls).sum(),
        queries,
        judgments,
        stats: gateway.stats(),
        flags,
        summary,
    }
}

/// Runs one configured experiment on an already loaded dataset.
pub async fn execute(config: &ExperimentConfig, dataset: &Dataset, gateway: &Gateway) -> Result<RunRecord, HarnessError> {
    config.validate()?;
    let method = config.method()?;
    let prepared = prepare(config, method, dataset, config.m);
    let outcomes = dispatch(&prepared, gateway).await;
    Ok(assemble(
        config,
        method,
        dataset,
        &prepared,
        &outcomes,
        config.m,
        gateway,
    ))
}

fn runtime() -> Result<tokio::runtime::Runtime, HarnessError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Loads data, builds the backend and runs the experiment to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let backend = build_backend(config, &dataset)?;
    let gateway = Gateway::new(backend, config.concurrency, config.retry);
    runtime()?.block_on(execute(config, &dataset, &gateway))
}

/// One row of a strategy-by-m comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub ordering: String,
    pub batch_size: usize,
    pub m: u32,
    pub auc_pr: Option<f64>,
    pub ndcg: Option<f64>,
    pub calls: u64,
}

impl SweepRow {
    pub fn from_record(record: &RunRecord) -> Self {
        let depth = record.queries.iter().map(|q| q.depth).max().unwrap_or(0);
        Self {
            strategy: record.method.kind_name().to_string(),
            ordering: record.method.order_name().to_string(),
            batch_size: record.method.plan_strategy().batch_size(depth),
            m: record.config.m,
            auc_pr: record.summary.auc_pr,
            ndcg: record.summary.ndcg,
            calls: record.planned_calls,
        }
    }
}

/// Runs every method at every m.
///
/// Round-invariant plans are issued once at the largest m and evaluated on
/// their m-round prefixes; other plans are re-issued for each m.
pub async fn sweep_with(
    config: &ExperimentConfig,
    dataset: &Dataset,
    gateway: &Gateway,
    methods: &[Method],
    m_values: &[u32],
) -> Result<Vec<(SweepRow, RunRecord)>, HarnessError> {
    let Some(&max_m) = m_values.iter().max() else {
        return Ok(Vec::new());
    };
    if m_values.contains(&0) {
        return Err(HarnessError::Config("m values must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        let mut base = config.clone();
        base.set_method(method);
        base.validate()?;
        if method.plan_strategy().is_round_invariant() {
            let prepared = prepare(&base, method, dataset, max_m);
            let outcomes = dispatch(&prepared, gateway).await;
            for &m in m_values {
                let record = assemble(&base, method, dataset, &prepared, &outcomes, m, gateway);
                rows.push((SweepRow::from_record(&record), record));
            }
        } else {
            for &m in m_values {
                let mut cfg = base.clone();
                cfg.m = m;
                let record = execute(&cfg, dataset, gateway).await?;
                rows.push((SweepRow::from_record(&record), record));
            }
        }
    }
    Ok(rows)
}

pub fn sweep(config: &ExperimentConfig, methods: &[Method], m_values: &[u32]) -> Result<Vec<SweepRow>, HarnessError> {
    let dataset = load_dataset(config)?;
    let backend = build_backend(config, &dataset)?;
    let gateway = Gateway::new(backend, config.concurrency, config.retry);
    let rows = runtime()?.block_on(sweep_with(config, &dataset, &gateway, methods, m_values))?;
    Ok(rows.into_iter().map(|(row, _)| row).collect())
}

/// Position profiles of one run: within calls and along the initial list.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub in_call: BiasProfile,
    pub initial_rank: BiasProfile,
}

pub fn analyze_bias(judgments: &[JudgmentRow], binarize_threshold: u32) -> Result<BiasReport, HarnessError> {
    if judgments.is_empty() {
        return Err(HarnessError::Domain("run has no pointwise judgments to profile".into()));
    }
    if let Some(row) = judgments.iter().find(|j| j.position == 0 || j.initial_rank == 0) {
        return Err(HarnessError::Domain(format!(
            "judgment {}/{} in round {} has no position data",
            row.query_id, row.passage_id, row.call_index
        )));
    }
    let grades: BTreeMap<(&str, &str), u32> = judgments
        .iter()
        .map(|j| ((j.query_id.as_str(), j.passage_id.as_str()), j.gold_grade))
        .collect();
    let positioned: Vec<PositionedJudgment> = judgments.iter().map(JudgmentRow::positioned).collect();
    let relevant = |j: &Judgment| {
        let grade = grades.get(&(j.query_id.as_str(), j.passage_id.as_str())).copied().unwrap_or(0);
        binarize_label(grade, binarize_threshold) == 1
    };
    Ok(BiasReport {
        in_call: bias_profile(&positioned, relevant, PositionAxis::InCall),
        initial_rank: bias_profile(&positioned, relevant, PositionAxis::InitialRank),
    })
}

/// Per-position mean score of a run next to a baseline run (typically
/// one-by-one scoring of the same lists).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub position: u32,
    pub run_mean: Option<f64>,
    pub baseline_mean: Option<f64>,
    pub difference: Option<f64>,
}

pub fn overlay(run: &BiasProfile, baseline: &BiasProfile) -> Vec<OverlayRow> {
    let len = run.rows.len().max(baseline.rows.len()) as u32;
    (1..=len)
        .map(|position| {
            let run_mean = run.row(position).and_then(|r| r.mean());
            let baseline_mean = baseline.row(position).and_then(|r| r.mean());
            OverlayRow {
                position,
                run_mean,
                baseline_mean,
                difference: run_mean.zip(baseline_mean).map(|(a, b)| a - b),
            }
        })
        .collect()
}

/// Runs the experiment and writes its result files to `out`.
pub fn run_to_dir(config: &ExperimentConfig, out: &Path) -> Result<RunRecord, HarnessError> {
    let record = run_experiment(config)?;
    crate::data::write_results(&record, out)?;
    Ok(record)
}

/// Writes sweep rows as long-format CSV; undefined metrics are left blank.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
    w.write_record(["strategy", "ordering", "batch_size", "m", "auc_pr", "ndcg_at_10", "calls"])
        .map_err(DataError::from)?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.ordering.clone(),
            r.batch_size.to_string(),
            r.m.to_string(),
            fmt(r.auc_pr),
            fmt(r.ndcg),
            r.calls.to_string(),
        ])
        .map_err(DataError::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Every method the harness knows, with `batches` sub-batches where relevant.
pub fn all_methods(batches: usize) -> Vec<Method> {
    use crate::batching::{AllInOneOrder, Strategy, SubBatchOrder};
    let mut methods = vec![
        Method::Pointwise(Strategy::OneByOne),
        Method::Pointwise(Strategy::AllInOne {
            order: AllInOneOrder::Initial,
        }),
        Method::Pointwise(Strategy::AllInOne {
            order: AllInOneOrder::Shuffled,
        }),
    ];
    for order in [SubBatchOrder::Initial, SubBatchOrder::ShuffleThenBatch, SubBatchOrder::BatchThenShuffle] {
        methods.push(Method::Pointwise(Strategy::SubBatched { order, batches }));
    }
    methods.push(Method::Listwise(AllInOneOrder::Initial));
    methods.push(Method::Listwise(AllInOneOrder::Shuffled));
    methods
}
