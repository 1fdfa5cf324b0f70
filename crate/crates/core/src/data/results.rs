//! Result files of one run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_run, DataError, RunEntry};
use crate::harness::{analyze_bias, RunRecord};
use crate::metrics::{BiasProfile, PositionedJudgment};
use crate::model::Judgment;
use crate::prompting::TEMPLATE_VERSION;

/// One pointwise judgment with its call placement, as stored in
/// `judgments.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub query_id: String,
    pub passage_id: String,
    pub call_index: u32,
    pub batch_index: u32,
    /// 1-based position within the call.
    pub position: u32,
    pub batch_len: u32,
    /// 1-based rank in the initial list.
    pub initial_rank: u32,
    pub score: u8,
    pub gold_grade: u32,
}

impl JudgmentRow {
    pub fn judgment(&self) -> Judgment {
        Judgment {
            query_id: self.query_id.clone(),
            passage_id: self.passage_id.clone(),
            call_index: self.call_index,
            score: self.score,
        }
    }

    pub fn positioned(&self) -> PositionedJudgment {
        PositionedJudgment {
            judgment: self.judgment(),
            batch_index: self.batch_index,
            position: self.position,
            batch_len: self.batch_len,
            initial_rank: self.initial_rank,
        }
    }
}

/// Paths written by [`write_results`]. Bias files are absent for listwise
/// runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFiles {
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub rankings: PathBuf,
    pub judgments: PathBuf,
    pub bias_in_call: Option<PathBuf>,
    pub bias_initial_rank: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| DataError::io(path, e))?))
}

/// Writes `position,relevant_mean,irrelevant_mean,relevant_count,irrelevant_count`
/// rows; undefined means are left blank.
pub fn write_bias_csv(profile: &BiasProfile, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["position", "relevant_mean", "irrelevant_mean", "relevant_count", "irrelevant_count"])?;
    for row in &profile.rows {
        w.write_record([
            row.position.to_string(),
            fmt_opt(row.relevant_mean()),
            fmt_opt(row.irrelevant_mean()),
            row.relevant_count.to_string(),
            row.irrelevant_count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_judgment_rows(path: &Path) -> Result<Vec<JudgmentRow>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<Vec<JudgmentRow>, _>>()
        .map_err(DataError::from)
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    method: String,
    strategy: &'a str,
    ordering: &'a str,
    m: u32,
    backend: &'a str,
    template_version: &'a str,
    planned_calls: u64,
    call_stats: &'a crate::gateway::CallStats,
    incomplete_queries: Vec<(&'a str, &'a str)>,
    flags: &'a [crate::harness::RunFlag],
    summary: &'a crate::harness::Summary,
    config: &'a crate::harness::ExperimentConfig,
}

/// Writes every result file of `record` into `dir`, creating it if needed.
/// Output depends only on the record, never on completion order.
pub fn write_results(record: &RunRecord, dir: &Path) -> Result<ResultFiles, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;

    let metrics = dir.join("metrics.csv");
    {
        let mut w = csv::Writer::from_writer(create(&metrics)?);
        w.write_record(["query_id", "status", "ndcg", "initial_ndcg", "auc_pr", "calls"])?;
        for q in &record.queries {
            w.write_record([
                q.query_id.clone(),
                if q.is_complete() { "complete" } else { "incomplete" }.to_string(),
                fmt_opt(q.ndcg),
                format!("{:.6}", q.initial_ndcg),
                fmt_opt(q.auc_pr),
                q.planned_calls.to_string(),
            ])?;
        }
        let s = &record.summary;
        w.write_record([
            "all".to_string(),
            format!("{}/{}", s.complete, s.queries),
            fmt_opt(s.ndcg),
            fmt_opt(s.initial_ndcg),
            fmt_opt(s.auc_pr),
            record.planned_calls.to_string(),
        ])?;
        w.flush().map_err(|e| DataError::io(&metrics, e))?;
    }

    let manifest = dir.join("manifest.json");
    {
        let body = Manifest {
            seed: record.config.seed,
            method: record.method.to_string(),
            strategy: record.method.kind_name(),
            ordering: record.method.order_name(),
            m: record.config.m,
            backend: &record.backend,
            template_version: TEMPLATE_VERSION,
            planned_calls: record.planned_calls,
            call_stats: &record.stats,
            incomplete_queries: record
                .queries
                .iter()
                .filter_map(|q| match &q.status {
                    crate::harness::QueryStatus::Incomplete { reason } => Some((q.query_id.as_str(), reason.as_str())),
                    _ => None,
                })
                .collect(),
            flags: &record.flags,
            summary: &record.summary,
            config: &record.config,
        };
        let mut w = create(&manifest)?;
        serde_json::to_writer_pretty(&mut w, &body)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| DataError::io(&manifest, e))?;
    }

    let rankings = dir.join("rankings.run");
    {
        let mut w = create(&rankings)?;
        let entries = record.queries.iter().filter_map(|q| q.ranking.as_ref()).flat_map(|r| {
            let n = r.order.len();
            r.order.iter().enumerate().map(move |(i, p)| RunEntry {
                query_id: &r.query_id,
                passage_id: p,
                rank: i + 1,
                score: (n - i) as f64,
            })
        });
        write_run(entries, &record.config.run_tag, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| DataError::io(&rankings, e))?;
    }

    let judgments = dir.join("judgments.csv");
    {
        let mut w = csv::Writer::from_writer(create(&judgments)?);
        if record.judgments.is_empty() {
            w.write_record([
                "query_id",
                "passage_id",
                "call_index",
                "batch_index",
                "position",
                "batch_len",
                "initial_rank",
                "score",
                "gold_grade",
            ])?;
        }
        for row in &record.judgments {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| DataError::io(&judgments, e))?;
    }

    let (mut bias_in_call, mut bias_initial_rank) = (None, None);
    if !record.judgments.is_empty() {
        if let Ok(report) = analyze_bias(&record.judgments, record.config.binarize_threshold) {
            let a = dir.join("bias_in_call.csv");
            write_bias_csv(&report.in_call, &a)?;
            let b = dir.join("bias_initial_rank.csv");
            write_bias_csv(&report.initial_rank, &b)?;
            bias_in_call = Some(a);
            bias_initial_rank = Some(b);
        }
    }

    Ok(ResultFiles {
        metrics,
        manifest,
        rankings,
        judgments,
        bias_in_call,
        bias_initial_rank,
    })
}
