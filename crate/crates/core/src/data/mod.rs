//! Dataset ingestion, synthetic corpora and result files.

mod results;
mod synthetic;
mod trec;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{CandidateList, ModelError, Passage, Qrels, Query};

pub use results::{read_judgment_rows, write_bias_csv, write_results, JudgmentRow, ResultFiles};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use trec::{load_qrels, load_run, parse_qrels, parse_run, write_qrels, write_run, RunEntry};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("query {query_id}: rank {rank} on line {line} is not strictly increasing")]
    NonMonotoneRank { query_id: String, rank: u64, line: usize },
    #[error("invalid grade distribution: {0}")]
    InvalidDistribution(String),
    #[error("passage {0} is not in the corpus")]
    MissingPassage(String),
    #[error("query {0} has no text")]
    MissingQuery(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A parsed value plus the warnings raised while loading it.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Everything one experiment reads: queries, passage texts, gold labels and
/// initial candidate lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub queries: BTreeMap<String, Query>,
    pub passages: BTreeMap<String, Passage>,
    pub qrels: Qrels,
    pub candidates: Vec<CandidateList>,
}

impl Dataset {
    pub fn query(&self, id: &str) -> Option<&Query> {
        self.queries.get(id)
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passages.get(id)
    }

    /// Truncates every candidate list to `depth`.
    pub fn with_depth(mut self, depth: usize) -> Self {
        self.candidates = self.candidates.iter().map(|c| c.truncated(depth)).collect();
        self
    }

    /// Checks that every candidate has a query text and a passage body.
    pub fn validate(&self) -> Result<(), DataError> {
        for list in &self.candidates {
            if !self.queries.contains_key(list.query_id()) {
                return Err(DataError::MissingQuery(list.query_id().to_string()));
            }
            if let Some(p) = list.passages().iter().find(|p| !self.passages.contains_key(*p)) {
                return Err(DataError::MissingPassage(p.clone()));
            }
        }
        Ok(())
    }

    /// Loads TSV queries and corpus plus TREC qrels and run files.
    pub fn from_files(
        queries: &Path,
        corpus: &Path,
        qrels: &Path,
        run: &Path,
        depth: usize,
    ) -> Result<Loaded<Self>, DataError> {
        let mut warnings = Vec::new();
        let queries = load_tsv(queries)?
            .into_iter()
            .map(|(id, text)| (id.clone(), Query { id, text }))
            .collect();
        let passages = load_tsv(corpus)?
            .into_iter()
            .map(|(id, text)| (id.clone(), Passage { id, text }))
            .collect();
        let qrels = load_qrels(qrels)?;
        warnings.extend(qrels.warnings);
        let run = load_run(run, depth)?;
        warnings.extend(run.warnings);
        let dataset = Dataset {
            queries,
            passages,
            qrels: qrels.value,
            candidates: run.value,
        };
        dataset.validate()?;
        Ok(Loaded {
            value: dataset,
            warnings,
        })
    }
}

/// Reads `id<TAB>text` lines. Blank lines are skipped.
pub fn load_tsv(path: &Path) -> Result<Vec<(String, String)>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| DataError::Parse {
            line: n + 1,
            message: "expected id<TAB>text".into(),
        })?;
        if id.is_empty() {
            return Err(DataError::Parse {
                line: n + 1,
                message: "empty id".into(),
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

/// Writes `id<TAB>text` lines; tabs and newlines in text become spaces.
pub fn write_tsv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), DataError> {
    use std::io::Write;
    let mut file = io::BufWriter::new(File::create(path).map_err(|e| DataError::io(path, e))?);
    for (id, text) in rows {
        let clean: String = text.chars().map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c }).collect();
        writeln!(file, "{id}\t{clean}").map_err(|e| DataError::io(path, e))?;
    }
    file.flush().map_err(|e| DataError::io(path, e))
}
