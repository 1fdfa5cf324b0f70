//! Prompt rendering and response parsing.
//!
//! Pointwise prompts ask for one integer grade per in-batch index in a fenced
//! JSON block; listwise prompts ask for an ordering of bracketed indices.
//! Indices are 1-based positions in the call, never passage ids.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Passage, Query, MAX_SCORE};

/// Bumped whenever a template's wording changes, since replay caches are
/// keyed on prompt bytes.
pub const TEMPLATE_VERSION: &str = "1";

/// Rough default budget: about 100k tokens at four characters per token.
pub const DEFAULT_MAX_PROMPT_CHARS: usize = 400_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt of {measured} characters exceeds the {limit} character limit")]
    OversizeBatch { measured: usize, limit: usize },
    #[error("cannot render a prompt with no passages")]
    EmptyBatch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("could not parse response: {raw:?}")]
    Unparseable { raw: String },
    #[error("response is missing scores for indices {missing:?}")]
    Incomplete { missing: Vec<usize>, raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    PointwiseSingle,
    PointwiseBatch,
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn builtin(kind: PromptKind) -> Self {
        let text = match kind {
            PromptKind::PointwiseSingle => include_str!("../templates/pointwise_single.txt"),
            PromptKind::PointwiseBatch => include_str!("../templates/pointwise_batch.txt"),
            PromptKind::Listwise => include_str!("../templates/listwise.txt"),
        };
        Self { kind, text }
    }

    /// Substitutes `{{name}}` placeholders in a single pass so that
    /// placeholder-like text inside queries or passages is left alone.
    fn fill(&self, query: &str, passages: &[&Passage]) -> String {
        let enumerated = passages
            .iter()
            .enumerate()
            .map(|(i, p)| format!("[{}] {}", i + 1, p.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let indices = (1..=passages.len())
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let count = passages.len().to_string();

        let mut out = String::with_capacity(self.text.len() + enumerated.len());
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            match &after[..end] {
                "query" => out.push_str(query),
                "passages" => out.push_str(&enumerated),
                "count" => out.push_str(&count),
                "indices" => out.push_str(&indices),
                other => {
                    out.push_str("{{");
                    out.push_str(other);
                    out.push_str("}}");
                }
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptRenderer {
    pub max_chars: usize,
}

impl Default for PromptRenderer {
    fn default() -> Self {
        Self {
            max_chars: DEFAULT_MAX_PROMPT_CHARS,
        }
    }
}

impl PromptRenderer {
    pub fn new(max_chars: usize) -> Self {
        Self { max_chars }
    }

    pub fn render_pointwise(&self, query: &Query, passages: &[&Passage]) -> Result<String, PromptError> {
        let kind = if passages.len() == 1 {
            PromptKind::PointwiseSingle
        } else {
            PromptKind::PointwiseBatch
        };
        self.render(kind, query, passages)
    }

    pub fn render_listwise(&self, query: &Query, passages: &[&Passage]) -> Result<String, PromptError> {
        self.render(PromptKind::Listwise, query, passages)
    }

    fn render(&self, kind: PromptKind, query: &Query, passages: &[&Passage]) -> Result<String, PromptError> {
        if passages.is_empty() {
            return Err(PromptError::EmptyBatch);
        }
        let text = PromptTemplate::builtin(kind).fill(&query.text, passages);
        let measured = text.chars().count();
        if measured > self.max_chars {
            return Err(PromptError::OversizeBatch {
                measured,
                limit: self.max_chars,
            });
        }
        Ok(text)
    }
}

/// Diagnostics raised while parsing a pointwise response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "kebab-case")]
pub enum ScoreFlag {
    /// A score outside 0-3 was clamped into range.
    Clamped { index: usize, value: i64 },
    /// A fractional score was rounded to the nearest grade.
    Rounded { index: usize },
    UnexpectedIndex { index: usize },
    DuplicateIndex { index: usize },
    /// No JSON block was found; the line-oriented fallback was used.
    LineFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedScores {
    /// `scores[i]` is the grade for in-batch index `i + 1`.
    pub scores: Vec<u8>,
    pub flags: Vec<ScoreFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "repair", rename_all = "kebab-case")]
pub enum PermutationRepair {
    DroppedOutOfRange { index: usize },
    DroppedDuplicate { index: usize },
    AppendedMissing { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPermutation {
    /// 1-based in-batch indices, most relevant first.
    pub order: Vec<usize>,
    pub repairs: Vec<PermutationRepair>,
}

impl ParsedPermutation {
    pub fn was_repaired(&self) -> bool {
        !self.repairs.is_empty()
    }
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)```").unwrap());
static SCORE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?im)^[\s"'*-]*(?:passage|index|doc)?\s*\[?(\d+)\]?["']?\s*[:=]\s*["']?(-?\d+(?:\.\d+)?)"#)
        .unwrap()
});
static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(\d+)\s*\]").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

fn json_pairs(text: &str) -> Option<Vec<(usize, f64)>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(&text[start..=end]).ok()?;
    let object = value.as_object()?;
    let mut pairs = Vec::with_capacity(object.len());
    for (key, v) in object {
        let index = key
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .trim()
            .parse::<usize>()
            .ok()?;
        let score = match v {
            serde_json::Value::Number(n) => n.as_f64()?,
            serde_json::Value::String(s) => s.trim().parse::<f64>().ok()?,
            _ => return None,
        };
        pairs.push((index, score));
    }
    Some(pairs)
}

fn line_pairs(text: &str) -> Vec<(usize, f64)> {
    SCORE_LINE
        .captures_iter(text)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect()
}

/// Extracts one 0-3 grade per in-batch index.
///
/// A fenced JSON object is preferred, then any bare JSON object, then
/// `index: score` lines. Out-of-range scores are clamped and flagged; missing
/// indices are an error because a score cannot be invented.
pub fn parse_scores(response: &str, expected_count: usize) -> Result<ParsedScores, ParseError> {
    let mut flags = Vec::new();
    let pairs = FENCE
        .captures_iter(response)
        .find_map(|c| json_pairs(&c[1]))
        .or_else(|| json_pairs(response))
        .filter(|p| !p.is_empty())
        .or_else(|| {
            let lines = line_pairs(response);
            if lines.is_empty() {
                None
            } else {
                flags.push(ScoreFlag::LineFallback);
                Some(lines)
            }
        })
        .ok_or_else(|| ParseError::Unparseable {
            raw: response.to_string(),
        })?;

    let mut scores: Vec<Option<u8>> = vec![None; expected_count];
    for (index, value) in pairs {
        if index == 0 || index > expected_count {
            flags.push(ScoreFlag::UnexpectedIndex { index });
            continue;
        }
        if scores[index - 1].is_some() {
            flags.push(ScoreFlag::DuplicateIndex { index });
            continue;
        }
        let rounded = value.round();
        if rounded != value {
            flags.push(ScoreFlag::Rounded { index });
        }
        let clamped = rounded.clamp(0.0, f64::from(MAX_SCORE));
        if clamped != rounded {
            flags.push(ScoreFlag::Clamped {
                index,
                value: rounded as i64,
            });
        }
        scores[index - 1] = Some(clamped as u8);
    }

    let missing: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| i + 1)
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::Incomplete {
            missing,
            raw: response.to_string(),
        });
    }
    Ok(ParsedScores {
        scores: scores.into_iter().flatten().collect(),
        flags,
    })
}

/// Extracts an ordering of `1..=expected_count`, always returning a complete
/// permutation. Duplicates keep their first occurrence and omitted indices
/// are appended in batch order; every repair is recorded.
pub fn parse_permutation(response: &str, expected_count: usize) -> Result<ParsedPermutation, ParseError> {
    let body = FENCE
        .captures(response)
        .map(|c| c.get(1).map_or("", |m| m.as_str()).to_string())
        .unwrap_or_else(|| response.to_string());

    let bracketed: Vec<&str> = BRACKETED
        .captures_iter(&body)
        .map(|c| c.get(1).unwrap().as_str())
        .collect();
    let tokens: Vec<&str> = if bracketed.is_empty() {
        INTEGER.find_iter(&body).map(|m| m.as_str()).collect()
    } else {
        bracketed
    };
    if tokens.is_empty() {
        return Err(ParseError::Unparseable {
            raw: response.to_string(),
        });
    }

    let mut order = Vec::with_capacity(expected_count);
    let mut repairs = Vec::new();
    let mut seen = HashSet::with_capacity(expected_count);
    for token in tokens {
        let index = token.parse::<usize>().unwrap_or(0);
        if index == 0 || index > expected_count {
            repairs.push(PermutationRepair::DroppedOutOfRange { index });
        } else if !seen.insert(index) {
            repairs.push(PermutationRepair::DroppedDuplicate { index });
        } else {
            order.push(index);
        }
    }
    for index in 1..=expected_count {
        if !seen.contains(&index) {
            order.push(index);
            repairs.push(PermutationRepair::AppendedMissing { index });
        }
    }
    Ok(ParsedPermutation { order, repairs })
}

/// Renders scores in the format [`parse_scores`] expects.
pub fn format_scores(scores: &[u8]) -> String {
    let body = scores
        .iter()
        .enumerate()
        .map(|(i, s)| format!("\"{}\": {}", i + 1, s))
        .collect::<Vec<_>>()
        .join(", ");
    format!("```json\n{{{body}}}\n```")
}

/// Renders an ordering in the `[a] > [b]` format the listwise prompt asks for.
pub fn format_permutation(order: &[usize]) -> String {
    order
        .iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}
