//! TREC qrels (`qid iter docid grade`) and run (`qid Q0 docid rank score tag`)
//! files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{DataError, Loaded};
use crate::model::{CandidateList, Qrels, QrelsLabel};

pub fn load_qrels(path: &Path) -> Result<Loaded<Qrels>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_qrels(BufReader::new(file))
}

/// Parses qrels; a repeated (query, passage) pair keeps its last grade and
/// raises a warning.
pub fn parse_qrels(reader: impl BufRead) -> Result<Loaded<Qrels>, DataError> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [query_id, _iter, passage_id, grade] = fields[..] else {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        };
        let grade: u32 = grade.parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("grade {grade:?} is not a nonnegative integer"),
        })?;
        if let Some(previous) = qrels.insert(QrelsLabel {
            query_id: query_id.to_string(),
            passage_id: passage_id.to_string(),
            grade,
        }) {
            let msg = format!(
                "line {line_no}: duplicate label for {query_id}/{passage_id} (grade {previous} replaced by {grade})"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(Loaded {
        value: qrels,
        warnings,
    })
}

pub fn write_qrels(qrels: &Qrels, mut out: impl Write) -> std::io::Result<()> {
    for label in qrels.iter() {
        writeln!(out, "{} 0 {} {}", label.query_id, label.passage_id, label.grade)?;
    }
    Ok(())
}

pub fn load_run(path: &Path, depth: usize) -> Result<Loaded<Vec<CandidateList>>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_run(BufReader::new(file), depth)
}

/// Parses a run into per-query candidate lists sorted by rank and cut at
/// `depth`. Lines may appear in any order; a repeated rank within a query is
/// an error. Queries come back in identifier order.
pub fn parse_run(reader: impl BufRead, depth: usize) -> Result<Loaded<Vec<CandidateList>>, DataError> {
    let mut per_query: BTreeMap<String, Vec<(u64, usize, String)>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [query_id, _q0, passage_id, rank, score, _tag] = fields[..] else {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        };
        let rank: u64 = rank.parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("rank {rank:?} is not a nonnegative integer"),
        })?;
        score.parse::<f64>().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("score {score:?} is not a number"),
        })?;
        per_query
            .entry(query_id.to_string())
            .or_default()
            .push((rank, line_no, passage_id.to_string()));
    }

    let mut warnings = Vec::new();
    let mut lists = Vec::with_capacity(per_query.len());
    for (query_id, mut entries) in per_query {
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DataError::NonMonotoneRank {
                query_id,
                rank: w[1].0,
                line: w[1].1,
            });
        }
        if entries.len() < depth {
            let msg = format!("query {query_id} has {} candidates, fewer than depth {depth}", entries.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let passages = entries.into_iter().take(depth).map(|e| e.2).collect();
        lists.push(CandidateList::new(query_id, passages)?);
    }
    Ok(Loaded {
        value: lists,
        warnings,
    })
}

/// One line of an output run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry<'a> {
    pub query_id: &'a str,
    pub passage_id: &'a str,
    pub rank: usize,
    pub score: f64,
}

pub fn write_run<'a>(entries: impl IntoIterator<Item = RunEntry<'a>>, tag: &str, mut out: impl Write) -> std::io::Result<()> {
    for e in entries {
        writeln!(out, "{} Q0 {} {} {:.6} {}", e.query_id, e.passage_id, e.rank, e.score, tag)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_line() {
        let loaded = parse_qrels("q1 0 d7 2\n".as_bytes()).unwrap();
        assert_eq!(loaded.value.get("q1", "d7"), Some(2));
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn qrels_empty() {
        let loaded = parse_qrels("".as_bytes()).unwrap();
        assert!(loaded.value.is_empty());
    }

    #[test]
    fn qrels_last_wins() {
        let loaded = parse_qrels("q1 0 d7 1\nq1 0 d7 3\n".as_bytes()).unwrap();
        assert_eq!(loaded.value.get("q1", "d7"), Some(3));
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn qrels_malformed_line_number() {
        match parse_qrels("q1 0 d7 1\nq1 0 d8\n".as_bytes()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_qrels("q1 0 d7 -1\n".as_bytes()),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    fn run_text(n: usize) -> String {
        (1..=n).map(|r| format!("q1 Q0 d{r} {r} {} bm25\n", 100 - r)).collect()
    }

    #[test]
    fn run_truncates_to_depth() {
        let loaded = parse_run(run_text(90).as_bytes(), 30).unwrap();
        let list = &loaded.value[0];
        assert_eq!(list.depth(), 30);
        assert_eq!(list.passages()[0], "d1");
        assert_eq!(list.passages()[29], "d30");
        assert!(loaded.warnings.is_empty());

        let all = parse_run(run_text(90).as_bytes(), 90).unwrap();
        assert_eq!(all.value[0].depth(), 90);
    }

    #[test]
    fn run_short_query_warns() {
        let loaded = parse_run(run_text(5).as_bytes(), 30).unwrap();
        assert_eq!(loaded.value[0].depth(), 5);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn run_shuffled_lines_are_rank_sorted() {
        let mut lines: Vec<String> = run_text(10).lines().map(str::to_string).collect();
        lines.reverse();
        lines.swap(2, 7);
        let text = lines.join("\n");
        let loaded = parse_run(text.as_bytes(), 10).unwrap();
        let expected: Vec<String> = (1..=10).map(|r| format!("d{r}")).collect();
        assert_eq!(loaded.value[0].passages(), &expected[..]);
    }

    #[test]
    fn run_repeated_rank_is_rejected() {
        let text = "q1 Q0 a 1 1.0 t\nq1 Q0 b 2 0.5 t\nq1 Q0 c 2 0.4 t\n";
        assert!(matches!(
            parse_run(text.as_bytes(), 10),
            Err(DataError::NonMonotoneRank { rank: 2, .. })
        ));
    }

    #[test]
    fn run_round_trip() {
        let loaded = parse_run(run_text(12).as_bytes(), 12).unwrap();
        let list = &loaded.value[0];
        let mut buf = Vec::new();
        write_run(
            list.passages().iter().enumerate().map(|(i, p)| RunEntry {
                query_id: list.query_id(),
                passage_id: p,
                rank: i + 1,
                score: (12 - i) as f64,
            }),
            "rerank",
            &mut buf,
        )
        .unwrap();
        let again = parse_run(&buf[..], 12).unwrap();
        assert_eq!(&again.value[0], list);
    }

    #[test]
    fn qrels_round_trip() {
        let loaded = parse_qrels("q2 0 b 0\nq1 0 a 3\nq1 0 c 7\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_qrels(&loaded.value, &mut buf).unwrap();
        assert_eq!(parse_qrels(&buf[..]).unwrap().value, loaded.value);
    }
}
