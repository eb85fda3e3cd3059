//! JSON Lines dataset ingestion.
//!
//! Each record is either `{"smiles": "..."}` or an explicit graph
//! `{"n": 3, "nodes": [0,0,2], "edges": [[0,1,1],[1,2,1]], "props": {...}}`.
//! Per-line failures are collected with their line numbers; loading aborts
//! when more than 1% of lines fail.

use super::{parse_smiles, GraphError, GraphSample, Vocabulary};
use rayon::prelude::*;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

/// Mean and standard deviation of a conditioning property over the corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropStats {
    pub mean: f64,
    pub std: f64,
}

/// A parse failure on one dataset line (1-based line numbers).
#[derive(Debug, Clone)]
pub struct LineError {
    pub line: usize,
    pub error: GraphError,
}

/// A loaded corpus: samples in file order, the empirical node-count
/// histogram used for inference-time size sampling, and per-property
/// statistics for condition normalization.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<GraphSample>,
    pub histogram: BTreeMap<usize, usize>,
    pub prop_stats: BTreeMap<String, PropStats>,
    pub line_errors: Vec<LineError>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<GraphSample>) -> Self {
        let mut histogram = BTreeMap::new();
        for s in &samples {
            *histogram.entry(s.n()).or_insert(0) += 1;
        }
        let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        for s in &samples {
            for (k, &v) in &s.props {
                let e = sums.entry(k.clone()).or_insert((0.0, 0.0, 0));
                e.0 += v;
                e.1 += v * v;
                e.2 += 1;
            }
        }
        let prop_stats = sums
            .into_iter()
            .map(|(k, (s, s2, c))| {
                let mean = s / c as f64;
                let var = (s2 / c as f64 - mean * mean).max(0.0);
                let std = var.sqrt();
                (
                    k,
                    PropStats {
                        mean,
                        std: if std > 0.0 { std } else { 1.0 },
                    },
                )
            })
            .collect();
        Dataset {
            samples,
            histogram,
            prop_stats,
            line_errors: Vec::new(),
        }
    }

    pub fn max_nodes(&self) -> usize {
        self.histogram.keys().max().copied().unwrap_or(0)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    smiles: Option<String>,
    n: Option<usize>,
    nodes: Option<Vec<usize>>,
    edges: Option<Vec<(usize, usize, usize)>>,
    #[serde(default)]
    props: BTreeMap<String, f64>,
}

fn parse_record(line: &str, vocab: &Vocabulary) -> Result<GraphSample, GraphError> {
    let rec: Record = serde_json::from_str(line).map_err(|e| GraphError::Syntax {
        position: e.column(),
        expected: format!("valid JSON record ({e})"),
    })?;
    if let Some(smiles) = rec.smiles {
        let mut g = parse_smiles(&smiles, vocab)?;
        g.props = rec.props;
        return Ok(g);
    }
    let n = rec.n.ok_or(GraphError::Syntax {
        position: 0,
        expected: "\"smiles\" or \"n\"/\"nodes\"/\"edges\" fields".into(),
    })?;
    let nodes = rec.nodes.unwrap_or_default();
    if nodes.len() != n {
        return Err(GraphError::Syntax {
            position: 0,
            expected: format!("{n} node labels, found {}", nodes.len()),
        });
    }
    for &x in &nodes {
        if x >= vocab.a_real() {
            return Err(GraphError::BadCategory {
                id: x,
                kind: "atom",
                size: vocab.a_real(),
            });
        }
    }
    let mut g = GraphSample::new(nodes);
    for (i, j, ty) in rec.edges.unwrap_or_default() {
        if i >= n || j >= n {
            return Err(GraphError::IndexOutOfRange {
                index: i.max(j),
                n,
            });
        }
        if i == j {
            return Err(GraphError::Syntax {
                position: 0,
                expected: "no self edges".into(),
            });
        }
        if ty >= vocab.b_real() {
            return Err(GraphError::BadCategory {
                id: ty,
                kind: "bond",
                size: vocab.b_real(),
            });
        }
        g.set_edge(i, j, ty);
    }
    g.props = rec.props;
    Ok(g)
}

/// Load a JSONL dataset. Blank lines are ignored. Line order is preserved.
pub fn load_dataset(path: &Path, vocab: &Vocabulary) -> Result<Dataset, GraphError> {
    let text = std::fs::read_to_string(path)?;
    load_dataset_str(&text, vocab)
}

pub fn load_dataset_str(text: &str, vocab: &Vocabulary) -> Result<Dataset, GraphError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(GraphError::EmptyDataset);
    }
    let parsed: Vec<(usize, Result<GraphSample, GraphError>)> = lines
        .par_iter()
        .map(|&(line, text)| (line, parse_record(text, vocab)))
        .collect();

    let total = parsed.len();
    let mut samples = Vec::with_capacity(total);
    let mut line_errors = Vec::new();
    for (line, res) in parsed {
        match res {
            Ok(g) => samples.push(g),
            Err(error) => line_errors.push(LineError { line, error }),
        }
    }
    if line_errors.len() * 100 > total {
        let first = &line_errors[0];
        return Err(GraphError::TooManyLineErrors {
            failed: line_errors.len(),
            total,
            first_line: first.line,
            first_error: first.error.to_string(),
        });
    }
    if samples.is_empty() {
        return Err(GraphError::EmptyDataset);
    }
    let mut ds = Dataset::from_samples(samples);
    ds.line_errors = line_errors;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::qm9_default()
    }

    #[test]
    fn three_record_histogram() {
        let text = "{\"smiles\": \"C\"}\n{\"smiles\": \"CCO\"}\n{\"smiles\": \"C=O\"}\n";
        let ds = load_dataset_str(text, &vocab()).unwrap();
        assert_eq!(ds.samples.len(), 3);
        let h: Vec<(usize, usize)> = ds.histogram.into_iter().collect();
        assert_eq!(h, vec![(1, 1), (2, 1), (3, 1)]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            load_dataset_str("", &vocab()),
            Err(GraphError::EmptyDataset)
        ));
        assert!(matches!(
            load_dataset_str("\n\n", &vocab()),
            Err(GraphError::EmptyDataset)
        ));
    }

    #[test]
    fn edge_index_out_of_range_reports_line() {
        let text = "{\"n\": 2, \"nodes\": [0, 0], \"edges\": [[0, 5, 1]]}\n";
        match load_dataset_str(text, &vocab()) {
            Err(GraphError::TooManyLineErrors {
                first_line,
                first_error,
                ..
            }) => {
                assert_eq!(first_line, 1);
                assert!(first_error.contains("index 5"), "{first_error}");
            }
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn tolerates_under_one_percent_failures() {
        let mut text = String::new();
        for _ in 0..199 {
            text.push_str("{\"smiles\": \"CC\"}\n");
        }
        text.push_str("{\"smiles\": \"Cx\"}\n");
        let ds = load_dataset_str(&text, &vocab()).unwrap();
        assert_eq!(ds.samples.len(), 199);
        assert_eq!(ds.line_errors.len(), 1);
        assert_eq!(ds.line_errors[0].line, 200);
    }

    #[test]
    fn explicit_records_and_prop_stats() {
        let text = "{\"n\": 2, \"nodes\": [0, 2], \"edges\": [[0, 1, 2]], \"props\": {\"gap\": 1.0}}\n{\"smiles\": \"C\", \"props\": {\"gap\": 3.0}}\n";
        let ds = load_dataset_str(text, &vocab()).unwrap();
        assert_eq!(ds.samples[0].edge(0, 1), 2);
        let s = ds.prop_stats.get("gap").unwrap();
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
    }
}
