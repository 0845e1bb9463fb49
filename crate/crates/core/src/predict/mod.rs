//! Inference on an original repository and evaluation against ground truth.

pub mod baseline;
pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::model::RgcnModel;
use crate::profile::profile_repository;
use crate::repo::Repository;
use crate::scalar::Scalar;
use crate::similarity::{compute_all_pairs, SignalType, SimilarityRecord, TokenEmbedder};
use crate::tensor::Matrix;
use baseline::{score_matrix, Mlp};
use metrics::{best_f1, pr_auc, pr_curve_from_labels, PrPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoinPrediction {
    pub node_a: usize,
    pub node_b: usize,
    pub score: f64,
}

/// Score descending, then pair ascending.
pub fn sort_predictions(preds: &mut [JoinPrediction]) {
    preds.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then((x.node_a, x.node_b).cmp(&(y.node_a, y.node_b)))
    });
}

/// Scores every cross-table pair from precomputed similarities and raw
/// (unnormalized) profile features.
pub fn infer_from_parts<T: Scalar>(
    model: &RgcnModel<T>,
    n_nodes: usize,
    records: &[SimilarityRecord],
    raw_features: &[Vec<f64>],
) -> Result<Vec<JoinPrediction>> {
    if raw_features.len() != n_nodes {
        return Err(Error::Dimension {
            expected: n_nodes,
            found: raw_features.len(),
        });
    }
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let graph = build_graph(records, n_nodes, model.k.max(1))?;
    let x = model.prepare_features(raw_features)?;
    let h = model.forward(&graph, &x)?;
    let pairs: Vec<(usize, usize)> = records.iter().map(|r| (r.node_a, r.node_b)).collect();
    let scores = score_chunks(model, &h, &pairs)?;
    let mut preds: Vec<JoinPrediction> = pairs
        .iter()
        .zip(scores)
        .map(|(&(a, b), s)| JoinPrediction {
            node_a: a.min(b),
            node_b: a.max(b),
            score: s.as_f64(),
        })
        .collect();
    sort_predictions(&mut preds);
    Ok(preds)
}

fn score_chunks<T: Scalar>(model: &RgcnModel<T>, h: &Matrix<T>, pairs: &[(usize, usize)]) -> Result<Vec<T>> {
    let chunks: Vec<Vec<T>> = pairs
        .par_chunks(4096)
        .map(|c| model.score_pairs(h, c))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Similarities, graph with the model's `k`, normalized fresh profiles, one
/// forward pass, then a score for every cross-table pair.
pub fn infer<T: Scalar>(
    model: &RgcnModel<T>,
    repo: &Repository,
    embedder: &dyn TokenEmbedder,
) -> Result<Vec<JoinPrediction>> {
    let records = compute_all_pairs(repo, embedder);
    let raw: Vec<Vec<f64>> = profile_repository(repo).into_iter().map(|p| p.features).collect();
    infer_from_parts(model, repo.n_nodes(), &records, &raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKind {
    Equi,
    Fuzzy,
}

impl FromStr for JoinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equi" => Ok(JoinKind::Equi),
            "fuzzy" => Ok(JoinKind::Fuzzy),
            other => Err(Error::InvalidArgument(format!("unknown join kind `{other}`"))),
        }
    }
}

impl fmt::Display for JoinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JoinKind::Equi => "equi",
            JoinKind::Fuzzy => "fuzzy",
        })
    }
}

/// Unordered positive pairs of an original repository.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pairs: BTreeMap<(usize, usize), Option<JoinKind>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    table_a: String,
    column_a: String,
    table_b: String,
    column_b: String,
    #[serde(default)]
    kind: Option<String>,
}

impl GroundTruth {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut truth = GroundTruth::default();
        for (a, b) in pairs {
            truth.insert(a, b, None);
        }
        truth
    }

    pub fn insert(&mut self, a: usize, b: usize, kind: Option<JoinKind>) {
        self.pairs.insert((a.min(b), a.max(b)), kind);
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.contains_key(&(a.min(b), a.max(b)))
    }

    pub fn kind(&self, a: usize, b: usize) -> Option<JoinKind> {
        self.pairs.get(&(a.min(b), a.max(b))).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.keys().copied()
    }

    /// Reads `table_a,column_a,table_b,column_b[,kind]`. Tables are named by
    /// file stem; any reference to a missing table or column is an error.
    pub fn load(path: &Path, repo: &Repository) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let mut truth = GroundTruth::default();
        for row in r.deserialize::<TruthRow>() {
            let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
            let lookup = |t: &str, c: &str| {
                repo.find_column(t, c).ok_or_else(|| Error::UnknownColumn {
                    table: t.to_owned(),
                    column: c.to_owned(),
                })
            };
            let a = lookup(&row.table_a, &row.column_a)?;
            let b = lookup(&row.table_b, &row.column_b)?;
            let kind = match row.kind.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(k) => Some(k.parse()?),
            };
            truth.insert(a, b, kind);
        }
        Ok(truth)
    }

    pub fn write(&self, path: &Path, repo: &Repository) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        for (&(a, b), kind) in &self.pairs {
            let (ca, cb) = (&repo.columns[a], &repo.columns[b]);
            w.serialize(TruthRow {
                table_a: ca.table_id.clone(),
                column_a: ca.name.clone(),
                table_b: cb.table_id.clone(),
                column_b: cb.name.clone(),
                kind: kind.map(|k| k.to_string()),
            })
            .map_err(|e| Error::parse(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn labelled(scored: impl Iterator<Item = (usize, usize, f64)>, truth: &GroundTruth) -> Vec<(f64, bool)> {
    scored.map(|(a, b, s)| (s, truth.contains(a, b))).collect()
}

pub fn pr_curve(preds: &[JoinPrediction], truth: &GroundTruth) -> Result<Vec<PrPoint<f64>>> {
    let scored = labelled(preds.iter().map(|p| (p.node_a, p.node_b, p.score)), truth);
    pr_curve_from_labels(&scored, truth.len())
}

/// PR curve of a single raw similarity signal used as the score.
pub fn threshold_baseline(
    records: &[SimilarityRecord],
    signal: SignalType,
    truth: &GroundTruth,
) -> Result<Vec<PrPoint<f64>>> {
    let scored = labelled(records.iter().map(|r| (r.node_a, r.node_b, r.score(signal))), truth);
    pr_curve_from_labels(&scored, truth.len())
}

/// PR curve of a trained similarity perceptron on `records`.
pub fn mlp_curve(mlp: &Mlp<f64>, records: &[SimilarityRecord], truth: &GroundTruth) -> Result<Vec<PrPoint<f64>>> {
    let rows: Vec<_> = records.iter().map(|r| r.scores).collect();
    let scores = mlp.predict(&score_matrix::<f64>(&rows))?;
    let scored = labelled(
        records.iter().zip(scores).map(|(r, s)| (r.node_a, r.node_b, s)),
        truth,
    );
    pr_curve_from_labels(&scored, truth.len())
}

/// A curve with its summary scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub name: String,
    pub best_f1: f64,
    pub pr_auc: f64,
    pub curve: Vec<PrPoint<f64>>,
}

impl CurveSummary {
    pub fn new(name: impl Into<String>, curve: Vec<PrPoint<f64>>) -> Self {
        CurveSummary {
            name: name.into(),
            best_f1: best_f1(&curve),
            pr_auc: pr_auc(&curve),
            curve,
        }
    }
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    table_a: &'a str,
    column_a: &'a str,
    table_b: &'a str,
    column_b: &'a str,
    score: String,
}

/// Writes `table_a,column_a,table_b,column_b,score` with fixed precision.
pub fn write_predictions(path: &Path, repo: &Repository, preds: &[JoinPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for p in preds {
        let (a, b) = (&repo.columns[p.node_a], &repo.columns[p.node_b]);
        w.serialize(PredictionRow {
            table_a: &a.table_id,
            column_a: &a.name,
            table_b: &b.table_id,
            column_b: &b.name,
            score: format!("{:.9}", p.score),
        })
        .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Truth pairs that fall inside a single table can never be predicted.
pub fn same_table_truth(truth: &GroundTruth, repo: &Repository) -> BTreeSet<(usize, usize)> {
    truth.pairs().filter(|&(a, b)| repo.same_table(a, b)).collect()
}

#[cfg(test)]
mod tests;
