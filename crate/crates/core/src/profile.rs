//! Initial node features: global column statistics and per-character
//! distributions, z-normalized across the node set.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repo::{is_numeric, tokenize, Column, Repository};

pub const N_GLOBAL_STATS: usize = 12;
pub const N_PROFILE_CHARS: usize = 96;
pub const N_CHAR_AGGREGATES: usize = 6;
pub const PROFILE_DIM: usize = N_GLOBAL_STATS + N_PROFILE_CHARS * N_CHAR_AGGREGATES;

/// TAB followed by the printable ASCII range 32..=126.
pub fn profile_chars() -> impl Iterator<Item = char> {
    std::iter::once('\t').chain((32u8..=126).map(char::from))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub node_id: usize,
    pub features: Vec<f64>,
}

/// Population mean and standard deviation; `(0, 0)` for an empty slice.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fraction(col: &Column, pred: impl Fn(&str) -> bool) -> f64 {
    col.values.iter().filter(|v| pred(v)).count() as f64 / col.values.len() as f64
}

/// `[n_values, n_distinct, distinct_ratio, frac_numeric, frac_alpha,
/// frac_with_digit, mean_len, std_len, min_len, max_len, frac_missing,
/// mean_token_count]`.
pub fn global_stats(col: &Column) -> [f64; N_GLOBAL_STATS] {
    if col.values.is_empty() {
        return [0.0; N_GLOBAL_STATS];
    }
    let n = col.values.len() as f64;
    let n_distinct = col.distinct_values.len() as f64;
    let lengths: Vec<f64> = col.values.iter().map(|v| v.chars().count() as f64).collect();
    let (mean_len, std_len) = mean_std(&lengths);
    let min_len = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let max_len = lengths.iter().copied().fold(0.0, f64::max);
    let tokens: f64 = col.values.iter().map(|v| tokenize(v).len() as f64).sum();
    [
        n,
        n_distinct,
        n_distinct / n,
        fraction(col, is_numeric),
        fraction(col, |v| !v.is_empty() && v.chars().all(char::is_alphabetic)),
        fraction(col, |v| v.chars().any(|c| c.is_ascii_digit())),
        mean_len,
        std_len,
        min_len,
        max_len,
        col.n_missing() as f64 / col.n_raw as f64,
        tokens / n,
    ]
}

/// For each profiled character: `[any, mean, std, min, max, sum]` of its per-cell counts.
pub fn char_distributions(col: &Column) -> Vec<f64> {
    let mut out = vec![0.0; N_PROFILE_CHARS * N_CHAR_AGGREGATES];
    if col.values.is_empty() {
        return out;
    }
    // counts[cell][char slot]
    let slot = |c: char| -> Option<usize> {
        match c {
            '\t' => Some(0),
            ' '..='~' => Some(c as usize - 31),
            _ => None,
        }
    };
    let mut counts = vec![vec![0.0f64; col.values.len()]; N_PROFILE_CHARS];
    for (cell, v) in col.values.iter().enumerate() {
        for c in v.chars() {
            if let Some(s) = slot(c) {
                counts[s][cell] += 1.0;
            }
        }
    }
    for (s, per_cell) in counts.iter().enumerate() {
        let sum: f64 = per_cell.iter().sum();
        if sum == 0.0 {
            continue;
        }
        let (mean, std) = mean_std(per_cell);
        let min = per_cell.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_cell.iter().copied().fold(0.0, f64::max);
        out[s * N_CHAR_AGGREGATES..(s + 1) * N_CHAR_AGGREGATES]
            .copy_from_slice(&[1.0, mean, std, min, max, sum]);
    }
    out
}

pub fn profile_column(col: &Column) -> ColumnProfile {
    let mut features = Vec::with_capacity(PROFILE_DIM);
    features.extend_from_slice(&global_stats(col));
    features.extend(char_distributions(col));
    ColumnProfile {
        node_id: col.node_id,
        features,
    }
}

pub fn profile_repository(repo: &Repository) -> Vec<ColumnProfile> {
    repo.columns.par_iter().map(profile_column).collect()
}

/// Per-dimension affine z-score transform fitted on one node set and reused on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit(profiles: &[ColumnProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot normalize an empty profile set".into()))?;
        let dim = first.features.len();
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        let mut column = Vec::with_capacity(profiles.len());
        for d in 0..dim {
            column.clear();
            for p in profiles {
                if p.features.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        found: p.features.len(),
                    });
                }
                column.push(p.features[d]);
            }
            let (m, s) = mean_std(&column);
            mean[d] = m;
            // constant dimensions can leave rounding residue in the variance
            std[d] = if s <= 1e-12 * m.abs().max(1.0) { 0.0 } else { s };
        }
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s == 0.0 { 0.0 } else { (x - m) / s })
            .collect())
    }

    pub fn apply_all(&self, profiles: &[ColumnProfile]) -> Result<Vec<ColumnProfile>> {
        profiles
            .iter()
            .map(|p| {
                Ok(ColumnProfile {
                    node_id: p.node_id,
                    features: self.apply(&p.features)?,
                })
            })
            .collect()
    }
}

/// Fits a normalizer on `profiles` and returns it with the transformed profiles.
pub fn normalize_profiles(
    profiles: &[ColumnProfile],
) -> Result<(FeatureNormalizer, Vec<ColumnProfile>)> {
    let normalizer = FeatureNormalizer::fit(profiles)?;
    let normalized = normalizer.apply_all(profiles)?;
    Ok((normalizer, normalized))
}

pub fn write_profile_cache(path: &Path, profiles: &[ColumnProfile]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in profiles {
        let line = serde_json::to_string(p).map_err(|e| Error::parse(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_profile_cache(path: &Path) -> Result<Vec<ColumnProfile>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ColumnProfile = serde_json::from_str(&line).map_err(|e| Error::parse(path, e))?;
        if p.node_id != out.len() {
            return Err(Error::parse(path, format!("expected node {} got {}", out.len(), p.node_id)));
        }
        out.push(p);
    }
    Ok(out)
}
