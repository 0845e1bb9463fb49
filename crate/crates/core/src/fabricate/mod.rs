//! Self-supervised training data: every original table is split into two
//! overlapping halves whose shared columns are known joins.

mod perturb;

pub use perturb::{format_variant, keyboard_neighbors, keyboard_typo, perturb_value};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repo::{normalize_value, Repository, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" => Ok(Label::Positive),
            "negative" | "0" => Ok(Label::Negative),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinExample {
    pub node_a: usize,
    pub node_b: usize,
    pub label: Label,
    pub source_table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricationConfig {
    /// Inclusive bounds on the number of shared columns; the upper bound is
    /// further capped by the number of usable columns.
    pub shared_cols_range: (usize, usize),
    pub overlap_fraction_range: (f64, f64),
    pub p_fuzzy_pair: f64,
    pub p_perturb_value: f64,
    pub seed: u64,
}

impl Default for FabricationConfig {
    fn default() -> Self {
        FabricationConfig {
            shared_cols_range: (1, 4),
            overlap_fraction_range: (0.1, 0.7),
            p_fuzzy_pair: 0.5,
            p_perturb_value: 0.3,
            seed: 0,
        }
    }
}

impl FabricationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.shared_cols_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("shared column range [{lo}, {hi}] is empty or starts below 1")));
        }
        let (a, b) = self.overlap_fraction_range;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return Err(Error::Config(format!("overlap fraction range [{a}, {b}] must lie in (0, 1]")));
        }
        for (name, p) in [("p_fuzzy_pair", self.p_fuzzy_pair), ("p_perturb_value", self.p_perturb_value)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// One fabricated pair. Label column indices are local to `left` / `right`.
#[derive(Debug, Clone, PartialEq)]
pub struct FabricatedPair {
    pub left: Table,
    pub right: Table,
    pub fuzzy: bool,
    pub overlap_rows: usize,
    pub labels: Vec<(usize, usize, Label)>,
}

impl FabricatedPair {
    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.2 == Label::Positive).count()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Shared,
    Left,
    Right,
    Dropped,
}

fn has_value(t: &Table, col: usize) -> bool {
    t.column_cells(col).any(|c| normalize_value(c).is_some())
}

pub fn is_eligible(t: &Table) -> bool {
    t.n_rows() >= 2 && (0..t.n_columns()).any(|c| has_value(t, c))
}

fn project(t: &Table, id: String, cols: &[usize], rows: &[usize]) -> Result<Table> {
    let names = cols.iter().map(|&c| t.column_names[c].clone()).collect();
    let data = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| t.rows[r][c].clone()).collect())
        .collect();
    Table::new(id, names, data)
}

/// Splits `t` into two overlapping halves. Returns `None` (with a warning)
/// when the table has fewer than two rows or no non-missing cell.
pub fn fabricate_pair(t: &Table, cfg: &FabricationConfig, rng: &mut impl Rng) -> Result<Option<FabricatedPair>> {
    cfg.validate()?;
    if !is_eligible(t) {
        log::warn!("skipping table `{}`: needs at least two rows and one non-empty column", t.id);
        return Ok(None);
    }
    let n_cols = t.n_columns();
    let n_rows = t.n_rows();

    // shared columns must carry values, otherwise the positive is unlearnable
    let usable: Vec<usize> = (0..n_cols).filter(|&c| has_value(t, c)).collect();
    let hi = cfg.shared_cols_range.1.min(usable.len());
    let lo = cfg.shared_cols_range.0.min(hi);
    let s = rng.gen_range(lo..=hi);
    let mut sides = vec![Side::Dropped; n_cols];
    for i in index::sample(rng, usable.len(), s) {
        sides[usable[i]] = Side::Shared;
    }
    for side in sides.iter_mut().filter(|s| **s != Side::Shared) {
        *side = [Side::Left, Side::Right, Side::Dropped][rng.gen_range(0..3)];
    }

    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(rng);
    let (a, b) = cfg.overlap_fraction_range;
    let rho = if a < b { rng.gen_range(a..=b) } else { a };
    let mut overlap = ((rho * n_rows as f64).ceil() as usize).clamp(1, n_rows);
    for c in (0..n_cols).filter(|&c| sides[c] == Side::Shared) {
        while overlap < n_rows && order[..overlap].iter().all(|&r| normalize_value(&t.rows[r][c]).is_none()) {
            overlap += 1;
        }
    }
    let mut left_rows = order[..overlap].to_vec();
    let mut right_rows = left_rows.clone();
    for (i, &r) in order[overlap..].iter().enumerate() {
        if i % 2 == 0 {
            left_rows.push(r);
        } else {
            right_rows.push(r);
        }
    }

    let left_cols: Vec<usize> = (0..n_cols).filter(|&c| matches!(sides[c], Side::Shared | Side::Left)).collect();
    let right_cols: Vec<usize> = (0..n_cols).filter(|&c| matches!(sides[c], Side::Shared | Side::Right)).collect();
    let left = project(t, format!("{}__L", t.id), &left_cols, &left_rows)?;
    let mut right = project(t, format!("{}__R", t.id), &right_cols, &right_rows)?;

    let fuzzy = rng.gen_bool(cfg.p_fuzzy_pair);
    if fuzzy {
        for row in right.rows.iter_mut() {
            for (j, &c) in right_cols.iter().enumerate() {
                if sides[c] != Side::Shared || normalize_value(&row[j]).is_none() {
                    continue;
                }
                if rng.gen_bool(cfg.p_perturb_value) {
                    let v = normalize_value(&row[j]).unwrap_or_default().to_owned();
                    row[j] = perturb_value(&v, rng);
                }
            }
        }
    }

    let mut labels = Vec::with_capacity(left_cols.len() * right_cols.len());
    for (i, &lc) in left_cols.iter().enumerate() {
        for (j, &rc) in right_cols.iter().enumerate() {
            let label = if lc == rc { Label::Positive } else { Label::Negative };
            labels.push((i, j, label));
        }
    }
    Ok(Some(FabricatedPair {
        left,
        right,
        fuzzy,
        overlap_rows: overlap,
        labels,
    }))
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub repository: Repository,
    pub examples: Vec<JoinExample>,
}

impl TrainingSet {
    pub fn n_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.label == Label::Positive).count()
    }

    pub fn n_negative(&self) -> usize {
        self.examples.len() - self.n_positive()
    }

    /// Negative-to-positive ratio, the positive class weight of the CE loss.
    pub fn positive_weight(&self) -> f64 {
        self.n_negative() as f64 / self.n_positive().max(1) as f64
    }
}

/// One fabricated pair per eligible table. Table `i` draws from its own
/// stream seeded with `seed ^ i`, so the result does not depend on scheduling.
pub fn generate_training_set(repo: &Repository, cfg: &FabricationConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    let pairs: Vec<Option<FabricatedPair>> = repo
        .tables
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ i as u64);
            fabricate_pair(t, cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut tables = Vec::new();
    let mut local = Vec::new();
    for (i, pair) in pairs.into_iter().enumerate() {
        let Some(pair) = pair else { continue };
        let base = tables.len();
        local.push((base, repo.tables[i].id.clone(), pair.labels));
        tables.push(pair.left);
        tables.push(pair.right);
    }
    if tables.is_empty() {
        return Err(Error::InvalidArgument(
            "no table has at least two rows and a non-empty column".into(),
        ));
    }
    let repository = Repository::from_tables(tables);
    let mut examples = Vec::new();
    for (base, source, labels) in local {
        for (i, j, label) in labels {
            examples.push(JoinExample {
                node_a: repository.node_id(base, i),
                node_b: repository.node_id(base + 1, j),
                label,
                source_table: source.clone(),
            });
        }
    }
    Ok(TrainingSet { repository, examples })
}

#[derive(Serialize, Deserialize)]
struct ExampleRow {
    table_a: String,
    column_a: String,
    table_b: String,
    column_b: String,
    label: String,
}

/// Writes `table_a,column_a,table_b,column_b,label`.
pub fn write_examples(path: &Path, repo: &Repository, examples: &[JoinExample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for e in examples {
        let (a, b) = (&repo.columns[e.node_a], &repo.columns[e.node_b]);
        w.serialize(ExampleRow {
            table_a: a.table_id.clone(),
            column_a: a.name.clone(),
            table_b: b.table_id.clone(),
            column_b: b.name.clone(),
            label: e.label.to_string(),
        })
        .map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an examples file against the fabricated repository it describes.
/// The source table is recovered from the fabricated table id.
pub fn read_examples(path: &Path, repo: &Repository) -> Result<Vec<JoinExample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<ExampleRow>() {
        let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let lookup = |t: &str, c: &str| {
            repo.find_column(t, c).ok_or_else(|| Error::UnknownColumn {
                table: t.to_owned(),
                column: c.to_owned(),
            })
        };
        let source = row
            .table_a
            .strip_suffix("__L")
            .unwrap_or(&row.table_a)
            .to_owned();
        out.push(JoinExample {
            node_a: lookup(&row.table_a, &row.column_a)?,
            node_b: lookup(&row.table_b, &row.column_b)?,
            label: row.label.parse()?,
            source_table: source,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
