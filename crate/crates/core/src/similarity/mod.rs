//! The five pairwise column similarity signals and their all-pairs computation.

pub mod embed;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repo::{tokenize, Column, Repository};

pub use embed::{TokenEmbedder, TrigramEmbedder, WordVectors};

/// One relation type of the similarity graph per signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalType {
    JaccardFull,
    JaccardInfrequent,
    MaxContainment,
    EmbeddingCosine,
    DistributionJs,
}

pub const N_SIGNALS: usize = 5;

impl SignalType {
    pub const ALL: [SignalType; N_SIGNALS] = [
        SignalType::JaccardFull,
        SignalType::JaccardInfrequent,
        SignalType::MaxContainment,
        SignalType::EmbeddingCosine,
        SignalType::DistributionJs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalType::JaccardFull => "jaccard_full",
            SignalType::JaccardInfrequent => "jaccard_infrequent",
            SignalType::MaxContainment => "max_containment",
            SignalType::EmbeddingCosine => "embedding_cosine",
            SignalType::DistributionJs => "distribution_js",
        }
    }
}

impl fmt::Display for SignalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown signal '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityRecord {
    pub node_a: usize,
    pub node_b: usize,
    pub scores: [f64; N_SIGNALS],
}

impl SimilarityRecord {
    pub fn score(&self, signal: SignalType) -> f64 {
        self.scores[signal.index()]
    }
}

/// Token occurrence counts over all cell values of one column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenHistogram {
    counts: BTreeMap<String, usize>,
}

impl TokenHistogram {
    pub fn build(col: &Column) -> Self {
        let mut counts = BTreeMap::new();
        for v in &col.values {
            for tok in tokenize(v) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        TokenHistogram { counts }
    }

    pub fn count(&self, token: &str) -> usize {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

fn lowercase_distinct(col: &Column) -> BTreeSet<String> {
    col.distinct_values.iter().map(|v| v.to_lowercase()).collect()
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn containment<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    (inter / a.len() as f64).max(inter / b.len() as f64)
}

/// Per distinct value, the token picked by `better` (ties go to the
/// lexicographically smallest token since candidates are visited sorted).
fn pick_token_per_value(
    col: &Column,
    hist: &TokenHistogram,
    better: impl Fn(usize, usize) -> bool,
) -> Vec<String> {
    let mut picks = Vec::new();
    for value in lowercase_distinct(col) {
        let mut tokens = tokenize(&value);
        tokens.sort();
        let mut best: Option<(String, usize)> = None;
        for tok in tokens {
            let c = hist.count(&tok);
            if best.as_ref().is_none_or(|(_, bc)| better(c, *bc)) {
                best = Some((tok, c));
            }
        }
        if let Some((tok, _)) = best {
            picks.push(tok);
        }
    }
    picks
}

pub fn infrequent_representatives(col: &Column, hist: &TokenHistogram) -> BTreeSet<String> {
    pick_token_per_value(col, hist, |c, best| c < best)
        .into_iter()
        .collect()
}

pub fn frequent_tokens(col: &Column, hist: &TokenHistogram) -> Vec<String> {
    pick_token_per_value(col, hist, |c, best| c > best)
}

/// Mean embedding of each distinct value's most frequent token, L2-normalized.
pub fn embed_column(
    col: &Column,
    hist: &TokenHistogram,
    embedder: &dyn TokenEmbedder,
) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; embedder.dim()];
    let mut n = 0usize;
    for tok in frequent_tokens(col, hist) {
        if let Some(v) = embedder.embed(&tok) {
            sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    embed::l2_normalize(&mut sum).then_some(sum)
}

fn cosine_score(a: Option<&[f64]>, b: Option<&[f64]>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            ((c + 1.0) / 2.0).clamp(0.0, 1.0)
        }
        _ => 0.0,
    }
}

/// `1 - JSD` (base 2) between the two token-frequency distributions.
fn js_from_histograms(a: &TokenHistogram, b: &TokenHistogram) -> f64 {
    let (ta, tb) = (a.total(), b.total());
    if ta == 0 || tb == 0 {
        return 0.0;
    }
    let (ta, tb) = (ta as f64, tb as f64);
    let term = |p: f64, m: f64| if p > 0.0 { p * (p / m).log2() } else { 0.0 };
    let mut jsd = 0.0;
    let mut visit = |ca: usize, cb: usize| {
        let p = ca as f64 / ta;
        let q = cb as f64 / tb;
        let m = 0.5 * (p + q);
        jsd += 0.5 * term(p, m) + 0.5 * term(q, m);
    };
    // merge-walk the two sorted vocabularies
    let mut ia = a.counts.iter().peekable();
    let mut ib = b.counts.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ka, &ca)), Some((kb, &cb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    visit(ca, 0);
                    ia.next();
                }
                std::cmp::Ordering::Greater => {
                    visit(0, cb);
                    ib.next();
                }
                std::cmp::Ordering::Equal => {
                    visit(ca, cb);
                    ia.next();
                    ib.next();
                }
            },
            (Some((_, &ca)), None) => {
                visit(ca, 0);
                ia.next();
            }
            (None, Some((_, &cb))) => {
                visit(0, cb);
                ib.next();
            }
            (None, None) => break,
        }
    }
    (1.0 - jsd).clamp(0.0, 1.0)
}

pub fn jaccard_full(a: &Column, b: &Column) -> f64 {
    jaccard(&lowercase_distinct(a), &lowercase_distinct(b))
}

pub fn jaccard_infrequent(a: &Column, b: &Column) -> f64 {
    let ra = infrequent_representatives(a, &TokenHistogram::build(a));
    let rb = infrequent_representatives(b, &TokenHistogram::build(b));
    jaccard(&ra, &rb)
}

pub fn max_containment(a: &Column, b: &Column) -> f64 {
    containment(&lowercase_distinct(a), &lowercase_distinct(b))
}

pub fn embedding_similarity(a: &Column, b: &Column, embedder: &dyn TokenEmbedder) -> f64 {
    let ua = embed_column(a, &TokenHistogram::build(a), embedder);
    let ub = embed_column(b, &TokenHistogram::build(b), embedder);
    cosine_score(ua.as_deref(), ub.as_deref())
}

pub fn js_similarity(a: &Column, b: &Column) -> f64 {
    js_from_histograms(&TokenHistogram::build(a), &TokenHistogram::build(b))
}

/// Everything a column contributes to pairwise scoring, computed once per column.
#[derive(Debug, Clone)]
pub struct ColumnSignature {
    distinct: BTreeSet<String>,
    histogram: TokenHistogram,
    representatives: BTreeSet<String>,
    embedding: Option<Vec<f64>>,
}

impl ColumnSignature {
    pub fn new(col: &Column, embedder: &dyn TokenEmbedder) -> Self {
        let histogram = TokenHistogram::build(col);
        ColumnSignature {
            distinct: lowercase_distinct(col),
            representatives: infrequent_representatives(col, &histogram),
            embedding: embed_column(col, &histogram, embedder),
            histogram,
        }
    }

    pub fn scores(&self, other: &ColumnSignature) -> [f64; N_SIGNALS] {
        [
            jaccard(&self.distinct, &other.distinct),
            jaccard(&self.representatives, &other.representatives),
            containment(&self.distinct, &other.distinct),
            cosine_score(self.embedding.as_deref(), other.embedding.as_deref()),
            js_from_histograms(&self.histogram, &other.histogram),
        ]
    }
}

pub fn column_signatures(repo: &Repository, embedder: &dyn TokenEmbedder) -> Vec<ColumnSignature> {
    repo.columns
        .par_iter()
        .map(|c| ColumnSignature::new(c, embedder))
        .collect()
}

/// One record per unordered cross-table pair, ordered by `(node_a, node_b)`.
pub fn compute_all_pairs(repo: &Repository, embedder: &dyn TokenEmbedder) -> Vec<SimilarityRecord> {
    let sigs = column_signatures(repo, embedder);
    repo.cross_table_pairs()
        .into_par_iter()
        .map(|(a, b)| SimilarityRecord {
            node_a: a,
            node_b: b,
            scores: sigs[a].scores(&sigs[b]),
        })
        .collect()
}

const CACHE_HEADER: &str =
    "node_a,node_b,jaccard_full,jaccard_infrequent,max_containment,embedding_cosine,distribution_js";

pub fn write_similarity_cache(path: &Path, records: &[SimilarityRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(CACHE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{}", r.node_a, r.node_b));
        for s in r.scores {
            out.push_str(&format!(",{s:.9}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_similarity_cache(path: &Path) -> Result<Vec<SimilarityRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e))?;
    if headers.iter().collect::<Vec<_>>().join(",") != CACHE_HEADER {
        return Err(Error::parse(path, "unexpected similarity cache header"));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| Error::parse(path, format!("row {}: missing field {j}", i + 1)))
        };
        let bad = |e: &dyn fmt::Display| Error::parse(path, format!("row {}: {e}", i + 1));
        let node_a = field(0)?.parse().map_err(|e| bad(&e))?;
        let node_b = field(1)?.parse().map_err(|e| bad(&e))?;
        let mut scores = [0.0; N_SIGNALS];
        for (k, s) in scores.iter_mut().enumerate() {
            *s = field(2 + k)?.parse().map_err(|e| bad(&e))?;
        }
        out.push(SimilarityRecord {
            node_a,
            node_b,
            scores,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(id: usize, values: &[&str]) -> Column {
        Column::from_values(id, "t", values)
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_full_examples() {
        assert!((jaccard_full(&col(0, &["x", "y"]), &col(1, &["y", "z"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_full(&col(0, &["a", "b"]), &col(1, &["B", "a"])), 1.0);
        assert_eq!(jaccard_full(&col(0, &[]), &col(1, &[])), 0.0);
    }

    #[test]
    fn infrequent_representative_examples() {
        let c = col(0, &["170 amsterdam avenue", "55 amsterdam avenue"]);
        let h = TokenHistogram::build(&c);
        assert_eq!(h.count("amsterdam"), 2);
        assert_eq!(infrequent_representatives(&c, &h), set(&["170", "55"]));

        let c = col(0, &["ny", "la"]);
        assert_eq!(
            infrequent_representatives(&c, &TokenHistogram::build(&c)),
            set(&["la", "ny"])
        );

        let c = col(0, &["a a b"]);
        let h = TokenHistogram::build(&c);
        assert_eq!((h.count("a"), h.count("b")), (2, 1));
        assert_eq!(infrequent_representatives(&c, &h), set(&["b"]));
        let c = col(0, &["---", "x"]);
        assert_eq!(infrequent_representatives(&c, &TokenHistogram::build(&c)), set(&["x"]));
    }

    #[test]
    fn jaccard_infrequent_extremes() {
        assert_eq!(jaccard_infrequent(&col(0, &["a b"]), &col(1, &["c d"])), 0.0);
        assert_eq!(jaccard_infrequent(&col(0, &["x 1", "x 2"]), &col(1, &["y 1", "y 2"])), 1.0);
    }

    #[test]
    fn max_containment_examples() {
        let small = col(0, &["1", "2", "3"]);
        let big_values: Vec<String> = (0..1000).map(|i| i.to_string()).collect();
        let big = Column::from_values(1, "t", &big_values);
        assert_eq!(max_containment(&small, &big), 1.0);
        assert_eq!(max_containment(&col(0, &["a"]), &col(1, &["b"])), 0.0);
        let a = col(0, &["a", "b", "c", "d"]);
        let b = col(1, &["a", "b", "e", "f", "g", "h", "i", "j", "k", "l"]);
        assert_eq!(max_containment(&a, &b), 0.5);
        assert_eq!(max_containment(&col(0, &[]), &b), 0.0);
    }

    #[test]
    fn embedding_examples() {
        let e = TrigramEmbedder::default();
        let c = col(0, &["main street", "oak street", "elm street"]);
        let u = embed_column(&c, &TokenHistogram::build(&c), &e).unwrap();
        let s = e.embed("street").unwrap();
        for (x, y) in u.iter().zip(&s) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(embed_column(&col(0, &[]), &TokenHistogram::default(), &e).is_none());

        // two values with distinct frequent tokens: mean then normalize
        let c = col(0, &["alpha", "beta"]);
        let u = embed_column(&c, &TokenHistogram::build(&c), &e).unwrap();
        let (e1, e2) = (e.embed("alpha").unwrap(), e.embed("beta").unwrap());
        let mut mean: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| (a + b) / 2.0).collect();
        let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        mean.iter_mut().for_each(|x| *x /= n);
        for (x, y) in u.iter().zip(&mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_similarity_extremes() {
        let e = TrigramEmbedder::default();
        let a = col(0, &["paris", "rome"]);
        assert!((embedding_similarity(&a, &a, &e) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_score(Some(&[1.0, 0.0]), Some(&[-1.0, 0.0])), 0.0);
        assert_eq!(embedding_similarity(&a, &col(1, &[]), &e), 0.0);
    }

    #[test]
    fn js_examples() {
        let a = col(0, &["x y", "x"]);
        assert!((js_similarity(&a, &a) - 1.0).abs() < 1e-12);
        assert!(js_similarity(&col(0, &["a"]), &col(1, &["b"])).abs() < 1e-12);
        assert_eq!(js_similarity(&col(0, &["--"]), &a), 0.0);

        // P = (0.5, 0.5, 0), Q = (0, 0.5, 0.5) over tokens (a, b, c)
        let p = [0.5, 0.5, 0.0];
        let q = [0.0, 0.5, 0.5];
        let mut jsd = 0.0;
        for i in 0..3 {
            let m: f64 = (p[i] + q[i]) / 2.0;
            if p[i] > 0.0 {
                jsd += 0.5 * p[i] * (p[i] / m).log2();
            }
            if q[i] > 0.0 {
                jsd += 0.5 * q[i] * (q[i] / m).log2();
            }
        }
        let got = js_similarity(&col(0, &["a", "b"]), &col(1, &["b", "c"]));
        assert!((got - (1.0 - jsd)).abs() < 1e-12);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn address_formats_defeat_full_jaccard_only() {
        let a = col(0, &["170 Amsterdam Street", "55 Broadway Street", "12 Lexington Street", "9 Bowery Street"]);
        let b = col(1, &["170 Amsterdam St", "55 Broadway St", "12 Lexington St", "9 Bowery St"]);
        assert_eq!(jaccard_full(&a, &b), 0.0);
        assert!(jaccard_infrequent(&a, &b) > 0.0);
        assert!(embedding_similarity(&a, &b, &TrigramEmbedder::default()) > 0.5);
    }

    fn repo_of(tables: &[&[usize]]) -> Repository {
        let tables = tables
            .iter()
            .enumerate()
            .map(|(i, cols)| {
                let names = (0..cols.len()).map(|c| format!("c{c}")).collect();
                crate::repo::Table::new(format!("t{i}"), names, vec![vec!["v".into(); cols.len()]]).unwrap()
            })
            .collect();
        Repository::from_tables(tables)
    }

    #[test]
    fn all_pairs_counts() {
        let e = TrigramEmbedder::default();
        assert_eq!(compute_all_pairs(&repo_of(&[&[0, 0], &[0, 0]]), &e).len(), 4);
        assert!(compute_all_pairs(&repo_of(&[&[0, 0, 0]]), &e).is_empty());
        let recs = compute_all_pairs(&repo_of(&[&[0], &[0], &[0]]), &e);
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.node_a < r.node_b));
    }

    #[test]
    fn cache_roundtrip_nine_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        let recs = vec![SimilarityRecord { node_a: 0, node_b: 3, scores: [0.1234567891234, 0.0, 1.0, 0.5, 1.0 / 3.0] }];
        write_similarity_cache(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CACHE_HEADER));
        assert!(text.contains("0,3,0.123456789,0.000000000,1.000000000,0.500000000,0.333333333"));
        let back = read_similarity_cache(&path).unwrap();
        assert_eq!(back[0].node_b, 3);
        assert!((back[0].scores[4] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn signal_names_roundtrip() {
        for s in SignalType::ALL {
            assert_eq!(s.name().parse::<SignalType>().unwrap(), s);
        }
        assert!("jaccard".parse::<SignalType>().is_err());
    }
}
