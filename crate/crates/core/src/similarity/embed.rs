//! Token embedders used by the embedding-cosine signal.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub trait TokenEmbedder: Sync {
    fn dim(&self) -> usize;

    /// Embedding of a lowercase token, or `None` when the embedder has no vector for it.
    fn embed(&self, token: &str) -> Option<Vec<f64>>;
}

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Deterministic subword embedder: each boundary-padded character trigram
/// seeds a fixed pseudo-random vector; a token is the normalized sum of its
/// trigram vectors, so tokens sharing trigrams point in similar directions.
#[derive(Debug, Clone, Copy)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        TrigramEmbedder { dim }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder::new(DEFAULT_EMBEDDING_DIM)
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

impl TokenEmbedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, token: &str) -> Option<Vec<f64>> {
        if token.is_empty() {
            return None;
        }
        let padded: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut out = vec![0.0; self.dim];
        let mut buf = String::new();
        for tri in padded.windows(3) {
            buf.clear();
            buf.extend(tri);
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(buf.as_bytes()));
            for x in out.iter_mut() {
                *x += rng.gen_range(-1.0..1.0);
            }
        }
        l2_normalize(&mut out).then_some(out)
    }
}

/// Pre-trained vectors in the plain text format: a `count dim` header line,
/// then one `token v1 .. v_dim` line per token. Unknown tokens have no vector.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, "missing header line"))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, "bad vector count in header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, "bad dimension in header"))?;
        let mut vectors = HashMap::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default().to_lowercase();
            let v = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 2)))?;
            if v.len() != dim {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected {dim} components, found {}", i + 2, v.len()),
                ));
            }
            vectors.entry(token).or_insert(v);
        }
        Ok(WordVectors { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl TokenEmbedder for WordVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, token: &str) -> Option<Vec<f64>> {
        let mut v = self.vectors.get(token)?.clone();
        l2_normalize(&mut v).then_some(v)
    }
}
