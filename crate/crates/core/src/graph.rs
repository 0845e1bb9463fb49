//! Multi-relational similarity graph: one relation per signal, pruned to
//! the top-k strongest partners of every node.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::similarity::{SignalType, SimilarityRecord, N_SIGNALS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n_nodes: usize,
    /// Per relation, undirected edges stored once with `u < v`, sorted.
    edges: [Vec<Edge>; N_SIGNALS],
    /// Per node, per relation, neighbors in ascending node id.
    adjacency: Vec<[Vec<(usize, f64)>; N_SIGNALS]>,
}

impl SimilarityGraph {
    /// Assembles a graph from explicit per-relation edge lists. Duplicate and
    /// reversed pairs collapse to one undirected edge; self-loops are rejected.
    pub fn from_edges(n_nodes: usize, edges: [Vec<Edge>; N_SIGNALS]) -> Result<Self> {
        let mut canonical: [Vec<Edge>; N_SIGNALS] = Default::default();
        for (r, list) in edges.into_iter().enumerate() {
            let mut seen = BTreeSet::new();
            for e in list {
                if e.u == e.v {
                    return Err(Error::InvalidArgument(format!("self-loop on node {}", e.u)));
                }
                if e.u >= n_nodes || e.v >= n_nodes {
                    return Err(Error::InvalidArgument(format!(
                        "edge ({}, {}) outside {n_nodes} nodes",
                        e.u, e.v
                    )));
                }
                let (u, v) = (e.u.min(e.v), e.u.max(e.v));
                if seen.insert((u, v)) {
                    canonical[r].push(Edge { u, v, score: e.score });
                }
            }
            canonical[r].sort_by_key(|e| (e.u, e.v));
        }
        let mut adjacency: Vec<[Vec<(usize, f64)>; N_SIGNALS]> =
            (0..n_nodes).map(|_| Default::default()).collect();
        for (r, list) in canonical.iter().enumerate() {
            for e in list {
                adjacency[e.u][r].push((e.v, e.score));
                adjacency[e.v][r].push((e.u, e.score));
            }
        }
        for node in &mut adjacency {
            for list in node.iter_mut() {
                list.sort_by_key(|&(j, _)| j);
            }
        }
        Ok(SimilarityGraph {
            n_nodes,
            edges: canonical,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self, r: SignalType) -> &[Edge] {
        &self.edges[r.index()]
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn neighbors(&self, i: usize, r: SignalType) -> &[(usize, f64)] {
        &self.adjacency[i][r.index()]
    }

    /// Neighbor lists by relation index, used by the message-passing layers.
    pub fn neighbors_by_index(&self, i: usize, r: usize) -> &[(usize, f64)] {
        &self.adjacency[i][r]
    }

    /// `Σ_r |N_i^r|`.
    pub fn total_degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, r: SignalType, a: usize, b: usize) -> bool {
        self.neighbors(a, r).binary_search_by_key(&b, |&(j, _)| j).is_ok()
    }

    /// Dumps one JSON object per edge: `{"u":..,"v":..,"relation":..,"score":..}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            u: usize,
            v: usize,
            relation: &'a str,
            score: f64,
        }
        let mut out = Vec::new();
        for r in SignalType::ALL {
            for e in self.edges(r) {
                let row = Row {
                    u: e.u,
                    v: e.v,
                    relation: r.name(),
                    score: e.score,
                };
                serde_json::to_writer(&mut out, &row).map_err(|e| Error::parse(path, e))?;
                out.push(b'\n');
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Keeps, for every node and relation, its `k` best positive-score partners
/// (score descending, node id ascending); an edge survives if either endpoint selected it.
pub fn build_graph(records: &[SimilarityRecord], n_nodes: usize, k: usize) -> Result<SimilarityGraph> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut edges: [Vec<Edge>; N_SIGNALS] = Default::default();
    for r in SignalType::ALL {
        let mut candidates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for rec in records {
            if rec.node_a == rec.node_b || rec.node_a >= n_nodes || rec.node_b >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "record ({}, {}) is not a valid pair for {n_nodes} nodes",
                    rec.node_a, rec.node_b
                )));
            }
            let s = rec.score(r);
            if s > 0.0 {
                candidates[rec.node_a].push((rec.node_b, s));
                candidates[rec.node_b].push((rec.node_a, s));
            }
        }
        let mut kept = BTreeSet::new();
        for (i, cands) in candidates.iter_mut().enumerate() {
            cands.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            for &(j, s) in cands.iter().take(k) {
                kept.insert((i.min(j), i.max(j), s.to_bits()));
            }
        }
        edges[r.index()] = kept
            .into_iter()
            .map(|(u, v, bits)| Edge {
                u,
                v,
                score: f64::from_bits(bits),
            })
            .collect();
    }
    SimilarityGraph::from_edges(n_nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: usize, b: usize, s: f64) -> SimilarityRecord {
        SimilarityRecord {
            node_a: a,
            node_b: b,
            scores: [s; N_SIGNALS],
        }
    }

    #[test]
    fn country_triangle_k1() {
        // Cntry=0, Country=1, CNTR=2, each in its own table.
        let recs = [rec(0, 1, 0.9), rec(1, 2, 0.8), rec(0, 2, 0.05)];
        let g = build_graph(&recs, 3, 1).unwrap();
        for r in SignalType::ALL {
            assert!(g.has_edge(r, 0, 1));
            assert!(g.has_edge(r, 1, 2));
            assert!(!g.has_edge(r, 0, 2));
        }
        // the two-hop path 0-1-2 connects Cntry and CNTR
        let hop: Vec<usize> = g.neighbors(0, SignalType::JaccardFull).iter().map(|x| x.0).collect();
        assert_eq!(hop, [1]);
        assert!(g.has_edge(SignalType::JaccardFull, hop[0], 2));
    }

    #[test]
    fn zero_scores_give_no_edges() {
        let recs = [rec(0, 1, 0.0), rec(1, 2, 0.0)];
        assert_eq!(build_graph(&recs, 3, 3).unwrap().n_edges(), 0);
    }

    #[test]
    fn large_k_keeps_every_positive_pair() {
        let recs = [rec(0, 1, 0.3), rec(1, 2, 0.2), rec(0, 2, 0.1)];
        let g = build_graph(&recs, 3, 5).unwrap();
        assert_eq!(g.n_edges(), 3 * N_SIGNALS);
    }

    #[test]
    fn k_zero_rejected() {
        assert!(build_graph(&[], 2, 0).is_err());
    }

    #[test]
    fn union_inserted_edge_visible_from_both_ends() {
        // Node 3's only partner is node 0, but 0 prefers 1 under k=1.
        // Selections: 0->1, 1->0, 2->1, 3->0. Union: {0-1, 1-2, 0-3}.
        let recs = [rec(0, 1, 0.9), rec(0, 3, 0.2), rec(1, 2, 0.5), rec(0, 2, 0.1)];
        let g = build_graph(&recs, 4, 1).unwrap();
        let r = SignalType::MaxContainment;
        let n0: Vec<usize> = g.neighbors(0, r).iter().map(|x| x.0).collect();
        assert_eq!(n0, [1, 3]);
        assert_eq!(g.neighbors(3, r), &[(0, 0.2)]);
        assert!(!g.has_edge(r, 0, 2));
        assert_eq!(g.total_degree(0), 2 * N_SIGNALS);
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = build_graph(&[rec(0, 1, 0.5)], 3, 1).unwrap();
        assert!(g.neighbors(2, SignalType::DistributionJs).is_empty());
        assert_eq!(g.total_degree(2), 0);
    }

    #[test]
    fn ties_break_on_node_id() {
        let recs = [rec(0, 2, 0.5), rec(0, 1, 0.5)];
        let g = build_graph(&recs, 3, 1).unwrap();
        // node 0 picks 1; node 2 still keeps its only partner 0
        assert!(g.has_edge(SignalType::JaccardFull, 0, 1));
        assert!(g.has_edge(SignalType::JaccardFull, 0, 2));
        let recs = [rec(0, 2, 0.5), rec(0, 1, 0.5), rec(1, 3, 0.9), rec(2, 3, 0.9)];
        let g = build_graph(&recs, 4, 1).unwrap();
        // 0 picks 1 by id, 2 prefers 3, so nobody selects 0-2
        assert!(!g.has_edge(SignalType::JaccardFull, 0, 2));
    }

    #[test]
    fn jsonl_dump() {
        let g = build_graph(&[rec(0, 1, 0.25)], 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        g.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), N_SIGNALS);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"u":0,"v":1,"relation":"jaccard_full","score":0.25}"#
        );
    }
}
