//! Relational graph convolution over the similarity graph, the pair scoring
//! head, and both training objectives with hand-derived gradients.
//!
//! Layer `ℓ` computes, for node `i` with `N_i^r` its neighbors under relation `r`
//! and `D_i = Σ_r |N_i^r|`:
//!
//! ```text
//! pre_i = Σ_r [ mean_{j ∈ N_i^r} W_r h_j + b_r ]  +  (W_0 h_i + b_0)   (terms present only when non-empty)
//! m_i   = σ(pre_i)
//! h_i'  = res(h_i) + m_i
//! ```
//!
//! The self term appears once per neighbor message with weight `1/D_i`, so it
//! sums to exactly one `W_0 h_i + b_0`. `res` is the identity, except for the
//! first layer when the feature width differs from the hidden width, where it
//! is a learned linear projection.

pub mod checkpoint;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::profile::FeatureNormalizer;
use crate::scalar::Scalar;
use crate::similarity::N_SIGNALS;
use crate::tensor::{sigmoid, sigmoid_scalar, softplus, Matrix};

pub use train::{build_triplets, select_k, train, History, TrainConfig, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    CrossEntropy,
    Triplet,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(LossMode::CrossEntropy),
            "triplet" => Ok(LossMode::Triplet),
            _ => Err(Error::InvalidArgument(format!("unknown loss mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::CrossEntropy => "cross_entropy",
            LossMode::Triplet => "triplet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Width of the scoring head's hidden layer (cross-entropy mode only).
    pub head_hidden: usize,
    pub loss_mode: LossMode,
    pub margin: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("layers and dimensions must be positive".into()));
        }
        if self.loss_mode == LossMode::CrossEntropy && self.head_hidden == 0 {
            return Err(Error::Config("head width must be positive".into()));
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `out × in`
    pub weight: Matrix<T>,
    /// `1 × out`
    pub bias: Matrix<T>,
}

impl<T: Scalar> Linear<T> {
    fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Matrix::xavier_uniform(out_dim, in_dim, rng),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    /// `x Wᵀ + b` for a batch of row vectors.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul_t(&self.weight)?;
        y.add_row(self.bias.data())?;
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationalLayer<T> {
    pub relations: Vec<Linear<T>>,
    pub self_loop: Linear<T>,
}

/// Scores a pair from `[h_a ⊙ h_b ∥ |h_a − h_b|]` through one sigmoid hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHead<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

/// Every trainable tensor. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub projection: Option<Linear<T>>,
    pub layers: Vec<RelationalLayer<T>>,
    pub head: Option<PairHead<T>>,
}

impl<T: Scalar> Parameters<T> {
    fn build(cfg: &ModelConfig, mut make: impl FnMut(usize, usize) -> Linear<T>) -> Self {
        let projection = (cfg.input_dim != cfg.hidden_dim).then(|| make(cfg.hidden_dim, cfg.input_dim));
        let layers = (0..cfg.layers)
            .map(|l| {
                let in_dim = if l == 0 { cfg.input_dim } else { cfg.hidden_dim };
                RelationalLayer {
                    relations: (0..N_SIGNALS).map(|_| make(cfg.hidden_dim, in_dim)).collect(),
                    self_loop: make(cfg.hidden_dim, in_dim),
                }
            })
            .collect();
        let head = (cfg.loss_mode == LossMode::CrossEntropy).then(|| PairHead {
            hidden: make(cfg.head_hidden, 2 * cfg.hidden_dim),
            output: make(1, cfg.head_hidden),
        });
        Parameters {
            projection,
            layers,
            head,
        }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |o, i| Linear::init(o, i, &mut rng))
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, Linear::zeros)
    }

    fn linears(&self) -> Vec<&Linear<T>> {
        let mut out: Vec<&Linear<T>> = self.projection.iter().collect();
        for layer in &self.layers {
            out.extend(layer.relations.iter());
            out.push(&layer.self_loop);
        }
        if let Some(h) = &self.head {
            out.push(&h.hidden);
            out.push(&h.output);
        }
        out
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut out: Vec<&mut Linear<T>> = self.projection.iter_mut().collect();
        for layer in &mut self.layers {
            out.extend(layer.relations.iter_mut());
            out.push(&mut layer.self_loop);
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.hidden);
            out.push(&mut h.output);
        }
        out
    }

    /// All tensors in a fixed order (weight then bias per linear map).
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.linears()
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.linears_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn into_tensors(self) -> Vec<Matrix<T>> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors()
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::Dimension {
                expected: self.n_scalars(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Neighbor ids per node and relation, extracted once per graph.
#[derive(Debug, Clone)]
pub struct Adjacency {
    neighbors: Vec<[Vec<usize>; N_SIGNALS]>,
}

impl Adjacency {
    pub fn new(graph: &SimilarityGraph) -> Self {
        let neighbors = (0..graph.n_nodes())
            .map(|i| std::array::from_fn(|r| graph.neighbors_by_index(i, r).iter().map(|&(j, _)| j).collect()))
            .collect();
        Adjacency { neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    fn of(&self, i: usize, r: usize) -> &[usize] {
        &self.neighbors[i][r]
    }

    fn has_any(&self, i: usize) -> bool {
        self.neighbors[i].iter().any(|l| !l.is_empty())
    }
}

struct LayerCache<T> {
    input: Matrix<T>,
    aggregates: Vec<Matrix<T>>,
    message: Matrix<T>,
}

pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

/// A `(anchor, positive, negative)` node triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgcnModel<T> {
    pub config: ModelConfig,
    pub params: Parameters<T>,
    /// Fitted on the training node set and reapplied at inference.
    pub normalizer: Option<FeatureNormalizer>,
    /// Top-k budget the model was trained with.
    pub k: usize,
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

fn pair_features<T: Scalar>(h: &Matrix<T>, pairs: &[(usize, usize)]) -> Matrix<T> {
    let d = h.cols();
    let mut z = Matrix::zeros(pairs.len(), 2 * d);
    for (p, &(a, b)) in pairs.iter().enumerate() {
        let (ha, hb) = (h.row(a), h.row(b));
        let row = z.row_mut(p);
        for k in 0..d {
            row[k] = ha[k] * hb[k];
            row[d + k] = (ha[k] - hb[k]).abs();
        }
    }
    z
}

impl<T: Scalar> RgcnModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(RgcnModel {
            params: Parameters::init(&config, seed),
            config,
            normalizer: None,
            k: 1,
        })
    }

    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(RgcnModel {
            params: Parameters::zeros(&config),
            config,
            normalizer: None,
            k: 1,
        })
    }

    pub fn forward(&self, graph: &SimilarityGraph, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(&Adjacency::new(graph), x)?.0)
    }

    pub fn forward_cached(&self, adj: &Adjacency, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                found: x.cols(),
            });
        }
        if x.rows() != adj.n_nodes() {
            return Err(Error::Dimension {
                expected: adj.n_nodes(),
                found: x.rows(),
            });
        }
        let n = x.rows();
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut pre = Matrix::zeros(n, self.config.hidden_dim);
            let mut aggregates = Vec::with_capacity(N_SIGNALS);
            for (r, rel) in layer.relations.iter().enumerate() {
                let mut agg = Matrix::zeros(n, h.cols());
                for i in 0..n {
                    let nbrs = adj.of(i, r);
                    if nbrs.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::of_usize(nbrs.len());
                    let row = agg.row_mut(i);
                    for &j in nbrs {
                        for (a, &v) in row.iter_mut().zip(h.row(j)) {
                            *a += v;
                        }
                    }
                    row.iter_mut().for_each(|a| *a *= inv);
                }
                let part = agg.matmul_t(&rel.weight)?;
                for i in 0..n {
                    if adj.of(i, r).is_empty() {
                        continue;
                    }
                    for ((p, &v), &b) in pre.row_mut(i).iter_mut().zip(part.row(i)).zip(rel.bias.data()) {
                        *p += v + b;
                    }
                }
                aggregates.push(agg);
            }
            let self_part = h.matmul_t(&layer.self_loop.weight)?;
            for i in 0..n {
                if !adj.has_any(i) {
                    continue;
                }
                for ((p, &v), &b) in pre
                    .row_mut(i)
                    .iter_mut()
                    .zip(self_part.row(i))
                    .zip(layer.self_loop.bias.data())
                {
                    *p += v + b;
                }
            }
            let message = sigmoid(&pre);
            let base = match (&self.params.projection, l) {
                (Some(p), 0) => p.apply(&h)?,
                _ => h.clone(),
            };
            let next = base.add(&message)?;
            caches.push(LayerCache {
                input: h,
                aggregates,
                message,
            });
            h = next;
        }
        Ok((h, ForwardCache { layers: caches }))
    }

    /// Gradients of all RGCN parameters given `dL/dH` at the last layer.
    /// The head gradient slot is left zero.
    pub fn backward(&self, adj: &Adjacency, cache: &ForwardCache<T>, d_out: &Matrix<T>) -> Result<Parameters<T>> {
        let mut grads = Parameters::zeros(&self.config);
        let n = adj.n_nodes();
        let mut dh = d_out.clone();
        for l in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[l];
            let lc = &cache.layers[l];
            let g = &mut grads.layers[l];
            let need_input_grad = l > 0;
            let mut d_pre = Matrix::from_fn(n, self.config.hidden_dim, |i, k| {
                let m = lc.message.get(i, k);
                dh.get(i, k) * m * (T::one() - m)
            });
            // isolated nodes have a constant pre-activation
            for i in 0..n {
                if !adj.has_any(i) {
                    d_pre.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
                }
            }
            let mut d_in = Matrix::zeros(n, lc.input.cols());
            for (r, rel) in layer.relations.iter().enumerate() {
                let mut d_rel = d_pre.clone();
                for i in 0..n {
                    if adj.of(i, r).is_empty() {
                        d_rel.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                g.relations[r].weight.add_scaled(&d_rel.t_matmul(&lc.aggregates[r])?, T::one())?;
                for (b, s) in g.relations[r].bias.data_mut().iter_mut().zip(d_rel.column_sums()) {
                    *b += s;
                }
                if need_input_grad {
                    let d_agg = d_rel.matmul(&rel.weight)?;
                    for i in 0..n {
                        let nbrs = adj.of(i, r);
                        if nbrs.is_empty() {
                            continue;
                        }
                        let inv = T::one() / T::of_usize(nbrs.len());
                        for &j in nbrs {
                            for (d, &v) in d_in.row_mut(j).iter_mut().zip(d_agg.row(i)) {
                                *d += v * inv;
                            }
                        }
                    }
                }
            }
            g.self_loop.weight.add_scaled(&d_pre.t_matmul(&lc.input)?, T::one())?;
            for (b, s) in g.self_loop.bias.data_mut().iter_mut().zip(d_pre.column_sums()) {
                *b += s;
            }
            if need_input_grad {
                d_in.add_scaled(&d_pre.matmul(&layer.self_loop.weight)?, T::one())?;
            }
            if l == 0 && self.params.projection.is_some() {
                let gp = grads.projection.as_mut().expect("projection gradient slot");
                gp.weight.add_scaled(&dh.t_matmul(&lc.input)?, T::one())?;
                for (b, s) in gp.bias.data_mut().iter_mut().zip(dh.column_sums()) {
                    *b += s;
                }
            } else if need_input_grad {
                d_in.add_scaled(&dh, T::one())?;
            }
            dh = d_in;
        }
        Ok(grads)
    }

    /// Pre-sigmoid head outputs for a batch of pairs, with the hidden activations.
    fn head_logits(&self, h: &Matrix<T>, pairs: &[(usize, usize)]) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let head = self
            .params
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("cross-entropy scoring needs a pair head".into()))?;
        let z = pair_features(h, pairs);
        let hidden = sigmoid(&head.hidden.apply(&z)?);
        let logits = head.output.apply(&hidden)?;
        Ok((z, hidden, logits))
    }

    /// Joinability score in `[0, 1]` for two final node representations.
    pub fn score_pair(&self, h_a: &[T], h_b: &[T]) -> Result<T> {
        match self.config.loss_mode {
            LossMode::Triplet => Ok(T::one() / (T::one() + distance(h_a, h_b))),
            LossMode::CrossEntropy => {
                let mut h = Matrix::zeros(2, h_a.len());
                h.row_mut(0).copy_from_slice(h_a);
                h.row_mut(1).copy_from_slice(h_b);
                let (_, _, s) = self.head_logits(&h, &[(0, 1)])?;
                Ok(sigmoid_scalar(s.get(0, 0)))
            }
        }
    }

    pub fn score_pairs(&self, h: &Matrix<T>, pairs: &[(usize, usize)]) -> Result<Vec<T>> {
        match self.config.loss_mode {
            LossMode::Triplet => Ok(pairs
                .iter()
                .map(|&(a, b)| T::one() / (T::one() + distance(h.row(a), h.row(b))))
                .collect()),
            LossMode::CrossEntropy => {
                if pairs.is_empty() {
                    return Ok(Vec::new());
                }
                let (_, _, s) = self.head_logits(h, pairs)?;
                Ok(s.data().iter().map(|&v| sigmoid_scalar(v)).collect())
            }
        }
    }

    /// Weighted cross-entropy on final representations; returns the loss,
    /// `dL/dH`, and head gradients written into `grads`.
    pub fn ce_objective(
        &self,
        h: &Matrix<T>,
        positives: &[(usize, usize)],
        negatives: &[(usize, usize)],
        grads: Option<&mut Parameters<T>>,
    ) -> Result<(T, Matrix<T>)> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidArgument("cross-entropy needs positive and negative examples".into()));
        }
        let w_p = T::of_usize(negatives.len()) / T::of_usize(positives.len());
        let pairs: Vec<(usize, usize)> = positives.iter().chain(negatives).copied().collect();
        let (z, hidden, logits) = self.head_logits(h, &pairs)?;
        let mut loss = T::zero();
        let mut d_logit = Matrix::zeros(pairs.len(), 1);
        for p in 0..pairs.len() {
            let s = logits.get(p, 0);
            if p < positives.len() {
                loss += w_p * softplus(-s);
                d_logit.set(p, 0, -w_p * sigmoid_scalar(-s));
            } else {
                loss += softplus(s);
                d_logit.set(p, 0, sigmoid_scalar(s));
            }
        }
        let head = self.params.head.as_ref().expect("checked by head_logits");
        let mut dh = Matrix::zeros(h.rows(), h.cols());
        let d_hidden_act = d_logit.matmul(&head.output.weight)?;
        let d_hidden_pre = Matrix::from_fn(pairs.len(), head.hidden.weight.rows(), |p, k| {
            let u = hidden.get(p, k);
            d_hidden_act.get(p, k) * u * (T::one() - u)
        });
        let d_z = d_hidden_pre.matmul(&head.hidden.weight)?;
        let d = h.cols();
        for (p, &(a, b)) in pairs.iter().enumerate() {
            for k in 0..d {
                let (ha, hb) = (h.get(a, k), h.get(b, k));
                let g_prod = d_z.get(p, k);
                let g_abs = d_z.get(p, d + k) * sign(ha - hb);
                let ra = dh.get(a, k) + g_prod * hb + g_abs;
                dh.set(a, k, ra);
                let rb = dh.get(b, k) + g_prod * ha - g_abs;
                dh.set(b, k, rb);
            }
        }
        if let Some(grads) = grads {
            let gh = grads.head.as_mut().expect("head gradient slot");
            gh.output.weight.add_scaled(&d_logit.t_matmul(&hidden)?, T::one())?;
            gh.output.bias.data_mut()[0] += d_logit.column_sums()[0];
            gh.hidden.weight.add_scaled(&d_hidden_pre.t_matmul(&z)?, T::one())?;
            for (b, s) in gh.hidden.bias.data_mut().iter_mut().zip(d_hidden_pre.column_sums()) {
                *b += s;
            }
        }
        Ok((loss, dh))
    }

    /// Triplet margin loss with Euclidean distance; returns the loss and `dL/dH`.
    pub fn triplet_objective(&self, h: &Matrix<T>, triplets: &[Triplet]) -> Result<(T, Matrix<T>)> {
        let margin = T::of(self.config.margin);
        let mut loss = T::zero();
        let mut dh = Matrix::zeros(h.rows(), h.cols());
        for t in triplets {
            let (a, p, q) = (h.row(t.anchor), h.row(t.positive), h.row(t.negative));
            let d_pos = distance(a, p);
            let d_neg = distance(a, q);
            let value = d_pos - d_neg + margin;
            if value <= T::zero() {
                continue;
            }
            loss += value;
            let d = h.cols();
            for k in 0..d {
                let g_pos = if d_pos > T::zero() { (h.get(t.anchor, k) - h.get(t.positive, k)) / d_pos } else { T::zero() };
                let g_neg = if d_neg > T::zero() { (h.get(t.anchor, k) - h.get(t.negative, k)) / d_neg } else { T::zero() };
                let va = dh.get(t.anchor, k) + g_pos - g_neg;
                dh.set(t.anchor, k, va);
                let vp = dh.get(t.positive, k) - g_pos;
                dh.set(t.positive, k, vp);
                let vn = dh.get(t.negative, k) + g_neg;
                dh.set(t.negative, k, vn);
            }
        }
        Ok((loss, dh))
    }

    /// Cross-entropy loss of the whole model and its gradient for every parameter.
    pub fn ce_loss(
        &self,
        graph: &SimilarityGraph,
        x: &Matrix<T>,
        positives: &[(usize, usize)],
        negatives: &[(usize, usize)],
    ) -> Result<(T, Parameters<T>)> {
        let adj = Adjacency::new(graph);
        let (h, cache) = self.forward_cached(&adj, x)?;
        let mut head_grads = Parameters::zeros(&self.config);
        let (loss, dh) = self.ce_objective(&h, positives, negatives, Some(&mut head_grads))?;
        let mut grads = self.backward(&adj, &cache, &dh)?;
        grads.head = head_grads.head;
        Ok((loss, grads))
    }

    pub fn triplet_loss(&self, graph: &SimilarityGraph, x: &Matrix<T>, triplets: &[Triplet]) -> Result<(T, Parameters<T>)> {
        let adj = Adjacency::new(graph);
        let (h, cache) = self.forward_cached(&adj, x)?;
        let (loss, dh) = self.triplet_objective(&h, triplets)?;
        Ok((loss, self.backward(&adj, &cache, &dh)?))
    }

    /// Applies the stored normalizer to raw profile features.
    pub fn prepare_features(&self, raw: &[Vec<f64>]) -> Result<Matrix<T>> {
        let n = raw.len();
        let mut x = Matrix::zeros(n, self.config.input_dim);
        for (i, f) in raw.iter().enumerate() {
            let f = match &self.normalizer {
                Some(norm) => norm.apply(f)?,
                None => f.clone(),
            };
            if f.len() != self.config.input_dim {
                return Err(Error::Dimension {
                    expected: self.config.input_dim,
                    found: f.len(),
                });
            }
            for (dst, &v) in x.row_mut(i).iter_mut().zip(&f) {
                *dst = T::of(v);
            }
        }
        Ok(x)
    }
}
