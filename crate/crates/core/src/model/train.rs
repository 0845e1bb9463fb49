//! Training loop, example splitting, triplet construction and top-k selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adjacency, LossMode, ModelConfig, Parameters, RgcnModel, Triplet};
use crate::error::{Error, Result};
use crate::fabricate::{JoinExample, Label};
use crate::graph::build_graph;
use crate::predict::metrics::{best_f1, pr_curve_from_labels};
use crate::profile::{normalize_profiles, profile_repository, FeatureNormalizer};
use crate::repo::Repository;
use crate::scalar::Scalar;
use crate::similarity::{compute_all_pairs, SimilarityRecord, TokenEmbedder};
use crate::tensor::{Adam, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    pub k_candidates: Vec<usize>,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub margin: f64,
    pub hidden_dim: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub per_anchor_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.001,
            validation_fraction: 0.1,
            k_candidates: vec![1, 2, 3, 4, 5],
            seed: 0,
            loss_mode: LossMode::Triplet,
            margin: 1.0,
            hidden_dim: 256,
            layers: 2,
            head_hidden: 256,
            per_anchor_cap: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.k_candidates.is_empty() || self.k_candidates.contains(&0) {
            return Err(Error::Config("k candidates must be non-empty and positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            head_hidden: self.head_hidden,
            loss_mode: self.loss_mode,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss per training term (pair or triplet).
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
}

fn fold_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Label-stratified random split; each fold keeps at least one example of each label.
pub fn split_examples(examples: &[JoinExample], fraction: f64, seed: u64) -> Result<ExampleSplit> {
    let mut pos: Vec<(usize, usize)> = Vec::new();
    let mut neg: Vec<(usize, usize)> = Vec::new();
    for e in examples {
        match e.label {
            Label::Positive => pos.push((e.node_a, e.node_b)),
            Label::Negative => neg.push((e.node_a, e.node_b)),
        }
    }
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::DegenerateSplit(format!(
            "need at least two examples per label, found {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let vp = fold_size(pos.len(), fraction);
    let vn = fold_size(neg.len(), fraction);
    let val_pos = pos.split_off(pos.len() - vp);
    let val_neg = neg.split_off(neg.len() - vn);
    Ok(ExampleSplit {
        train_pos: pos,
        train_neg: neg,
        val_pos,
        val_neg,
    })
}

/// For each positive `(a, b)`, anchors `a` and `b` are each paired with every
/// negative that involves them, sampled down to `per_anchor_cap` per anchor.
pub fn build_triplets(
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    per_anchor_cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Triplet> {
    let mut out = Vec::new();
    for &(a, b) in positives {
        for (anchor, positive) in [(a, b), (b, a)] {
            let mut candidates: Vec<usize> = negatives
                .iter()
                .filter_map(|&(u, v)| {
                    if u == anchor && v != positive {
                        Some(v)
                    } else if v == anchor && u != positive {
                        Some(u)
                    } else {
                        None
                    }
                })
                .collect();
            if candidates.len() > per_anchor_cap {
                let (chosen, _) = candidates.partial_shuffle(rng, per_anchor_cap);
                let mut chosen = chosen.to_vec();
                chosen.sort_unstable();
                candidates = chosen;
            }
            out.extend(candidates.into_iter().map(|negative| Triplet {
                anchor,
                positive,
                negative,
            }));
        }
    }
    out
}

/// Everything training needs that does not depend on `k`.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub n_nodes: usize,
    pub records: Vec<SimilarityRecord>,
    pub normalizer: FeatureNormalizer,
    /// Normalized node features, one row per node.
    pub features: Vec<Vec<f64>>,
    pub split: ExampleSplit,
    pub train_triplets: Vec<Triplet>,
    pub val_triplets: Vec<Triplet>,
}

impl TrainingData {
    pub fn prepare(
        repo: &Repository,
        examples: &[JoinExample],
        embedder: &dyn TokenEmbedder,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let records = compute_all_pairs(repo, embedder);
        let raw: Vec<Vec<f64>> = profile_repository(repo).into_iter().map(|p| p.features).collect();
        Self::from_parts(repo.n_nodes(), records, raw, examples, cfg)
    }

    pub fn from_parts(
        n_nodes: usize,
        records: Vec<SimilarityRecord>,
        raw_features: Vec<Vec<f64>>,
        examples: &[JoinExample],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if raw_features.len() != n_nodes {
            return Err(Error::Dimension {
                expected: n_nodes,
                found: raw_features.len(),
            });
        }
        let profiles: Vec<_> = raw_features
            .into_iter()
            .enumerate()
            .map(|(node_id, features)| crate::profile::ColumnProfile { node_id, features })
            .collect();
        let (normalizer, normalized) = normalize_profiles(&profiles)?;
        let split = split_examples(examples, cfg.validation_fraction, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7269_706c_6574);
        let train_triplets = build_triplets(&split.train_pos, &split.train_neg, cfg.per_anchor_cap, &mut rng);
        // validation anchors may draw negatives from either fold
        let all_neg: Vec<(usize, usize)> = split.train_neg.iter().chain(&split.val_neg).copied().collect();
        let val_triplets = build_triplets(&split.val_pos, &all_neg, cfg.per_anchor_cap, &mut rng);
        Ok(TrainingData {
            n_nodes,
            records,
            normalizer,
            features: normalized.into_iter().map(|p| p.features).collect(),
            split,
            train_triplets,
            val_triplets,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn feature_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.n_nodes, self.feature_dim(), |i, j| T::of(self.features[i][j]))
    }
}

fn per_term(loss: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        loss / n as f64
    }
}

/// Full-batch Adam training on the graph built with budget `k`; returns the final-epoch model.
pub fn train<T: Scalar>(data: &TrainingData, k: usize, cfg: &TrainConfig) -> Result<(RgcnModel<T>, History)> {
    cfg.validate()?;
    let graph = build_graph(&data.records, data.n_nodes, k)?;
    let adj = Adjacency::new(&graph);
    let x: Matrix<T> = data.feature_matrix();
    let mut model = RgcnModel::<T>::new(cfg.model_config(data.feature_dim()), cfg.seed)?;
    model.normalizer = Some(data.normalizer.clone());
    model.k = k;
    let mut adam = Adam::new(T::of(cfg.lr), model.params.tensors().iter().map(|m| m.shape()));
    let split = &data.split;
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let (h, cache) = model.forward_cached(&adj, &x)?;
        let mut head_grads = Parameters::zeros(&model.config);
        let (train_loss, val_loss, n_train, n_val, dh) = match cfg.loss_mode {
            LossMode::CrossEntropy => {
                let (tl, dh) = model.ce_objective(&h, &split.train_pos, &split.train_neg, Some(&mut head_grads))?;
                let (vl, _) = model.ce_objective(&h, &split.val_pos, &split.val_neg, None)?;
                let nt = split.train_pos.len() + split.train_neg.len();
                let nv = split.val_pos.len() + split.val_neg.len();
                (tl, vl, nt, nv, dh)
            }
            LossMode::Triplet => {
                let (tl, dh) = model.triplet_objective(&h, &data.train_triplets)?;
                let (vl, _) = model.triplet_objective(&h, &data.val_triplets)?;
                (tl, vl, data.train_triplets.len(), data.val_triplets.len(), dh)
            }
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: per_term(train_loss.as_f64(), n_train),
            val_loss: per_term(val_loss.as_f64(), n_val),
        });
        let mut grads = model.backward(&adj, &cache, &dh)?;
        grads.head = head_grads.head;
        let grads = grads.into_tensors();
        let mut params = model.params.tensors_mut();
        adam.step(&mut params, &grads)?;
        log::debug!(
            "k={k} epoch {}: train {:.6} val {:.6}",
            epoch + 1,
            history.epochs[epoch].train_loss,
            history.epochs[epoch].val_loss
        );
    }
    Ok((model, history))
}

/// Best F1 of the model on the validation pairs of `data`.
pub fn validation_f1<T: Scalar>(model: &RgcnModel<T>, data: &TrainingData) -> Result<f64> {
    let graph = build_graph(&data.records, data.n_nodes, model.k)?;
    let h = model.forward(&graph, &data.feature_matrix())?;
    let pairs: Vec<(usize, usize)> = data.split.val_pos.iter().chain(&data.split.val_neg).copied().collect();
    let scores = model.score_pairs(&h, &pairs)?;
    let labelled: Vec<(f64, bool)> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_f64(), i < data.split.val_pos.len()))
        .collect();
    let curve = pr_curve_from_labels(&labelled, data.split.val_pos.len())?;
    Ok(best_f1(&curve))
}

#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub k: usize,
    pub model: RgcnModel<T>,
    pub history: History,
    /// `(k, validation best F1)` for every candidate tried.
    pub scores: Vec<(usize, f64)>,
}

/// Trains one model per candidate `k` and keeps the one with the best
/// validation F1 (ties go to the smaller `k`).
pub fn train_with_selection<T: Scalar>(data: &TrainingData, cfg: &TrainConfig) -> Result<Selection<T>> {
    cfg.validate()?;
    let mut candidates = cfg.k_candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let mut best: Option<(f64, usize, RgcnModel<T>, History)> = None;
    let mut scores = Vec::new();
    for &k in &candidates {
        let (model, history) = train::<T>(data, k, cfg)?;
        let f1 = validation_f1(&model, data)?;
        log::info!("k={k}: validation best F1 {f1:.4}");
        scores.push((k, f1));
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, k, model, history));
        }
    }
    let (_, k, model, history) = best.expect("at least one candidate");
    Ok(Selection {
        k,
        model,
        history,
        scores,
    })
}

pub fn select_k(data: &TrainingData, cfg: &TrainConfig) -> Result<usize> {
    if cfg.k_candidates.len() == 1 {
        return Ok(cfg.k_candidates[0]);
    }
    Ok(train_with_selection::<f64>(data, cfg)?.k)
}
