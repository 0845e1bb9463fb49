//! Learned non-graph comparator: a one-hidden-layer perceptron over the
//! five pairwise similarity scores.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabricate::{JoinExample, Label};
use crate::scalar::Scalar;
use crate::similarity::{SimilarityRecord, N_SIGNALS};
use crate::tensor::{sigmoid, sigmoid_scalar, softplus, Adam, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 32,
            epochs: 300,
            lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    /// hidden × inputs
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    /// 1 × hidden
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp {
            w1: Matrix::xavier_uniform(hidden, inputs, &mut rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::xavier_uniform(1, hidden, &mut rng),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Mlp {
            w1: Matrix::zeros(hidden, inputs),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(1, hidden),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Hidden activations and output logits for a batch of rows.
    fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let mut pre = x.matmul_t(&self.w1)?;
        pre.add_row(self.b1.data())?;
        let hidden = sigmoid(&pre);
        let mut logits = hidden.matmul_t(&self.w2)?;
        logits.add_row(self.b2.data())?;
        Ok((hidden, logits))
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let (_, logits) = self.forward(x)?;
        Ok(logits.data().iter().map(|&s| sigmoid_scalar(s)).collect())
    }

    /// Mean weighted cross-entropy with positive weight `w_p`, and its
    /// gradient in [`Mlp::tensors`] order.
    pub fn loss_and_grad(&self, x: &Matrix<T>, labels: &[bool], w_p: T) -> Result<(T, [Matrix<T>; 4])> {
        if labels.len() != x.rows() || labels.is_empty() {
            return Err(Error::Dimension {
                expected: x.rows(),
                found: labels.len(),
            });
        }
        let n = T::of_usize(labels.len());
        let (hidden, logits) = self.forward(x)?;
        let mut loss = T::zero();
        let mut d_logit = Matrix::zeros(labels.len(), 1);
        for (i, &positive) in labels.iter().enumerate() {
            let s = logits.get(i, 0);
            if positive {
                loss += w_p * softplus(-s);
                d_logit.set(i, 0, -w_p * sigmoid_scalar(-s) / n);
            } else {
                loss += softplus(s);
                d_logit.set(i, 0, sigmoid_scalar(s) / n);
            }
        }
        let g_w2 = d_logit.t_matmul(&hidden)?;
        let g_b2 = Matrix::from_vec(1, 1, d_logit.column_sums())?;
        let d_hidden = d_logit.matmul(&self.w2)?;
        let d_pre = Matrix::from_fn(hidden.rows(), hidden.cols(), |i, k| {
            let u = hidden.get(i, k);
            d_hidden.get(i, k) * u * (T::one() - u)
        });
        let g_w1 = d_pre.t_matmul(x)?;
        let g_b1 = Matrix::from_vec(1, hidden.cols(), d_pre.column_sums())?;
        Ok((loss / n, [g_w1, g_b1, g_w2, g_b2]))
    }

    /// Full-batch Adam; returns the per-epoch training loss.
    pub fn fit(&mut self, x: &Matrix<T>, labels: &[bool], epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            return Err(Error::InvalidArgument("baseline needs positive and negative examples".into()));
        }
        let w_p = T::of_usize(labels.len() - n_pos) / T::of_usize(n_pos);
        let mut adam = Adam::new(T::of(lr), self.tensors().iter().map(|m| m.shape()));
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let (loss, grads) = self.loss_and_grad(x, labels, w_p)?;
            losses.push(loss.as_f64());
            let mut params = self.tensors_mut();
            adam.step(&mut params, &grads)?;
        }
        Ok(losses)
    }
}

pub fn score_matrix<T: Scalar>(rows: &[[f64; N_SIGNALS]]) -> Matrix<T> {
    Matrix::from_fn(rows.len(), N_SIGNALS, |i, j| T::of(rows[i][j]))
}

/// Trains the perceptron on the fabricated examples, whose similarity
/// vectors are looked up in `records`. Returns the model and its loss trace.
pub fn train_mlp_baseline(
    records: &[SimilarityRecord],
    examples: &[JoinExample],
    cfg: &MlpConfig,
) -> Result<(Mlp<f64>, Vec<f64>)> {
    let index: HashMap<(usize, usize), &[f64; N_SIGNALS]> = records
        .iter()
        .map(|r| ((r.node_a.min(r.node_b), r.node_a.max(r.node_b)), &r.scores))
        .collect();
    let mut rows = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        let key = (e.node_a.min(e.node_b), e.node_a.max(e.node_b));
        let scores = index.get(&key).ok_or_else(|| {
            Error::InvalidArgument(format!("no similarity record for example pair {key:?}"))
        })?;
        rows.push(**scores);
        labels.push(e.label == Label::Positive);
    }
    let x = score_matrix::<f64>(&rows);
    let mut mlp = Mlp::new(N_SIGNALS, cfg.hidden, cfg.seed);
    let losses = mlp.fit(&x, &labels, cfg.epochs, cfg.lr)?;
    Ok((mlp, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff, max_relative_error};
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (Matrix<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let positive = i % 4 == 0;
            let base = if positive { 0.7 } else { 0.2 };
            let mut r = [0.0; N_SIGNALS];
            for v in r.iter_mut() {
                *v = (base + rng.gen_range(-0.2..0.2f64)).clamp(0.0, 1.0);
            }
            rows.push(r);
            labels.push(positive);
        }
        (score_matrix(&rows), labels)
    }

    #[test]
    fn zero_init_scores_half() {
        let (x, _) = toy(10, 0);
        let mlp = Mlp::<f64>::zeros(N_SIGNALS, 32);
        assert!(mlp.predict(&x).unwrap().iter().all(|&s| s == 0.5));
        let mlp32 = Mlp::<f32>::zeros(N_SIGNALS, 32);
        let x32 = Matrix::<f32>::from_fn(3, N_SIGNALS, |i, j| (i + j) as f32 * 0.1);
        assert!(mlp32.predict(&x32).unwrap().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, labels) = toy(12, 1);
        let mlp = Mlp::<f64>::new(N_SIGNALS, 6, 3);
        let (_, grads) = mlp.loss_and_grad(&x, &labels, 3.0).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let flat: Vec<f64> = mlp.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let numeric = finite_diff(
            |p| {
                let mut m = mlp.clone();
                let mut off = 0;
                for t in m.tensors_mut() {
                    let len = t.len();
                    t.data_mut().copy_from_slice(&p[off..off + len]);
                    off += len;
                }
                m.loss_and_grad(&x, &labels, 3.0).unwrap().0
            },
            &flat,
            1e-5,
        );
        assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn training_reduces_loss_and_separates() {
        let (x, labels) = toy(80, 2);
        let mut mlp = Mlp::<f64>::new(N_SIGNALS, 32, 0);
        let losses = mlp.fit(&x, &labels, 200, 0.01).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let scores = mlp.predict(&x).unwrap();
        let mean = |want: bool| {
            let v: Vec<f64> = scores.iter().zip(&labels).filter(|p| *p.1 == want).map(|p| *p.0).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) > mean(false));
    }

    #[test]
    fn missing_record_is_an_error() {
        let ex = JoinExample {
            node_a: 0,
            node_b: 1,
            label: Label::Positive,
            source_table: "t".into(),
        };
        assert!(train_mlp_baseline(&[], &[ex], &MlpConfig::default()).is_err());
    }
}
