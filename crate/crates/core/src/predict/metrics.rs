//! Precision-recall curves and their summary scalars.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint<T> {
    pub precision: T,
    pub recall: T,
    pub threshold: T,
}

/// Sweeps a threshold over every distinct score (ties enter together).
/// `n_truth` is the number of true pairs, including any the scored list misses.
/// Points come out in descending threshold order.
pub fn pr_curve_from_labels<T: Scalar>(scored: &[(T, bool)], n_truth: usize) -> Result<Vec<PrPoint<T>>> {
    if n_truth == 0 {
        return Err(Error::InvalidArgument("ground truth is empty".into()));
    }
    let mut sorted: Vec<(T, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let total = T::of_usize(n_truth);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            precision: T::of_usize(tp) / T::of_usize(tp + fp),
            recall: T::of_usize(tp) / total,
            threshold,
        });
    }
    Ok(points)
}

pub fn f1<T: Scalar>(precision: T, recall: T) -> T {
    if precision + recall == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * precision * recall / (precision + recall)
    }
}

pub fn best_f1<T: Scalar>(curve: &[PrPoint<T>]) -> T {
    curve
        .iter()
        .map(|p| f1(p.precision, p.recall))
        .fold(T::zero(), T::max)
}

/// Trapezoidal area under the curve over recall, starting from recall 0 at
/// the first point's precision.
pub fn pr_auc<T: Scalar>(curve: &[PrPoint<T>]) -> T {
    let Some(first) = curve.first() else {
        return T::zero();
    };
    let (mut prev_r, mut prev_p) = (T::zero(), first.precision);
    let mut area = T::zero();
    for p in curve {
        area += (p.recall - prev_r) * (p.precision + prev_p) / T::of(2.0);
        prev_r = p.recall;
        prev_p = p.precision;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_ranking() {
        let scored = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        let c = pr_curve_from_labels(&scored, 2).unwrap();
        assert!(c.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
        assert_eq!(best_f1(&c), 1.0);
        assert_eq!(pr_auc(&c), 1.0);
    }

    #[test]
    fn three_score_example() {
        let c = pr_curve_from_labels(&[(0.9f64, true), (0.8, false), (0.7, true)], 2).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!((c[0].precision, c[0].recall, c[0].threshold), (1.0, 0.5, 0.9));
        assert_eq!((c[1].precision, c[1].recall), (0.5, 0.5));
        assert!((c[2].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[2].recall, 1.0);
        assert!((best_f1(&c) - 0.8).abs() < 1e-15);
        // left extension at precision 1, flat to 0.5, then 0.5 -> 2/3 over recall 0.5..1
        let expect = 0.5 + 0.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((pr_auc(&c) - expect).abs() < 1e-15);
    }

    #[test]
    fn all_scores_tied() {
        let c = pr_curve_from_labels(&[(0.4, true), (0.4, false), (0.4, false), (0.4, false)], 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].precision, c[0].recall), (0.25, 1.0));
        assert_eq!(pr_auc(&c), 0.25);
    }

    #[test]
    fn recall_counts_unscored_truth() {
        let c = pr_curve_from_labels(&[(0.5, true)], 4).unwrap();
        assert_eq!(c[0].recall, 0.25);
        assert!(pr_curve_from_labels::<f64>(&[(0.5, true)], 0).is_err());
    }

    #[test]
    fn random_scores_auc_near_prevalence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let scored: Vec<(f64, bool)> = (0..40).map(|i| (rng.gen::<f64>(), i % 2 == 0)).collect();
            sum += pr_auc(&pr_curve_from_labels(&scored, 20).unwrap());
        }
        let mean = sum / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_monotone_invariant(
            items in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40)
        ) {
            let n_truth = items.iter().filter(|x| x.1).count().max(1);
            let c = pr_curve_from_labels(&items, n_truth).unwrap();
            for p in &c {
                prop_assert!((0.0..=1.0).contains(&p.precision));
                prop_assert!((0.0..=1.0).contains(&p.recall));
            }
            for w in c.windows(2) {
                prop_assert!(w[1].recall >= w[0].recall);
            }
            let (bf, auc) = (best_f1(&c), pr_auc(&c));
            prop_assert!((0.0..=1.0).contains(&bf));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&auc));
            let transformed: Vec<(f64, bool)> = items.iter().map(|&(s, l)| ((3.0 * s).exp() - 7.0, l)).collect();
            let ct = pr_curve_from_labels(&transformed, n_truth).unwrap();
            prop_assert!((best_f1(&ct) - bf).abs() < 1e-12);
            prop_assert!((pr_auc(&ct) - auc).abs() < 1e-12);
        }
    }
}
