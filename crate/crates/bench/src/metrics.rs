//! Evaluation metrics.

use thiserror::Error;

use fembed_core::models::top_k;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no examples to score")]
    Empty,
    #[error("example {0} has no negatives")]
    NoNegatives(usize),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn aligned(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(MetricError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Fraction of positions where `preds` equals `labels`.
pub fn accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64> {
    aligned(preds.len(), labels.len())?;
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

/// Accuracy of `logit > 0` against 0/1 labels.
pub fn binary_accuracy(logits: &[f64], labels: &[f64]) -> Result<f64> {
    let preds: Vec<bool> = logits.iter().map(|&z| z > 0.0).collect();
    let truth: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
    accuracy(&preds, &truth)
}

/// Fraction of rows whose label is among the `k` largest logits, ties
/// going to the lower index.
pub fn topk(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    aligned(rows.len(), labels.len())?;
    let hits = rows.iter().zip(labels).filter(|(r, l)| top_k(r, k).contains(l)).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Fraction of (example, negative) pairs where the positive scores
/// strictly higher than the negative.
pub fn relative_param(pos: &[f64], negs: &[Vec<f64>]) -> Result<f64> {
    aligned(pos.len(), negs.len())?;
    let (mut won, mut total) = (0usize, 0usize);
    for (i, (p, ns)) in pos.iter().zip(negs).enumerate() {
        if ns.is_empty() {
            return Err(MetricError::NoNegatives(i));
        }
        won += ns.iter().filter(|&&n| p > &n).count();
        total += ns.len();
    }
    Ok(won as f64 / total as f64)
}

/// Binary cross entropy of probability `p` against label `y`.
pub fn bce(p: f64, y: f64) -> f64 {
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn relative_param_counts_strict_wins() {
        assert_eq!(relative_param(&[0.9], &[vec![0.2, 0.95]]), Ok(0.5));
        assert_eq!(relative_param(&[0.5], &[vec![0.5]]), Ok(0.0));
        assert_eq!(relative_param(&[0.5], &[vec![]]), Err(MetricError::NoNegatives(0)));
    }

    #[test]
    fn topk_with_every_class_is_one() {
        let rows = vec![vec![0.3, -1.0, 2.0, 0.0, 0.1], vec![0.0; 5]];
        assert_eq!(topk(&rows, &[1, 4], 5), Ok(1.0));
        assert_eq!(topk(&rows, &[2, 0], 1), Ok(1.0));
        assert_eq!(topk(&rows, &[0, 1], 1), Ok(0.0));
    }

    #[test]
    fn bce_of_a_coin_is_ln2() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() <= 1e-9);
    }

    #[test]
    fn misaligned_inputs_fail() {
        assert_eq!(accuracy(&[1, 2], &[1]), Err(MetricError::LengthMismatch { left: 2, right: 1 }));
        assert_eq!(topk(&[vec![1.0]], &[], 1), Err(MetricError::LengthMismatch { left: 1, right: 0 }));
        assert_eq!(relative_param(&[], &[]), Err(MetricError::Empty));
        assert_eq!(binary_accuracy(&[1.0, -1.0], &[1.0, 1.0]), Ok(0.5));
    }

    proptest! {
        #[test]
        fn topk_is_monotone_in_k(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20), seed in 0usize..4) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 4).collect();
            let mut last = 0.0;
            for k in 1..=4 {
                let v = topk(&rows, &labels, k).unwrap();
                prop_assert!(v >= last);
                last = v;
            }
            prop_assert_eq!(last, 1.0);
        }
    }
}
