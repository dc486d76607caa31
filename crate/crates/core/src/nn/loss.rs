//! Classification losses over logits.
//!
//! Cross-entropy goes through a numerically stable log-sum-exp; the square
//! loss is `1/(2B) * sum((logit - onehot)^2)`, matching the quadratic
//! objective used by the gradient-ratio analysis in [`crate::theory`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Square,
}

fn check_inputs(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "loss logits",
            expected: vec![labels.len(), 0],
            got: shape.to_vec(),
        });
    }
    let (b, k) = (shape[0], shape[1]);
    if b != labels.len() || b == 0 {
        return Err(Error::ShapeMismatch {
            context: "loss labels",
            expected: vec![b],
            got: vec![labels.len()],
        });
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
    }
    Ok((b, k))
}

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2, "softmax expects (batch, classes)");
    let k = shape[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean loss over the batch.
pub fn loss(logits: &Tensor, labels: &[usize], kind: LossKind) -> Result<f64> {
    let (b, k) = check_inputs(logits, labels)?;
    let data = logits.data();
    let mut total = 0.0f64;
    match kind {
        LossKind::CrossEntropy => {
            for (row, &y) in data.chunks_exact(k).zip(labels) {
                total += nll_row(row, y);
            }
            Ok(total / b as f64)
        }
        LossKind::Square => {
            for (row, &y) in data.chunks_exact(k).zip(labels) {
                for (c, &z) in row.iter().enumerate() {
                    let t = if c == y { 1.0 } else { 0.0 };
                    let d = z as f64 - t;
                    total += d * d;
                }
            }
            Ok(total / (2.0 * b as f64))
        }
    }
}

/// Negative log-likelihood of class `y` under a stable log-sum-exp.
fn nll_row(row: &[f32], y: usize) -> f64 {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = row
        .iter()
        .map(|&z| (z as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    lse - row[y] as f64
}

/// Mean loss plus its gradient with respect to the logits (the `1/B` factor
/// is folded in, so the gradient is ready for backpropagation).
pub fn loss_and_grad(
    logits: &Tensor,
    labels: &[usize],
    kind: LossKind,
) -> Result<(f64, Tensor)> {
    let (b, k) = check_inputs(logits, labels)?;
    let value = loss(logits, labels, kind)?;
    let inv_b = 1.0 / b as f32;
    let grad = match kind {
        LossKind::CrossEntropy => {
            let mut g = softmax_rows(logits);
            for (row, &y) in g.data_mut().chunks_exact_mut(k).zip(labels) {
                row[y] -= 1.0;
                for v in row.iter_mut() {
                    *v *= inv_b;
                }
            }
            g
        }
        LossKind::Square => {
            let mut g = logits.clone();
            for (row, &y) in g.data_mut().chunks_exact_mut(k).zip(labels) {
                row[y] -= 1.0;
                for v in row.iter_mut() {
                    *v *= inv_b;
                }
            }
            g
        }
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_loss_matches_hand_values() {
        // Single logit 0.5 against target 1: 1/2 * (0.5 - 1)^2 = 0.125.
        let logits = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        let v = loss(&logits, &[0], LossKind::Square).unwrap();
        assert!((v - 0.125).abs() < 1e-9);

        // Three logits, label 2: 1/2 * (0.2^2 + 0.4^2 + 0.3^2) = 0.145.
        let logits = Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 0.7]).unwrap();
        let v = loss(&logits, &[2], LossKind::Square).unwrap();
        assert!((v - 0.145).abs() < 1e-7);
    }

    #[test]
    fn one_hot_correct_logits_have_zero_square_loss() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let v = loss(&logits, &[1, 0], LossKind::Square).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn cross_entropy_matches_independent_computation() {
        let z = [0.2f64, -0.4, 0.7];
        let sum: f64 = z.iter().map(|v| v.exp()).sum();
        let expect = -(z[2].exp() / sum).ln();
        let logits = Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 0.7]).unwrap();
        let v = loss(&logits, &[2], LossKind::CrossEntropy).unwrap();
        assert!((v - expect).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![3.0, -1.0, 0.5, 100.0, 100.0, -100.0]).unwrap();
        let p = softmax_rows(&logits);
        for row in p.data().chunks_exact(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let logits = Tensor::from_vec(&[2, 2], vec![5.0, -3.0, -2.0, 2.0]).unwrap();
        for kind in [LossKind::CrossEntropy, LossKind::Square] {
            assert!(loss(&logits, &[0, 1], kind).unwrap() >= 0.0);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            loss(&logits, &[2], LossKind::CrossEntropy),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_of_square_loss_is_scaled_residual() {
        let logits = Tensor::from_vec(&[2, 2], vec![0.5, 0.0, 0.25, 1.0]).unwrap();
        let (_, g) = loss_and_grad(&logits, &[0, 1], LossKind::Square).unwrap();
        let expect = [(0.5 - 1.0) / 2.0, 0.0, 0.125, 0.0];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
