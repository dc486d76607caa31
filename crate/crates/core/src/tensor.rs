//! A minimal dense `f32` tensor with shape metadata.
//!
//! Images are stored as `(channels, height, width)` or flat `(m,)`; batches
//! prepend a leading dimension. Data is row-major and contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Tensor of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Wraps raw data, checking that the element count matches the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the tensor with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element lies in `[lo, hi]`.
    pub fn all_in_range(&self, lo: f32, hi: f32) -> bool {
        self.data.iter().all(|&v| v >= lo && v <= hi)
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Sum of absolute values, accumulated in f64.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|&v| v.abs() as f64).sum::<f64>()
    }

    /// Euclidean distance to another tensor of the same shape.
    pub fn l2_distance(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context: "Tensor::l2_distance",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    /// Stacks samples of identical shape into one batch tensor with a leading
    /// batch dimension.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty("Tensor::stack on no samples".into()))?;
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(shape.iter().product());
        for s in samples {
            if s.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    context: "Tensor::stack",
                    expected: first.shape().to_vec(),
                    got: s.shape().to_vec(),
                });
            }
            data.extend_from_slice(s.data());
        }
        Ok(Tensor { shape, data })
    }

    /// Extracts sample `i` from a batch tensor (inverse of [`Tensor::stack`]).
    pub fn unstack(&self, i: usize) -> Tensor {
        assert!(!self.shape.is_empty() && i < self.shape[0], "batch index out of range");
        let per: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn stack_and_unstack_round_trip() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let batch = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(batch.shape(), &[2, 2, 2]);
        assert_eq!(batch.unstack(0), a);
        assert_eq!(batch.unstack(1), b);
    }

    #[test]
    fn norms_match_hand_values() {
        let t = Tensor::from_vec(&[4], vec![3.0, -4.0, 0.0, 0.0]).unwrap();
        assert!((t.l2_norm() - 5.0).abs() < 1e-12);
        assert!((t.l1_norm() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn stack_rejects_mixed_shapes() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(Tensor::stack(&[&a, &b]).is_err());
    }
}
