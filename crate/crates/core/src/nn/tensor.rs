//! Dense row-major f64 tensors, rank 1 or 2.
//!
//! Deliberately small: owned `Vec<f64>` storage, checked constructors, and the
//! handful of kernels the tape needs. A single matmul implementation with a
//! fixed accumulation order keeps results bit-reproducible across runs, which
//! several tests rely on.

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::shape(
                "Tensor::new",
                format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            ));
        }
        if shape.is_empty() || shape.len() > 2 {
            return Err(CoreError::shape(
                "Tensor::new",
                format!("rank must be 1 or 2, got shape {:?}", shape),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::shape("Tensor::from_rows", "no rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::shape("Tensor::from_rows", "ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on tensor of len {}", self.len());
        self.data[0]
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor is treated as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows() && c < self.cols());
        self.data[r * self.cols() + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let cols = self.cols();
        debug_assert!(r < self.rows() && c < cols);
        &mut self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self (m x k) . other (k x n) -> (m x n)`.
    ///
    /// Fixed i-k-j loop order; every matrix product in the crate goes through
    /// here so identical inputs give bit-identical outputs.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let c = a.matmul(&eye);
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().transpose().data(), a.data());
        assert_eq!(a.transpose().shape(), &[3, 2]);
        assert_eq!(a.transpose().at(2, 1), 6.0);
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2, 2], vec![0.0; 8]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn rank1_acts_as_single_row() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(v.rows(), 1);
        assert_eq!(v.cols(), 3);
        assert_eq!(v.at(0, 2), 3.0);
    }
}
