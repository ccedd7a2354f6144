//! Dense f64 arrays, FFT convolution, and reverse-mode automatic differentiation.
//!
//! Everything in the model and the losses is built from the ops in
//! [`graph`]; [`fft`] provides the O(L log L) convolution kernel and
//! [`gradcheck`] the finite-difference oracle used throughout the tests.

pub mod fft;
pub mod gradcheck;
pub mod graph;

pub use fft::{conv_long, ConvMode};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};

use rand::Rng;

use crate::{CoreError, Result};

/// Dense row-major array of f64 scalars.
///
/// The number of elements always equals the product of the extents. Scalars
/// are represented as shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D array from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Array {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-D array from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * n);
        for row in rows {
            if row.len() != n {
                return Err(CoreError::invalid("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Array::new(vec![rows.len(), n], data)
    }

    /// Samples every element from N(0, std²).
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        // Box-Muller keeps us independent of distribution crates.
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            data.push(r * c * std);
            if data.len() < numel {
                data.push(r * s * std);
            }
        }
        Array { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Row count of a 2-D array (a 1-D array counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count of a 2-D array (a 1-D array is one row of n columns).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on array of rank {}", self.shape.len()),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CoreError::non_finite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
        assert_eq!(self.shape, other.shape, "shape mismatch in elementwise op");
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Array) -> Array {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Array {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Array {
        self.map(|v| v * c)
    }

    /// In-place `self += other`, used by gradient accumulation and the optimizer.
    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transposed(&self) -> Array {
        assert_eq!(self.shape.len(), 2, "transpose requires a 2-D array");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Array {
            shape: vec![n, m],
            data,
        }
    }

    /// Dense matrix product `(m,k) x (k,n) -> (m,n)`.
    ///
    /// Rows of the output are computed in parallel; each element is a plain
    /// sequential sum, so results are bit-identical across thread schedules.
    pub fn matmul(&self, rhs: &Array) -> Array {
        assert_eq!(self.shape.len(), 2, "matmul lhs must be 2-D");
        assert_eq!(rhs.shape.len(), 2, "matmul rhs must be 2-D");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        assert_eq!(k, k2, "matmul inner dimensions differ: {} vs {}", k, k2);

        let mut out = vec![0.0; m * n];
        let lhs = &self.data;
        let rdat = &rhs.data;
        use rayon::prelude::*;
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            let arow = &lhs[i * k..(i + 1) * k];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &rdat[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        });
        Array {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Maximum absolute difference to another array of the same shape.
    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Array::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_known_product() {
        let a = Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Array::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array::randn(vec![4, 7], 1.0, &mut rng);
        assert_eq!(a.transposed().transposed(), a);
    }

    #[test]
    fn randn_is_deterministic_for_seed() {
        let a = Array::randn(vec![3, 3], 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Array::randn(vec![3, 3], 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
