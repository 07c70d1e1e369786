//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a shape plus a contiguous buffer in row-major (C) order: the
//! last dimension varies fastest. Operations here are pure and never mutate
//! their inputs; layers implement their own backward passes on top of them.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inner product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::arg(format!("tensor dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Rank-1 tensor over `values`.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Samples from `N(mean, std^2)`, reproducibly for a given generator state.
    pub fn rand_normal(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() {
            return Err(Error::arg(format!("standard deviation must be >= 0, got {std}")));
        }
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal(mean, std)).collect();
        Tensor::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::arg(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn ewise(&self, other: &Tensor, op: EwiseOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("ewise", &self.shape, &other.shape));
        }
        let f: fn(f64, f64) -> f64 = match op {
            EwiseOp::Add => |a, b| a + b,
            EwiseOp::Sub => |a, b| a - b,
            EwiseOp::Mul => |a, b| a * b,
        };
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, EwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, EwiseOp::Sub)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.ewise(other, EwiseOp::Mul)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn map_tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut c = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_identity_exact() {
        let mut rng = Rng::new(3);
        let x = Tensor::rand_normal(&mut rng, &[3, 5], 0.0, 1.0).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&x).unwrap(), x);
        assert_eq!(x.matmul(&Tensor::identity(5)).unwrap(), x);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Tensor::rand_normal(&mut rng, &[4, 6], 0.0, 1.0).unwrap();
        let b = Tensor::rand_normal(&mut rng, &[6, 3], 0.0, 1.0).unwrap();
        let rows = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
        };
        let expect = naive_matmul(&rows(&a), &rows(&b));
        let got = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((got.at2(i, j) - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn ewise_cases() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
        assert_eq!(a.mul(&Tensor::filled(&[2], 1.0)).unwrap(), a);
        assert_eq!(a.sub(&a).unwrap(), Tensor::zeros(&[2]));
        assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
        assert!(a.add(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activations_at_symmetry_points() {
        let z = Tensor::zeros(&[1]);
        assert_eq!(z.map_sigmoid().data()[0], 0.5);
        assert_eq!(z.map_tanh().data()[0], 0.0);
    }

    #[test]
    fn sigmoid_deep_negative_tail() {
        // exp(-500) = 7.1245764067412855e-218 (high-precision value).
        let s = sigmoid(-500.0);
        assert!(s > 0.0 && s <= 1e-200);
        assert!((s / 7.124_576_406_741_285_5e-218 - 1.0).abs() < 1e-12);
        for x in [-700.0, -50.0, 0.0, 50.0, 700.0] {
            let v = sigmoid(x);
            assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            assert!(f64::tanh(x).is_finite());
        }
    }

    #[test]
    fn rand_normal_contract() {
        let mut rng = Rng::new(0);
        let t = Tensor::rand_normal(&mut rng, &[4, 4], 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 2.5));
        assert!(Tensor::rand_normal(&mut rng, &[2], 0.0, -1.0).is_err());

        let a = Tensor::rand_normal(&mut Rng::new(42), &[10, 10], 0.0, 1.0).unwrap();
        let b = Tensor::rand_normal(&mut Rng::new(42), &[10, 10], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rand_normal_moments() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let t = Tensor::rand_normal(&mut rng, &[n], 0.0, 0.01).unwrap();
        let mean = t.sum() / n as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.001);
        assert!((var.sqrt() - 0.01).abs() < 0.0005);
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }
}
