//! Dense row-major `f64` tensors of rank 0, 1 or 2.

use std::fmt;

use super::AutodiffError;

/// A dense tensor. Rank 0 is a scalar (`shape == []`), rank 1 a flat vector,
/// rank 2 a `[rows, cols]` matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if shape.len() > 2 {
            return Err(AutodiffError::Shape(format!(
                "rank {} tensors are not supported",
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn is_scalar_like(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    /// `[rows, cols]` of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn matmul(&self, other: &Self) -> Self {
        let (n, k) = self.dims2().expect("matmul lhs rank 2");
        let (k2, m) = other.dims2().expect("matmul rhs rank 2");
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `self * other^T` for `[n, k]` and `[m, k]`.
    pub(crate) fn matmul_nt(&self, other: &Self) -> Self {
        let (n, k) = self.dims2().expect("matmul_nt lhs rank 2");
        let (m, k2) = other.dims2().expect("matmul_nt rhs rank 2");
        debug_assert_eq!(k, k2);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                out.push(arow.iter().zip(brow).map(|(a, b)| a * b).sum());
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `self^T * other` for `[k, n]` and `[k, m]`.
    pub(crate) fn matmul_tn(&self, other: &Self) -> Self {
        let (k, n) = self.dims2().expect("matmul_tn lhs rank 2");
        let (k2, m) = other.dims2().expect("matmul_tn rhs rank 2");
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let brow = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = self.data[p * n + i];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    pub(crate) fn transpose(&self) -> Self {
        let (r, c) = self.dims2().expect("transpose rank 2");
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    pub(crate) fn with_shape(data: Vec<f64>, shape: &[usize]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}
