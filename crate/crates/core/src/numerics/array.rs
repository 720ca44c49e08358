//! Dense row-major arrays of `f64` and the plain (non-differentiable)
//! kernels shared by the tape.

use std::fmt;

use super::ShapeError;

/// LayerNorm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A dense array of doubles stored in row-major order.
///
/// Vectors have rank 1 (`[n]`), matrices rank 2 (`[rows, cols]`).
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}{:?}", self.shape, self.data)
    }
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(ShapeError::Invalid {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::Invalid {
                shape,
                reason: format!("holds {} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, ShapeError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
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

    /// Rows and columns, treating a rank-1 array as a column vector.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            other => (other[0], other[1..].iter().product()),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        let (rows, cols) = self.dims2();
        (0..rows).map(|r| self.data[r * cols + c]).collect()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, ShapeError> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let (rows, cols) = self.dims2();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = self.data[r * cols + c];
            }
        }
        Self {
            shape: vec![cols, rows],
            data,
        }
    }
}

fn check_same(op: &'static str, a: &Array, b: &Array) -> Result<(), ShapeError> {
    if a.shape != b.shape {
        return Err(ShapeError::Mismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

/// Matrix product; rank-1 operands are treated as column vectors, and a
/// rank-1 right operand gives a rank-1 result.
pub fn matmul(a: &Array, b: &Array) -> Result<Array, ShapeError> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(ShapeError::Mismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    let shape = if b.shape.len() == 1 { vec![m] } else { vec![m, n] };
    Array::new(shape, out)
}

/// `out += a[m×k] · b[k×n]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Softmax over all entries, with the maximum subtracted first.
pub fn softmax(x: &Array) -> Result<Array, ShapeError> {
    if x.is_empty() {
        return Err(ShapeError::Invalid {
            shape: x.shape.clone(),
            reason: "softmax of an empty array".into(),
        });
    }
    Ok(Array {
        shape: x.shape.clone(),
        data: softmax_slice(&x.data),
    })
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pointwise kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Add,
    Mul,
    Sub,
}

/// Applies a pointwise kernel. Unary kinds ignore `rhs`; binary kinds require it.
pub fn elementwise(kind: Elementwise, lhs: &Array, rhs: Option<&Array>) -> Result<Array, ShapeError> {
    match kind {
        Elementwise::Sigmoid => Ok(lhs.map(sigmoid_scalar)),
        Elementwise::Tanh => Ok(lhs.map(f64::tanh)),
        Elementwise::Add | Elementwise::Mul | Elementwise::Sub => {
            let rhs = rhs.ok_or_else(|| ShapeError::Invalid {
                shape: lhs.shape.clone(),
                reason: format!("{kind:?} needs two operands"),
            })?;
            check_same("elementwise", lhs, rhs)?;
            let f = match kind {
                Elementwise::Add => |a: f64, b: f64| a + b,
                Elementwise::Mul => |a: f64, b: f64| a * b,
                _ => |a: f64, b: f64| a - b,
            };
            Ok(Array {
                shape: lhs.shape.clone(),
                data: lhs.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
            })
        }
    }
}

/// `(x - mean) / sqrt(var + eps) * gain + bias` over a single vector.
pub fn layer_norm(x: &Array, gain: &Array, bias: &Array) -> Result<Array, ShapeError> {
    if x.len() < 2 {
        return Err(ShapeError::Invalid {
            shape: x.shape.clone(),
            reason: "layer norm needs at least two entries".into(),
        });
    }
    check_same("layer_norm", x, gain)?;
    check_same("layer_norm", x, bias)?;
    let (xhat, _) = normalize(&x.data);
    Ok(Array {
        shape: x.shape.clone(),
        data: xhat
            .iter()
            .zip(&gain.data)
            .zip(&bias.data)
            .map(|((&h, &g), &b)| h * g + b)
            .collect(),
    })
}

/// Returns the standardized vector and `1 / sqrt(var + eps)`.
pub(crate) fn normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}
