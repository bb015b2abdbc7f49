//! Dense row-major `f64` tensors and the forward kernels used by the tape.
//!
//! Every kernel here is a plain function of its inputs. The autodiff layer in
//! [`crate::tape`] records which kernel produced a value and applies the
//! matching backward rule.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("expected a scalar, found shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?}..", &self.data[..PREVIEW])
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::BadLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn one_hot(indices: &[usize], k: usize) -> Self {
        let mut t = Self::zeros(&[indices.len(), k]);
        for (row, &idx) in indices.iter().enumerate() {
            t.data[row * k + idx] = 1.0;
        }
        t
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

    /// Number of rows when viewed as `[outer, last]`.
    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&last) if last > 0 => self.data.len() / last,
            _ => 1,
        }
    }

    /// Size of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(TensorError::BadLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            _ => Err(TensorError::Domain {
                op,
                detail: format!("expected a matrix, found shape {:?}", self.shape),
            }),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            MatRef::row_major(&self.data, k),
            MatRef::row_major(&other.data, n),
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// Adds a row vector `[n]` (or `[1×n]`) to every row of `[m×n]`.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        let (_, n) = self.expect_matrix("add_row")?;
        if row.len() != n || row.shape.len() > 2 {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(n) {
            for (a, &b) in chunk.iter_mut().zip(&row.data) {
                *a += b;
            }
        }
        Ok(out)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    pub fn log(&self) -> Result<Self> {
        if let Some(bad) = self.data.iter().find(|v| !(**v > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.map(f64::ln))
    }

    /// `log(1 + e^x)` without overflow.
    pub fn softplus(&self) -> Self {
        self.map(softplus)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Self {
        let mut out = self.log_softmax();
        for v in &mut out.data {
            *v = v.exp();
        }
        // Renormalise so each row sums to one up to a single rounding.
        let c = out.cols();
        for chunk in out.data.chunks_mut(c) {
            let s: f64 = chunk.iter().sum();
            for v in chunk {
                *v /= s;
            }
        }
        out
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(c) {
            let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + chunk.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in chunk {
                *v -= lse;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Sums out one axis, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(TensorError::Domain {
                op: "sum_axis",
                detail: format!("axis {axis} out of range for shape {:?}", self.shape),
            });
        }
        let (outer, dim, inner) = split_axis(&self.shape, axis);
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &self.data[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let dim = *self.shape.get(axis).unwrap_or(&1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / dim))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&self, other: &Self) -> Result<Self> {
        let lead = |t: &Self| t.shape[..t.shape.len().saturating_sub(1)].to_vec();
        if self.shape.is_empty() || lead(self) != lead(other) || other.shape.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (ca, cb) = (self.cols(), other.cols());
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&other.data[r * cb..(r + 1) * cb]);
        }
        let mut shape = lead(self);
        shape.push(ca + cb);
        Ok(Self { shape, data })
    }

    /// Contiguous range `[start, end)` of the last axis.
    pub fn slice_last(&self, start: usize, end: usize) -> Result<Self> {
        let c = self.cols();
        if start >= end || end > c || self.shape.is_empty() {
            return Err(TensorError::Domain {
                op: "slice",
                detail: format!("range {start}..{end} invalid for shape {:?}", self.shape),
            });
        }
        let indices: Vec<usize> = (start..end).collect();
        self.select_last(&indices)
    }

    /// Gathers the given indices of the last axis, in order.
    pub fn select_last(&self, indices: &[usize]) -> Result<Self> {
        let c = self.cols();
        if indices.is_empty() || self.shape.is_empty() || indices.iter().any(|&i| i >= c) {
            return Err(TensorError::Domain {
                op: "select",
                detail: format!("indices {indices:?} invalid for shape {:?}", self.shape),
            });
        }
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            let row = &self.data[r * c..(r + 1) * c];
            data.extend(indices.iter().map(|&i| row[i]));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = indices.len();
        Ok(Self { shape, data })
    }

    /// Rows `indices` of a matrix, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let c = self.cols();
        self.data
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// A strided read-only view of a matrix for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    pub(crate) fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub(crate) fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c ← a·b + beta·c` with `a: m×k`, `b: k×n`, `c` row-major `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // Bounds: the views come from tensors whose shapes were validated by the caller.
    debug_assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
