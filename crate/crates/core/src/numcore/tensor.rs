use serde::{Deserialize, Serialize};

use super::scalar::{gemm_into, Scalar};
use crate::error::{dim_err, Error, Result};
use crate::rng::SplitRng;

/// Dense row-major array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return dim_err(format!("shape {shape:?} with {} values", data.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return dim_err("ragged rows");
        }
        Self::new(&[r, c], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut SplitRng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(rng.normal() * std)).collect();
        Self { shape: shape.to_vec(), data, requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Shape as a matrix: rank-1 tensors are a single row, higher ranks fold
    /// every leading axis into rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let c = *self.shape.last().unwrap();
                (self.shape[..self.shape.len() - 1].iter().product(), c)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return dim_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return dim_err(format!("gradient of {} values for tensor of {}", g.len(), self.data.len()));
        }
        let buf = self.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
        for (b, &v) in buf.iter_mut().zip(g) {
            *b += v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains NaN or Inf")))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), requires_grad: false, grad: None }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return dim_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data, requires_grad: false, grad: None })
    }

    /// Plain matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return dim_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_into(m, k, n, &self.data, false, &other.data, false, &mut out.data, T::one(), false);
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.f64().to_bits() == b.f64().to_bits())
    }
}

/// `x · W (+ b)` with a row-broadcast bias.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut out = x.matmul(w)?;
    if let Some(b) = b {
        let n = out.cols();
        if b.len() != n {
            return dim_err(format!("bias of {} for {n} outputs", b.len()));
        }
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row maximum.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_finite("softmax input")?;
    let mut out = x.clone();
    out.requires_grad = false;
    out.grad = None;
    let c = out.cols();
    if c == 0 {
        return Ok(out);
    }
    for r in 0..out.rows() {
        softmax_in_place(&mut out.data[r * c..(r + 1) * c]);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

/// Mean negative log-likelihood of `targets` under the row softmax of `logits`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    let (n, c) = logits.dims2();
    if targets.len() != n {
        return dim_err(format!("{} targets for {n} rows", targets.len()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Index(format!("target {bad} with {c} classes")));
    }
    logits.ensure_finite("logits")?;
    let mut total = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        total += log_sum_exp(logits.row(r)) - logits.row(r)[t];
    }
    Ok(total / T::c(n.max(1) as f64))
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
