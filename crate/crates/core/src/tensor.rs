//! Dense row-major tensors.
//!
//! A [`Tensor`] is a plain value (shape + buffer). It optionally carries a
//! handle into an active [`crate::tape::Tape`]; every differentiable method in
//! [`crate::tape`] records itself when any operand is tracked and stays
//! recording-free otherwise, so the same forward code serves sampling and
//! gradient computation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::GradNode;

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub(crate) node: Option<GradNode<T>>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, node: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n], node: None }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n], node: None }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], node: None }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        debug_assert!(self.node.is_none(), "mutating a tracked tensor");
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Drops any tape handle, leaving a plain value.
    pub fn detach(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<T>, node: Option<GradNode<T>>) -> Self {
        Tensor { shape, data, node }
    }

    /// Extracts the single element of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!("expected 2-d tensor, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Elementwise map on an untracked tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        debug_assert!(self.node.is_none(), "map() ignores the tape");
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor { shape: self.shape.clone(), data, node: None }
    }

    pub fn clamp01(&self) -> Tensor<T> {
        self.map(|x| x.max(T::zero()).min(T::one()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, d| m.max(d))
    }

    pub fn min_value(&self) -> T {
        self.data.iter().fold(T::infinity(), |m, &x| m.min(x))
    }

    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
    }

    /// Converts element type; the result is untracked.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::fromf(x.tof())).collect(),
            node: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Raw kernels (no tape involvement). The tape ops and their VJPs share these.
// ---------------------------------------------------------------------------

/// C[m,n] = A[m,k] B[k,n], accumulated along contiguous rows of B so the
/// inner loop vectorizes.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Row-wise softmax of `scale * x` with per-row max subtraction.
pub(crate) fn softmax_rows_raw<T: Scalar>(x: &[T], rows: usize, cols: usize, scale: T) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let hi = row
            .iter()
            .map(|&v| v * scale)
            .fold(T::neg_infinity(), |m, v| m.max(v));
        let mut denom = T::zero();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v * scale - hi).exp();
            *o = e;
            denom += e;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o = *o / denom;
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn silu_raw<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub(crate) fn silu_grad_raw<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

/// Truncated normalized Gaussian taps for radius ceil(3*sigma).
pub(crate) fn gaussian_kernel<T: Scalar>(sigma: f64) -> Vec<T> {
    if sigma == 0.0 {
        return vec![T::one()];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps = Vec::with_capacity((2 * radius + 1) as usize);
    let mut total = 0.0f64;
    for i in -radius..=radius {
        let v = (-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp();
        taps.push(v);
        total += v;
    }
    taps.into_iter().map(|v| T::fromf(v / total)).collect()
}

/// Index with reflect padding (edge not repeated): -1 -> 1, n -> n-2.
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
        if n == 1 {
            return 0;
        }
    }
}

/// Separable Gaussian blur with reflect padding.
pub(crate) fn gaussian_blur2d_raw<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    sigma: f64,
) -> Vec<T> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let kern = gaussian_kernel::<T>(sigma);
    let radius = (kern.len() / 2) as i64;
    // Horizontal pass.
    let mut mid = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (ti, &tap) in kern.iter().enumerate() {
                let src = reflect_index(c as i64 + ti as i64 - radius, w);
                acc += tap * x[r * w + src];
            }
            mid[r * w + c] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (ti, &tap) in kern.iter().enumerate() {
                let src = reflect_index(r as i64 + ti as i64 - radius, h);
                acc += tap * mid[src * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Separable Gaussian blur (radius ceil(3*sigma), reflect padding).
    /// Not tape-recorded; inputs here are always mask-derived constants.
    pub fn gaussian_blur2d(&self, sigma: f64) -> Result<Tensor<T>> {
        if sigma < 0.0 {
            return Err(Error::Invalid(format!("negative blur sigma {sigma}")));
        }
        let (h, w) = self.rows_cols()?;
        let data = gaussian_blur2d_raw(&self.data, h, w, sigma);
        Tensor::from_vec(vec![h, w], data)
    }

    /// 3x3 morphological max, used to dilate soft masks by one cell.
    pub fn dilate3x3(&self) -> Result<Tensor<T>> {
        let (h, w) = self.rows_cols()?;
        let mut out = vec![T::zero(); h * w];
        for r in 0..h {
            for c in 0..w {
                let mut m = T::neg_infinity();
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let rr = r as i64 + dr;
                        let cc = c as i64 + dc;
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        m = m.max(self.data[rr as usize * w + cc as usize]);
                    }
                }
                out[r * w + c] = m;
            }
        }
        Tensor::from_vec(vec![h, w], out)
    }
}
