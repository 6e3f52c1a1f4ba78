//! Reverse-mode differentiation over a Wengert tape.
//!
//! Every differentiable tensor method computes its value eagerly and, when at
//! least one operand is tracked, records a node holding the op, the operand
//! references, and the output values. [`backward`] replays the nodes in exact
//! reverse order, accumulating gradients additively across fan-out.
//!
//! A tape is confined to one thread of execution; nothing here mutates global
//! state, so independent tapes on independent threads are safe.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    matmul_raw, silu_grad_raw, silu_raw, softmax_rows_raw, transpose_raw, Tensor,
};

/// Shared handle to a recording tape.
pub struct Tape<T: Scalar> {
    inner: Arc<Mutex<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape { inner: Arc::clone(&self.inner) }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A tensor's position on a tape.
pub struct GradNode<T: Scalar> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for GradNode<T> {
    fn clone(&self) -> Self {
        GradNode { tape: self.tape.clone(), id: self.id }
    }
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
}

struct Node<T: Scalar> {
    op: Op<T>,
    /// Output values of this node, kept for VJPs that need them.
    values: Vec<T>,
    len: usize,
}

/// An operand reference: either another node or a captured constant.
enum Arg<T> {
    Node(usize),
    Const(Vec<T>),
}

enum Op<T: Scalar> {
    Leaf,
    Matmul { a: Arg<T>, b: Arg<T>, m: usize, k: usize, n: usize },
    Transpose { x: Arg<T>, rows: usize, cols: usize },
    Add { a: Arg<T>, b: Arg<T> },
    Sub { a: Arg<T>, b: Arg<T> },
    Mul { a: Arg<T>, b: Arg<T> },
    Div { a: Arg<T>, b: Arg<T> },
    AddRow { x: Arg<T>, row: Arg<T>, rows: usize, cols: usize },
    Affine { x: Arg<T>, mul: T },
    Silu { x: Arg<T> },
    RowSoftmax { x: Arg<T>, rows: usize, cols: usize, scale: T },
    LayerNorm { x: Arg<T>, gamma: Arg<T>, beta: Arg<T>, rows: usize, cols: usize, eps: T },
    SumAll { x: Arg<T>, len: usize },
    RenormRowsOrKeep { gated: Arg<T>, orig: Arg<T>, rows: usize, cols: usize, floor: T },
    AvgPool2d { x: Arg<T>, h: usize, w: usize, f: usize },
    Gather { x: Arg<T>, x_len: usize, index: Vec<usize> },
    ScatterRows { table: Arg<T>, ids: Vec<usize>, cols: usize },
    SelectColumn { x: Arg<T>, rows: usize, cols: usize, col: usize },
    Reshape { x: Arg<T> },
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { inner: Arc::new(Mutex::new(TapeInner { nodes: Vec::new() })) }
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, op: Op<T>, values: Vec<T>) -> usize {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.nodes.len();
        let len = values.len();
        inner.nodes.push(Node { op, values, len });
        id
    }

    /// Registers a tensor as a leaf and returns the tracked copy.
    pub fn watch(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(Op::Leaf, t.data().to_vec());
        Tensor::with_node(
            t.shape().to_vec(),
            t.data().to_vec(),
            Some(GradNode { tape: self.clone(), id }),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.lock().unwrap().nodes.len()
    }
}

/// Resolves the common tape for an op's operands, if any is tracked.
fn join_tapes<'a, T: Scalar>(nodes: &[Option<&'a GradNode<T>>]) -> Result<Option<&'a Tape<T>>> {
    let mut found: Option<&GradNode<T>> = None;
    for n in nodes.iter().flatten() {
        match found {
            None => found = Some(n),
            Some(prev) => {
                if !prev.tape.same_tape(&n.tape) {
                    return Err(Error::Tape("operands recorded on different tapes".into()));
                }
            }
        }
    }
    Ok(found.map(|n| &n.tape))
}

fn arg_of<T: Scalar>(t: &Tensor<T>) -> Arg<T> {
    match &t.node {
        Some(n) => Arg::Node(n.id),
        None => Arg::Const(t.data().to_vec()),
    }
}

/// Gradients of one scalar objective with respect to tape nodes.
pub struct Gradients<T: Scalar> {
    tape: Tape<T>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a tracked tensor, shaped like it. Zero if the
    /// objective does not depend on it.
    pub fn wrt(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let node = t
            .node
            .as_ref()
            .ok_or_else(|| Error::Tape("gradient requested for an untracked tensor".into()))?;
        if !node.tape.same_tape(&self.tape) {
            return Err(Error::Tape("tensor belongs to a different tape".into()));
        }
        match self.grads.get(node.id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_vec(t.shape().to_vec(), g.clone()),
            None => Ok(Tensor::zeros(t.shape().to_vec())),
        }
    }
}

/// Reverse pass from a scalar objective. Returns per-node gradients;
/// query them through [`Gradients::wrt`].
pub fn backward<T: Scalar>(objective: &Tensor<T>) -> Result<Gradients<T>> {
    let node = objective
        .node
        .as_ref()
        .ok_or_else(|| Error::Tape("objective is not on a tape".into()))?;
    if objective.len() != 1 {
        return Err(Error::Tape(format!(
            "objective must be scalar, got {} elements",
            objective.len()
        )));
    }
    let tape = node.tape.clone();
    let inner = tape.inner.lock().unwrap();
    let mut grads: Vec<Option<Vec<T>>> = vec![None; inner.nodes.len()];
    grads[node.id] = Some(vec![T::one()]);

    for id in (0..=node.id).rev() {
        let Some(dy) = grads[id].take() else { continue };
        propagate(&inner.nodes, id, &dy, &mut grads);
        grads[id] = Some(dy);
    }
    drop(inner);
    Ok(Gradients { tape, grads })
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], arg: &Arg<T>, len: usize, add: impl Fn(&mut [T])) {
    if let Arg::Node(id) = arg {
        let slot = grads[*id].get_or_insert_with(|| vec![T::zero(); len]);
        add(slot);
    }
}

fn values<'a, T: Scalar>(nodes: &'a [Node<T>], arg: &'a Arg<T>) -> &'a [T] {
    match arg {
        Arg::Node(id) => &nodes[*id].values,
        Arg::Const(v) => v,
    }
}

fn arg_len<T: Scalar>(nodes: &[Node<T>], arg: &Arg<T>) -> usize {
    match arg {
        Arg::Node(id) => nodes[*id].len,
        Arg::Const(v) => v.len(),
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let av = values(nodes, a);
            let bv = values(nodes, b);
            if matches!(a, Arg::Node(_)) {
                let bt = transpose_raw(bv, k, n);
                let da = matmul_raw(dy, &bt, m, n, k);
                accumulate(grads, a, m * k, |g| {
                    for (gi, di) in g.iter_mut().zip(&da) {
                        *gi += *di;
                    }
                });
            }
            if matches!(b, Arg::Node(_)) {
                let at = transpose_raw(av, m, k);
                let db = matmul_raw(&at, dy, k, m, n);
                accumulate(grads, b, k * n, |g| {
                    for (gi, di) in g.iter_mut().zip(&db) {
                        *gi += *di;
                    }
                });
            }
        }
        Op::Transpose { x, rows, cols } => {
            let dx = transpose_raw(dy, *cols, *rows);
            accumulate(grads, x, rows * cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dx) {
                    *gi += *di;
                }
            });
        }
        Op::Add { a, b } => {
            accumulate(grads, a, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += *di;
                }
            });
            accumulate(grads, b, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += *di;
                }
            });
        }
        Op::Sub { a, b } => {
            accumulate(grads, a, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += *di;
                }
            });
            accumulate(grads, b, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi -= *di;
                }
            });
        }
        Op::Mul { a, b } => {
            let av = values(nodes, a);
            let bv = values(nodes, b);
            if matches!(a, Arg::Node(_)) {
                let contrib: Vec<T> = dy.iter().zip(bv).map(|(&d, &v)| d * v).collect();
                accumulate(grads, a, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(&contrib) {
                        *gi += *di;
                    }
                });
            }
            if matches!(b, Arg::Node(_)) {
                let contrib: Vec<T> = dy.iter().zip(av).map(|(&d, &v)| d * v).collect();
                accumulate(grads, b, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(&contrib) {
                        *gi += *di;
                    }
                });
            }
        }
        Op::Div { a, b } => {
            let av = values(nodes, a);
            let bv = values(nodes, b);
            if matches!(a, Arg::Node(_)) {
                let contrib: Vec<T> = dy.iter().zip(bv).map(|(&d, &v)| d / v).collect();
                accumulate(grads, a, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(&contrib) {
                        *gi += *di;
                    }
                });
            }
            if matches!(b, Arg::Node(_)) {
                let contrib: Vec<T> = dy
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(&d, (&x, &y))| -d * x / (y * y))
                    .collect();
                accumulate(grads, b, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(&contrib) {
                        *gi += *di;
                    }
                });
            }
        }
        Op::AddRow { x, row, rows, cols } => {
            accumulate(grads, x, rows * cols, |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += *di;
                }
            });
            if matches!(row, Arg::Node(_)) {
                let mut drow = vec![T::zero(); *cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        drow[c] += dy[r * cols + c];
                    }
                }
                accumulate(grads, row, *cols, |g| {
                    for (gi, di) in g.iter_mut().zip(&drow) {
                        *gi += *di;
                    }
                });
            }
        }
        Op::Affine { x, mul } => {
            let m = *mul;
            accumulate(grads, x, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += m * *di;
                }
            });
        }
        Op::Silu { x } => {
            let xv = values(nodes, x);
            let dx = silu_grad_raw(xv, dy);
            accumulate(grads, x, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(&dx) {
                    *gi += *di;
                }
            });
        }
        Op::RowSoftmax { x, rows, cols, scale } => {
            // dx_i = scale * (s_i * dy_i - s_i * <s_i, dy_i>)
            let s = &node.values;
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..*rows {
                let srow = &s[r * cols..(r + 1) * cols];
                let dyrow = &dy[r * cols..(r + 1) * cols];
                let dot: T = srow.iter().zip(dyrow).map(|(&a, &b)| a * b).sum();
                for c in 0..*cols {
                    dx[r * cols + c] = *scale * srow[c] * (dyrow[c] - dot);
                }
            }
            accumulate(grads, x, rows * cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dx) {
                    *gi += *di;
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, rows, cols, eps } => {
            let xv = values(nodes, x);
            let gv = values(nodes, gamma);
            let (rows, cols) = (*rows, *cols);
            let nc = T::fromf(cols as f64);
            let mut dx = vec![T::zero(); rows * cols];
            let mut dgamma = vec![T::zero(); cols];
            let mut dbeta = vec![T::zero(); cols];
            for r in 0..rows {
                let xr = &xv[r * cols..(r + 1) * cols];
                let dyr = &dy[r * cols..(r + 1) * cols];
                let mean = xr.iter().copied().sum::<T>() / nc;
                let var = xr
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>()
                    / nc;
                let rstd = T::one() / (var + *eps).sqrt();
                // xhat, d-xhat, and the two row means the VJP needs.
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                let mut xhat = vec![T::zero(); cols];
                let mut dxh = vec![T::zero(); cols];
                for c in 0..cols {
                    xhat[c] = (xr[c] - mean) * rstd;
                    dxh[c] = dyr[c] * gv[c];
                    m1 += dxh[c];
                    m2 += dxh[c] * xhat[c];
                    dgamma[c] += dyr[c] * xhat[c];
                    dbeta[c] += dyr[c];
                }
                m1 = m1 / nc;
                m2 = m2 / nc;
                for c in 0..cols {
                    dx[r * cols + c] = rstd * (dxh[c] - m1 - xhat[c] * m2);
                }
            }
            accumulate(grads, x, rows * cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dx) {
                    *gi += *di;
                }
            });
            accumulate(grads, gamma, cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dgamma) {
                    *gi += *di;
                }
            });
            accumulate(grads, beta, cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dbeta) {
                    *gi += *di;
                }
            });
        }
        Op::SumAll { x, len } => {
            let d = dy[0];
            accumulate(grads, x, *len, |g| {
                for gi in g.iter_mut() {
                    *gi += d;
                }
            });
        }
        Op::RenormRowsOrKeep { gated, orig, rows, cols, floor } => {
            let gv = values(nodes, gated);
            let y = &node.values;
            let (rows, cols) = (*rows, *cols);
            let mut dgated = vec![T::zero(); rows * cols];
            let mut dorig = vec![T::zero(); rows * cols];
            let mut any_kept = false;
            for r in 0..rows {
                let grow = &gv[r * cols..(r + 1) * cols];
                let s: T = grow.iter().copied().sum();
                let dyr = &dy[r * cols..(r + 1) * cols];
                if s < *floor {
                    any_kept = true;
                    dorig[r * cols..(r + 1) * cols].copy_from_slice(dyr);
                } else {
                    let yrow = &y[r * cols..(r + 1) * cols];
                    let dot: T = dyr.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        dgated[r * cols + c] = (dyr[c] - dot) / s;
                    }
                }
            }
            accumulate(grads, gated, rows * cols, |g| {
                for (gi, di) in g.iter_mut().zip(&dgated) {
                    *gi += *di;
                }
            });
            if any_kept {
                accumulate(grads, orig, rows * cols, |g| {
                    for (gi, di) in g.iter_mut().zip(&dorig) {
                        *gi += *di;
                    }
                });
            }
        }
        Op::AvgPool2d { x, h, w, f } => {
            let (h, w, f) = (*h, *w, *f);
            let inv = T::one() / T::fromf((f * f) as f64);
            let wo = w / f;
            accumulate(grads, x, h * w, |g| {
                for r in 0..h {
                    for c in 0..w {
                        g[r * w + c] += dy[(r / f) * wo + (c / f)] * inv;
                    }
                }
            });
        }
        Op::Gather { x, x_len, index } => {
            accumulate(grads, x, *x_len, |g| {
                for (out_i, &src) in index.iter().enumerate() {
                    g[src] += dy[out_i];
                }
            });
        }
        Op::ScatterRows { table, ids, cols } => {
            accumulate(grads, table, arg_len(nodes, table), |g| {
                for (i, &id) in ids.iter().enumerate() {
                    for c in 0..*cols {
                        g[id * cols + c] += dy[i * cols + c];
                    }
                }
            });
        }
        Op::SelectColumn { x, rows, cols, col } => {
            accumulate(grads, x, rows * cols, |g| {
                for r in 0..*rows {
                    g[r * cols + col] += dy[r];
                }
            });
        }
        Op::Reshape { x } => {
            accumulate(grads, x, dy.len(), |g| {
                for (gi, di) in g.iter_mut().zip(dy) {
                    *gi += *di;
                }
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiable tensor methods.
// ---------------------------------------------------------------------------

impl<T: Scalar> Tensor<T> {
    fn record1(&self, out_shape: Vec<usize>, out: Vec<T>, make: impl FnOnce(Arg<T>) -> Op<T>) -> Result<Tensor<T>> {
        let tape = join_tapes(&[self.node.as_ref()])?;
        let node = tape.map(|tp| {
            let id = tp.push(make(arg_of(self)), out.clone());
            GradNode { tape: tp.clone(), id }
        });
        Ok(Tensor::with_node(out_shape, out, node))
    }

    fn record2(
        &self,
        other: &Tensor<T>,
        out_shape: Vec<usize>,
        out: Vec<T>,
        make: impl FnOnce(Arg<T>, Arg<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        let tape = join_tapes(&[self.node.as_ref(), other.node.as_ref()])?;
        let node = tape.map(|tp| {
            let id = tp.push(make(arg_of(self), arg_of(other)), out.clone());
            GradNode { tape: tp.clone(), id }
        });
        Ok(Tensor::with_node(out_shape, out, node))
    }

    /// Dense product of two 2-d tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.rows_cols()?;
        let (k2, n) = other.rows_cols()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims: {m}x{k} vs {k2}x{n}"
            )));
        }
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        self.record2(other, vec![m, n], out, |a, b| Op::Matmul { a, b, m, k, n })
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        let out = transpose_raw(self.data(), rows, cols);
        self.record1(vec![cols, rows], out, |x| Op::Transpose { x, rows, cols })
    }

    fn binary_same_shape(
        &self,
        other: &Tensor<T>,
        op_name: &str,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Arg<T>, Arg<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op_name}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        self.record2(other, self.shape().to_vec(), out, make)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(other, "add", |a, b| a + b, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(other, "sub", |a, b| a - b, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(other, "mul", |a, b| a * b, |a, b| Op::Mul { a, b })
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_same_shape(other, "div", |a, b| a / b, |a, b| Op::Div { a, b })
    }

    /// Adds a length-n row vector to every row of an m x n tensor.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        if row.len() != cols {
            return Err(Error::Shape(format!(
                "add_row: {} cols vs row of {}",
                cols,
                row.len()
            )));
        }
        let mut out = self.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += row.data()[c];
            }
        }
        self.record2(row, self.shape().to_vec(), out, |x, row| Op::AddRow {
            x,
            row,
            rows,
            cols,
        })
    }

    /// y = mul * x + add, elementwise with scalar coefficients.
    pub fn affine(&self, mul: T, add: T) -> Result<Tensor<T>> {
        let out: Vec<T> = self.data().iter().map(|&v| mul * v + add).collect();
        self.record1(self.shape().to_vec(), out, |x| Op::Affine { x, mul })
    }

    pub fn silu(&self) -> Result<Tensor<T>> {
        let out = silu_raw(self.data());
        self.record1(self.shape().to_vec(), out, |x| Op::Silu { x })
    }

    /// Row-wise softmax of `scale * x`, stabilized by per-row max subtraction.
    pub fn softmax_rows(&self, scale: T) -> Result<Tensor<T>> {
        if scale <= T::zero() {
            return Err(Error::Invalid(format!("softmax scale must be positive, got {scale}")));
        }
        let (rows, cols) = self.rows_cols()?;
        let out = softmax_rows_raw(self.data(), rows, cols, scale);
        self.record1(vec![rows, cols], out, |x| Op::RowSoftmax { x, rows, cols, scale })
    }

    /// Per-row normalization: y = gamma * (x - mean) / sqrt(var + eps) + beta.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        if gamma.len() != cols || beta.len() != cols {
            return Err(Error::Shape(format!(
                "layer_norm: {} cols vs gamma {} / beta {}",
                cols,
                gamma.len(),
                beta.len()
            )));
        }
        let nc = T::fromf(cols as f64);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let xr = &self.data()[r * cols..(r + 1) * cols];
            let mean = xr.iter().copied().sum::<T>() / nc;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nc;
            let rstd = T::one() / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = gamma.data()[c] * (xr[c] - mean) * rstd + beta.data()[c];
            }
        }
        let tape = join_tapes(&[self.node.as_ref(), gamma.node.as_ref(), beta.node.as_ref()])?;
        let node = tape.map(|tp| {
            let id = tp.push(
                Op::LayerNorm {
                    x: arg_of(self),
                    gamma: arg_of(gamma),
                    beta: arg_of(beta),
                    rows,
                    cols,
                    eps,
                },
                out.clone(),
            );
            GradNode { tape: tp.clone(), id }
        });
        Ok(Tensor::with_node(vec![rows, cols], out, node))
    }

    /// Full reduction to a 1-element tensor.
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let s: T = self.data().iter().copied().sum();
        let len = self.len();
        self.record1(vec![1], vec![s], |x| Op::SumAll { x, len })
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.len();
        self.sum_all()?.affine(T::one() / T::fromf(n as f64), T::zero())
    }

    /// Row renormalization with zero-support fallback: rows of `self` (the
    /// gated map) are divided by their sum; a row whose sum falls below
    /// `floor` is replaced by the corresponding row of `orig` unchanged.
    pub fn renorm_rows_or_keep(&self, orig: &Tensor<T>, floor: T) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        if orig.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "renorm_rows_or_keep: {:?} vs {:?}",
                self.shape(),
                orig.shape()
            )));
        }
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let grow = &self.data()[r * cols..(r + 1) * cols];
            let s: T = grow.iter().copied().sum();
            if s < floor {
                out[r * cols..(r + 1) * cols]
                    .copy_from_slice(&orig.data()[r * cols..(r + 1) * cols]);
            } else {
                for c in 0..cols {
                    out[r * cols + c] = grow[c] / s;
                }
            }
        }
        self.record2(orig, vec![rows, cols], out, |gated, orig| Op::RenormRowsOrKeep {
            gated,
            orig,
            rows,
            cols,
            floor,
        })
    }

    /// Mean over non-overlapping f x f blocks of a 2-d tensor.
    pub fn avg_pool2d(&self, factor: usize) -> Result<Tensor<T>> {
        let (h, w) = self.rows_cols()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2d: {h}x{w} not divisible by {factor}"
            )));
        }
        let (ho, wo) = (h / factor, w / factor);
        let inv = T::one() / T::fromf((factor * factor) as f64);
        let mut out = vec![T::zero(); ho * wo];
        for r in 0..h {
            for c in 0..w {
                out[(r / factor) * wo + (c / factor)] += self.data()[r * w + c] * inv;
            }
        }
        self.record1(vec![ho, wo], out, |x| Op::AvgPool2d { x, h, w, f: factor })
    }

    fn gather(&self, index: Vec<usize>, out_shape: Vec<usize>) -> Result<Tensor<T>> {
        let out: Vec<T> = index.iter().map(|&i| self.data()[i]).collect();
        let x_len = self.len();
        self.record1(out_shape, out, |x| Op::Gather { x, x_len, index })
    }

    /// Splits a side x side map into q*q rows of flattened p x p patches
    /// (p = side / q), row-major in both the patch grid and within patches.
    pub fn patchify(&self, q: usize) -> Result<Tensor<T>> {
        let (h, w) = self.rows_cols()?;
        if h != w || q == 0 || h % q != 0 {
            return Err(Error::Shape(format!("patchify: {h}x{w} with q={q}")));
        }
        let p = h / q;
        let mut index = Vec::with_capacity(h * w);
        for gy in 0..q {
            for gx in 0..q {
                for py in 0..p {
                    for px in 0..p {
                        index.push((gy * p + py) * w + gx * p + px);
                    }
                }
            }
        }
        self.gather(index, vec![q * q, p * p])
    }

    /// Inverse of [`Tensor::patchify`]: q*q rows of p*p pixels back to an image.
    pub fn unpatchify(&self, q: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        if rows != q * q {
            return Err(Error::Shape(format!("unpatchify: {rows} rows vs q={q}")));
        }
        let p = (cols as f64).sqrt() as usize;
        if p * p != cols {
            return Err(Error::Shape(format!("unpatchify: cols {cols} not a square")));
        }
        let side = q * p;
        let mut index = vec![0usize; side * side];
        for gy in 0..q {
            for gx in 0..q {
                for py in 0..p {
                    for px in 0..p {
                        let src = (gy * q + gx) * cols + py * p + px;
                        let dst = (gy * p + py) * side + gx * p + px;
                        index[dst] = src;
                    }
                }
            }
        }
        self.gather(index, vec![side, side])
    }

    /// Row lookup: out[i] = self[ids[i]], for an embedding table of shape
    /// vocab x dim. Gradients scatter-add back into the table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let (vocab, dim) = self.rows_cols()?;
        for &id in ids {
            if id >= vocab {
                return Err(Error::Invalid(format!("row id {id} out of vocab {vocab}")));
            }
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&self.data()[id * dim..(id + 1) * dim]);
        }
        let rows = ids.len();
        let ids = ids.to_vec();
        self.record1(vec![rows, dim], out, |table| Op::ScatterRows {
            table,
            ids,
            cols: dim,
        })
    }

    /// Extracts column `col` of an m x n tensor as a length-m tensor.
    pub fn select_column(&self, col: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols()?;
        if col >= cols {
            return Err(Error::Invalid(format!("column {col} out of {cols}")));
        }
        let out: Vec<T> = (0..rows).map(|r| self.data()[r * cols + col]).collect();
        self.record1(vec![rows], out, |x| Op::SelectColumn { x, rows, cols, col })
    }

    /// Reinterprets the buffer under a new shape of the same size.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let expect: usize = shape.iter().product();
        if expect != self.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let out = self.data().to_vec();
        self.record1(shape, out, |x| Op::Reshape { x })
    }

    /// Inner product as a 1-element tensor.
    pub fn dot(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "dot: {} vs {} elements",
                self.len(),
                other.len()
            )));
        }
        let flat_self = self.reshape(vec![self.len()])?;
        let flat_other = other.reshape(vec![other.len()])?;
        flat_self.mul(&flat_other)?.sum_all()
    }
}
