//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] records every value produced during one forward pass. Node ids
//! are assigned in creation order, so parents always have smaller ids than
//! their children and a reverse sweep over ids is a valid topological order.
//! The graph is rebuilt from scratch on each forward pass.

use std::cell::RefCell;
use std::fmt;
use std::iter::Sum;
use std::rc::Rc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type a tape can carry. Training runs in `f32`; gradient checks
/// and a few metric paths use `f64`.
pub trait Scalar: Float + Sum + fmt::Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}

/// Added to attention logits of hidden keys. `exp` of it underflows to exactly
/// zero in both precisions, so hidden positions contribute nothing.
pub const MASK_LOGIT: f64 = -1.0e9;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        rstd: Vec<T>,
    },
    Relu(usize),
    Gelu(usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Embedding {
        table: usize,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    RepeatRows {
        x: usize,
        factor: usize,
    },
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        probs: Vec<T>,
        targets: Vec<usize>,
        weights: Vec<T>,
        weight_sum: T,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Shared handle to one forward pass's computation record.
pub struct Tape<T: Scalar = f32> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// A value on a tape: shape, data, and (for leaves) an accumulated gradient.
pub struct Tensor<T: Scalar = f32> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(#{} {:?})", self.id, self.shape())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let n = numel(shape);
    (if cols == 0 { 0 } else { n / cols }, cols)
}

fn matrix(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::shape(op, shape, &[0, 0]));
    }
    Ok((shape[0], shape[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Tensor<T> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Tensor {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    /// Trainable (or at least differentiable) input.
    pub fn leaf(&self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Tensor<T>> {
        if numel(shape) != data.len() {
            return Err(Error::shape("leaf", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, requires_grad))
    }

    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Constant, false))
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor<T> {
        self.push(shape.to_vec(), vec![T::zero(); numel(shape)], Op::Constant, false)
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grads(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// Row-wise concatenation of matrices with equal column counts.
pub fn concat_rows<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_rows of zero tensors"))?;
    let tape = first.tape.clone();
    let (rows, cols, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (_, cols) = matrix("concat_rows", &nodes[first.id].shape)?;
        let mut rows = 0;
        let mut value = Vec::new();
        let mut rg = false;
        for p in parts {
            let n = &nodes[p.id];
            let (r, c) = matrix("concat_rows", &n.shape)?;
            if c != cols {
                return Err(Error::shape("concat_rows", &nodes[first.id].shape, &n.shape));
            }
            rows += r;
            value.extend_from_slice(&n.value);
            rg |= n.requires_grad;
        }
        (rows, cols, value, rg)
    };
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(vec![rows, cols], value, Op::ConcatRows(ids), rg))
}

/// Column-wise concatenation of matrices with equal row counts.
pub fn concat_cols<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_cols of zero tensors"))?;
    let tape = first.tape.clone();
    let (rows, cols, value, rg) = {
        let nodes = tape.nodes.borrow();
        let (rows, _) = matrix("concat_cols", &nodes[first.id].shape)?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            let n = &nodes[p.id];
            let (r, c) = matrix("concat_cols", &n.shape)?;
            if r != rows {
                return Err(Error::shape("concat_cols", &nodes[first.id].shape, &n.shape));
            }
            widths.push(c);
            rg |= n.requires_grad;
        }
        let cols: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&nodes[p.id].value[r * w..(r + 1) * w]);
            }
        }
        (rows, cols, value, rg)
    };
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(vec![rows, cols], value, Op::ConcatCols(ids), rg))
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let v = half * x * (one + t);
    let d = half * (one + t) + half * x * (one - t * t) * k * (one + T::of(3.0) * a * x * x);
    (v, d)
}

impl<T: Scalar> Tensor<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrow the data without copying.
    pub fn with_value<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// First element; meant for scalar losses.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn check_tape(&self, other: &Tensor<T>) -> Result<()> {
        if self.tape.same_tape(&other.tape) {
            Ok(())
        } else {
            Err(Error::contract("tensors live on different tapes"))
        }
    }

    fn unary(
        &self,
        f: impl FnOnce(&[usize], &[T]) -> Result<(Vec<usize>, Vec<T>, Op<T>)>,
    ) -> Result<Tensor<T>> {
        let (shape, value, op, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let (s, v, op) = f(&n.shape, &n.value)?;
            (s, v, op, n.requires_grad)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        f: impl FnOnce(&[usize], &[T], &[usize], &[T]) -> Result<(Vec<usize>, Vec<T>, Op<T>)>,
    ) -> Result<Tensor<T>> {
        self.check_tape(other)?;
        let (shape, value, op, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            let (s, v, op) = f(&a.shape, &a.value, &b.shape, &b.value)?;
            (s, v, op, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    fn elementwise(
        &self,
        other: &Tensor<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Tensor<T>> {
        self.binary(other, |sa, a, sb, b| {
            if sa != sb {
                return Err(Error::shape(name, sa, sb));
            }
            let v = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
            Ok((sa.to_vec(), v, op))
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    fn row_broadcast(
        &self,
        row: &Tensor<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Tensor<T>> {
        self.binary(row, |sa, a, sb, b| {
            let (_, cols) = rows_cols(sa);
            if b.len() != cols || sb.len() > 2 || (sb.len() == 2 && sb[0] != 1) {
                return Err(Error::shape(name, sa, sb));
            }
            let v = a
                .chunks(cols.max(1))
                .flat_map(|r| r.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
                .collect();
            Ok((sa.to_vec(), v, op))
        })
    }

    /// `self[i, :] + row` for every row `i`.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.row_broadcast(row, "add_row", |x, y| x + y, Op::AddRow(self.id, row.id))
    }

    /// `self[i, :] * row` for every row `i`.
    pub fn mul_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.row_broadcast(row, "mul_row", |x, y| x * y, Op::MulRow(self.id, row.id))
    }

    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        self.unary(|shape, v| Ok((shape.to_vec(), v.iter().map(|&x| x * s).collect(), Op::Scale(self.id, s))))
    }

    pub fn add_scalar(&self, s: T) -> Result<Tensor<T>> {
        self.unary(|shape, v| Ok((shape.to_vec(), v.iter().map(|&x| x + s).collect(), Op::AddScalar(self.id))))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a_id, b_id) = (self.id, other.id);
        self.binary(other, |sa, a, sb, b| {
            let (n, k) = matrix("matmul", sa)?;
            let (k2, m) = matrix("matmul", sb)?;
            if k != k2 {
                return Err(Error::shape("matmul", sa, sb));
            }
            let mut out = vec![T::zero(); n * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for (p, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if aik == T::zero() {
                        continue;
                    }
                    for (o, &bv) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                        *o = *o + aik * bv;
                    }
                }
            }
            Ok((vec![n, m], out, Op::MatMul(a_id, b_id)))
        })
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (r, c) = matrix("transpose", shape)?;
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
            Ok((vec![c, r], out, Op::Transpose(self.id)))
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        self.unary(|s, v| {
            if numel(shape) != v.len() {
                return Err(Error::shape("reshape", s, shape));
            }
            Ok((shape.to_vec(), v.to_vec(), Op::Reshape(self.id)))
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (_, cols) = rows_cols(shape);
            let mut out = v.to_vec();
            for row in out.chunks_mut(cols.max(1)) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - mx).exp();
                    s = s + *x;
                }
                for x in row.iter_mut() {
                    *x = *x / s;
                }
            }
            Ok((shape.to_vec(), out, Op::Softmax(self.id)))
        })
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: T) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (rows, cols) = rows_cols(shape);
            let nf = T::of(cols as f64);
            let mut out = vec![T::zero(); v.len()];
            let mut rstd = Vec::with_capacity(rows);
            for r in 0..rows {
                let x = &v[r * cols..(r + 1) * cols];
                let mean = x.iter().copied().sum::<T>() / nf;
                let var = x.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / nf;
                let rs = T::one() / (var + eps).sqrt();
                for (o, &a) in out[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *o = (a - mean) * rs;
                }
                rstd.push(rs);
            }
            Ok((shape.to_vec(), out, Op::LayerNorm { x: self.id, rstd }))
        })
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary(|shape, v| Ok((shape.to_vec(), v.iter().map(|&x| x.max(T::zero())).collect(), Op::Relu(self.id))))
    }

    pub fn gelu(&self) -> Result<Tensor<T>> {
        self.unary(|shape, v| Ok((shape.to_vec(), v.iter().map(|&x| gelu(x).0).collect(), Op::Gelu(self.id))))
    }

    /// 1-D convolution over time. `self` is `[L, C_in]` (time-major),
    /// `weight` is `[kernel, C_in, C_out]`; output is `[L_out, C_out]` with
    /// `L_out = (L + 2·pad − kernel) / stride + 1`. Out-of-range taps read zero.
    pub fn conv1d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let (x_id, w_id) = (self.id, weight.id);
        self.binary(weight, |sx, x, sw, w| {
            let (len, cin) = matrix("conv1d", sx)?;
            if sw.len() != 3 || sw[1] != cin || stride == 0 {
                return Err(Error::shape("conv1d", sx, sw));
            }
            let (k, cout) = (sw[0], sw[2]);
            if len + 2 * pad < k {
                return Err(Error::shape("conv1d", sx, sw));
            }
            let lout = (len + 2 * pad - k) / stride + 1;
            let mut out = vec![T::zero(); lout * cout];
            for t in 0..lout {
                let orow = &mut out[t * cout..(t + 1) * cout];
                for j in 0..k {
                    let pos = (t * stride + j) as isize - pad as isize;
                    if pos < 0 || pos as usize >= len {
                        continue;
                    }
                    let xrow = &x[pos as usize * cin..(pos as usize + 1) * cin];
                    for (c, &xv) in xrow.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &w[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o = *o + xv * wv;
                        }
                    }
                }
            }
            Ok((vec![lout, cout], out, Op::Conv1d { x: x_id, w: w_id, stride, pad }))
        })
    }

    /// Non-overlapping max-pool over time (rows); trailing rows that do not
    /// fill a block are dropped. Ties pick the earliest row.
    pub fn max_pool(&self, factor: usize) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (len, c) = matrix("max_pool", shape)?;
            if factor == 0 || len < factor {
                return Err(Error::shape("max_pool", shape, &[factor, c]));
            }
            let lout = len / factor;
            let mut out = vec![T::zero(); lout * c];
            let mut argmax = vec![0usize; lout * c];
            for t in 0..lout {
                for ch in 0..c {
                    let mut best = t * factor;
                    for r in t * factor + 1..(t + 1) * factor {
                        if v[r * c + ch] > v[best * c + ch] {
                            best = r;
                        }
                    }
                    out[t * c + ch] = v[best * c + ch];
                    argmax[t * c + ch] = best * c + ch;
                }
            }
            Ok((vec![lout, c], out, Op::MaxPool { x: self.id, argmax }))
        })
    }

    /// Gathers rows of a `[K, d]` table.
    pub fn embedding(&self, idx: &[usize]) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (k, d) = matrix("embedding", shape)?;
            let mut out = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                if i >= k {
                    return Err(Error::Range(format!("embedding index {i} >= table size {k}")));
                }
                out.extend_from_slice(&v[i * d..(i + 1) * d]);
            }
            Ok((vec![idx.len(), d], out, Op::Embedding { table: self.id, idx: idx.to_vec() }))
        })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (r, c) = matrix("slice_rows", shape)?;
            if start > end || end > r {
                return Err(Error::shape("slice_rows", shape, &[start, end]));
            }
            Ok((vec![end - start, c], v[start * c..end * c].to_vec(), Op::SliceRows { x: self.id, start }))
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (r, c) = matrix("slice_cols", shape)?;
            if start > end || end > c {
                return Err(Error::shape("slice_cols", shape, &[start, end]));
            }
            let w = end - start;
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + start..i * c + end]);
            }
            Ok((vec![r, w], out, Op::SliceCols { x: self.id, start }))
        })
    }

    /// Nearest-neighbour temporal upsampling: each row repeated `factor` times.
    pub fn repeat_rows(&self, factor: usize) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            let (r, c) = matrix("repeat_rows", shape)?;
            if factor == 0 {
                return Err(Error::shape("repeat_rows", shape, &[0]));
            }
            let mut out = Vec::with_capacity(r * c * factor);
            for i in 0..r {
                for _ in 0..factor {
                    out.extend_from_slice(&v[i * c..(i + 1) * c]);
                }
            }
            Ok((vec![r * factor, c], out, Op::RepeatRows { x: self.id, factor }))
        })
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        self.unary(|_, v| Ok((vec![], vec![v.iter().copied().sum()], Op::Sum(self.id))))
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        self.unary(|shape, v| {
            if v.is_empty() {
                return Err(Error::shape("mean", shape, &[1]));
            }
            let s: T = v.iter().copied().sum();
            Ok((vec![], vec![s / T::of(v.len() as f64)], Op::Mean(self.id)))
        })
    }

    /// Sum of squared entries.
    pub fn sum_squares(&self) -> Result<Tensor<T>> {
        self.mul(self)?.sum()
    }

    /// Identity in the forward pass; no gradient ever flows back through it.
    pub fn stop_gradient(&self) -> Tensor<T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        self.tape.push(shape, value, Op::Constant, false)
    }

    /// Weighted mean cross-entropy of row-wise logits `[n, K]` against
    /// integer targets: `Σ w_i · (logsumexp(l_i) − l_i[t_i]) / Σ w_i`.
    pub fn cross_entropy(&self, targets: &[usize], weights: Option<&[T]>) -> Result<Tensor<T>> {
        let weights: Vec<T> = match weights {
            Some(w) => w.to_vec(),
            None => vec![T::one(); targets.len()],
        };
        self.unary(|shape, v| {
            let (n, k) = matrix("cross_entropy", shape)?;
            if targets.len() != n || weights.len() != n {
                return Err(Error::shape("cross_entropy", shape, &[targets.len()]));
            }
            let weight_sum: T = weights.iter().copied().sum();
            if weight_sum <= T::zero() {
                return Err(Error::contract("cross_entropy weights must have positive sum"));
            }
            let mut probs = vec![T::zero(); n * k];
            let mut loss = T::zero();
            for i in 0..n {
                let t = targets[i];
                if t >= k {
                    return Err(Error::Range(format!("target {t} >= {k} classes")));
                }
                let row = &v[i * k..(i + 1) * k];
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for (p, &x) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                    *p = (x - mx).exp();
                    s = s + *p;
                }
                for p in probs[i * k..(i + 1) * k].iter_mut() {
                    *p = *p / s;
                }
                loss = loss + weights[i] * (s.ln() + mx - row[t]);
            }
            Ok((
                vec![],
                vec![loss / weight_sum],
                Op::CrossEntropy {
                    logits: self.id,
                    probs,
                    targets: targets.to_vec(),
                    weights: weights.clone(),
                    weight_sum,
                },
            ))
        })
    }

    /// Reverse sweep from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grads`].
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.tape.nodes.borrow_mut();
        if nodes[self.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[self.id].shape
            )));
        }
        let n = self.id + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[self.id] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, i, g, &mut grads, &mut leaf_grads);
        }
        for (i, g) in leaf_grads {
            let slot = nodes[i].grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (s, v) in slot.iter_mut().zip(g) {
                *s = *s + v;
            }
        }
        Ok(())
    }
}

/// Returns the accumulation buffer for node `idx`, creating zeros on first use.
fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], idx: usize) -> Option<&'a mut Vec<T>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(grads[idx].get_or_insert_with(|| vec![T::zero(); nodes[idx].value.len()]))
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    i: usize,
    g: Vec<T>,
    grads: &mut [Option<Vec<T>>],
    leaf_grads: &mut Vec<(usize, Vec<T>)>,
) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => leaf_grads.push((i, g)),
        Op::Constant => {}
        Op::Add(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v);
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s - v);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(s) = slot(grads, nodes, *a) {
                for ((s, &gv), &y) in s.iter_mut().zip(&g).zip(bv) {
                    *s = *s + gv * y;
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for ((s, &gv), &x) in s.iter_mut().zip(&g).zip(av) {
                    *s = *s + gv * x;
                }
            }
        }
        Op::AddRow(a, r) => {
            let cols = nodes[*r].value.len();
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v);
            }
            if let Some(s) = slot(grads, nodes, *r) {
                for row in g.chunks(cols.max(1)) {
                    s.iter_mut().zip(row).for_each(|(s, &v)| *s = *s + v);
                }
            }
        }
        Op::MulRow(a, r) => {
            let cols = nodes[*r].value.len();
            let (av, rv) = (&nodes[*a].value, &nodes[*r].value);
            if let Some(s) = slot(grads, nodes, *a) {
                for (j, (s, &gv)) in s.iter_mut().zip(&g).enumerate() {
                    *s = *s + gv * rv[j % cols];
                }
            }
            if let Some(s) = slot(grads, nodes, *r) {
                for (j, (&gv, &x)) in g.iter().zip(av).enumerate() {
                    s[j % cols] = s[j % cols] + gv * x;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v * *k);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(&g).for_each(|(s, &v)| *s = *s + v);
            }
        }
        Op::MatMul(a, b) => {
            let (n, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let m = nodes[*b].shape[1];
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(s) = slot(grads, nodes, *a) {
                // dA = G · Bᵀ
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        s[r * k + p] = s[r * k + p] + dot;
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                // dB = Aᵀ · G
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let a_rp = av[r * k + p];
                        if a_rp == T::zero() {
                            continue;
                        }
                        for (sv, &gv) in s[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *sv = *sv + a_rp * gv;
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..r {
                    for j in 0..c {
                        s[i * c + j] = s[i * c + j] + g[j * r + i];
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let y = &node.value;
            let (_, cols) = rows_cols(&node.shape);
            if let Some(s) = slot(grads, nodes, *a) {
                for ((srow, grow), yrow) in s
                    .chunks_mut(cols.max(1))
                    .zip(g.chunks(cols.max(1)))
                    .zip(y.chunks(cols.max(1)))
                {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((sv, &gv), &yv) in srow.iter_mut().zip(grow).zip(yrow) {
                        *sv = *sv + yv * (gv - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, rstd } => {
            let y = &node.value;
            let (_, cols) = rows_cols(&node.shape);
            let nf = T::of(cols as f64);
            if let Some(s) = slot(grads, nodes, *x) {
                for (r, &rs) in rstd.iter().enumerate() {
                    let grow = &g[r * cols..(r + 1) * cols];
                    let yrow = &y[r * cols..(r + 1) * cols];
                    let gmean = grow.iter().copied().sum::<T>() / nf;
                    let gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / nf;
                    for ((sv, &gv), &yv) in s[r * cols..(r + 1) * cols].iter_mut().zip(grow).zip(yrow) {
                        *sv = *sv + rs * (gv - gmean - yv * gy);
                    }
                }
            }
        }
        Op::Relu(a) => {
            let xv = &nodes[*a].value;
            if let Some(s) = slot(grads, nodes, *a) {
                for ((sv, &gv), &x) in s.iter_mut().zip(&g).zip(xv) {
                    if x > T::zero() {
                        *sv = *sv + gv;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let xv = &nodes[*a].value;
            if let Some(s) = slot(grads, nodes, *a) {
                for ((sv, &gv), &x) in s.iter_mut().zip(&g).zip(xv) {
                    *sv = *sv + gv * gelu(x).1;
                }
            }
        }
        Op::Conv1d { x, w, stride, pad } => {
            let (len, cin) = (nodes[*x].shape[0], nodes[*x].shape[1]);
            let (k, cout) = (nodes[*w].shape[0], nodes[*w].shape[2]);
            let lout = node.shape[0];
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            if let Some(s) = slot(grads, nodes, *x) {
                for t in 0..lout {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - *pad as isize;
                        if pos < 0 || pos as usize >= len {
                            continue;
                        }
                        let p = pos as usize;
                        for c in 0..cin {
                            let wrow = &wv[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                            let dot: T = wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                            s[p * cin + c] = s[p * cin + c] + dot;
                        }
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *w) {
                for t in 0..lout {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - *pad as isize;
                        if pos < 0 || pos as usize >= len {
                            continue;
                        }
                        let p = pos as usize;
                        for c in 0..cin {
                            let xval = xv[p * cin + c];
                            if xval == T::zero() {
                                continue;
                            }
                            let srow = &mut s[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                            for (sv, &gv) in srow.iter_mut().zip(grow) {
                                *sv = *sv + xval * gv;
                            }
                        }
                    }
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (&src, &gv) in argmax.iter().zip(&g) {
                    s[src] = s[src] + gv;
                }
            }
        }
        Op::Embedding { table, idx } => {
            let d = nodes[*table].shape[1];
            if let Some(s) = slot(grads, nodes, *table) {
                for (r, &row) in idx.iter().enumerate() {
                    for (sv, &gv) in s[row * d..(row + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *sv = *sv + gv;
                    }
                }
            }
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            for &p in ids {
                let len = nodes[p].value.len();
                if let Some(s) = slot(grads, nodes, p) {
                    s.iter_mut().zip(&g[off..off + len]).for_each(|(s, &v)| *s = *s + v);
                }
                off += len;
            }
        }
        Op::ConcatCols(ids) => {
            let rows = node.shape[0];
            let cols = node.shape[1];
            let mut start = 0;
            for &p in ids {
                let w = nodes[p].shape[1];
                if let Some(s) = slot(grads, nodes, p) {
                    for r in 0..rows {
                        for j in 0..w {
                            s[r * w + j] = s[r * w + j] + g[r * cols + start + j];
                        }
                    }
                }
                start += w;
            }
        }
        Op::SliceRows { x, start } => {
            let c = nodes[*x].shape[1];
            if let Some(s) = slot(grads, nodes, *x) {
                for (sv, &gv) in s[start * c..start * c + g.len()].iter_mut().zip(&g) {
                    *sv = *sv + gv;
                }
            }
        }
        Op::SliceCols { x, start } => {
            let c = nodes[*x].shape[1];
            let (r, w) = (node.shape[0], node.shape[1]);
            if let Some(s) = slot(grads, nodes, *x) {
                for i in 0..r {
                    for j in 0..w {
                        s[i * c + start + j] = s[i * c + start + j] + g[i * w + j];
                    }
                }
            }
        }
        Op::RepeatRows { x, factor } => {
            let c = nodes[*x].shape[1];
            if let Some(s) = slot(grads, nodes, *x) {
                for (orow, grow) in g.chunks(c.max(1)).enumerate() {
                    let src = orow / factor;
                    for (sv, &gv) in s[src * c..(src + 1) * c].iter_mut().zip(grow) {
                        *sv = *sv + gv;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().for_each(|s| *s = *s + g[0]);
            }
        }
        Op::Mean(a) => {
            let n = T::of(nodes[*a].value.len() as f64);
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().for_each(|s| *s = *s + g[0] / n);
            }
        }
        Op::CrossEntropy {
            logits,
            probs,
            targets,
            weights,
            weight_sum,
        } => {
            let k = nodes[*logits].shape[1];
            if let Some(s) = slot(grads, nodes, *logits) {
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let coef = g[0] * w / *weight_sum;
                    for j in 0..k {
                        let ind = if j == t { T::one() } else { T::zero() };
                        s[r * k + j] = s[r * k + j] + coef * (probs[r * k + j] - ind);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(tape: &Tape<f64>, shape: &[usize], v: &[f64]) -> Tensor<f64> {
        tape.leaf(shape, v.to_vec(), true).unwrap()
    }

    #[test]
    fn stop_gradient_blocks_everything() {
        let tape = Tape::<f64>::new();
        let x = t(&tape, &[3], &[1.0, 2.0, 3.0]);
        let loss = x.stop_gradient().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad(), None);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = t(&tape, &[3], &[1.0, 2.0, 3.0]);
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn one_factor_detached() {
        let tape = Tape::<f64>::new();
        let x = t(&tape, &[3], &[1.0, 2.0, 3.0]);
        x.mul(&x.stop_gradient()).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::<f64>::new();
        let x = t(&tape, &[2], &[1.0, -1.0]);
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        tape.zero_grads();
        assert_eq!(x.grad(), None);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = t(&tape, &[2], &[1.0, 2.0]);
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(&[1, 2], vec![0.0, 0.0], false).unwrap();
        assert_eq!(x.softmax().unwrap().value(), vec![0.5, 0.5]);
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let tape = Tape::<f32>::new();
        let a = tape.zeros(&[2, 3]);
        let b = tape.zeros(&[2, 3]);
        match a.matmul(&b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        assert!(a.add(&tape.zeros(&[3, 2])).is_err());
    }

    #[test]
    fn mask_logit_underflows_to_zero() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(&[1, 3], vec![0.3, MASK_LOGIT as f32, 1.2], false).unwrap();
        let p = x.softmax().unwrap().value();
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn max_pool_keeps_block_max() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(&[4, 1], vec![1.0, 3.0, -2.0, 0.5], false).unwrap();
        assert_eq!(x.max_pool(2).unwrap().value(), vec![3.0, 0.5]);
    }

    #[test]
    fn conv_output_length() {
        let tape = Tape::<f32>::new();
        let x = tape.zeros(&[32, 4]);
        let w = tape.zeros(&[5, 4, 6]);
        assert_eq!(x.conv1d(&w, 1, 2).unwrap().shape(), vec![32, 6]);
        assert_eq!(x.conv1d(&w, 2, 2).unwrap().shape(), vec![16, 6]);
    }
}
