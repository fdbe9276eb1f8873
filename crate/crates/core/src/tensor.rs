//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value. Operations on tensors that require
//! gradients record their inputs, so calling [`Tensor::backward`] on a scalar
//! result walks the recorded graph and accumulates `d loss / d tensor` into
//! every tracked ancestor. Operations on untracked inputs record nothing.
//!
//! Every operation checks that its output is finite; a NaN or infinity is
//! reported as [`TensorError::NonFinite`] instead of being stored.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis or range out of bounds for shape {shape:?}")]
    OutOfBounds { op: &'static str, shape: Vec<usize> },
    #[error("fully masked attention row")]
    FullyMaskedRow,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid mask entry {0}: masks hold only 0 or -inf")]
    InvalidMask(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

struct GradFn {
    parents: Vec<Tensor>,
    op: Op,
}

enum Op {
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddRow,
    MatMul { m: usize, k: usize, n: usize },
    Transpose { rows: usize, cols: usize },
    Softmax { row: usize },
    Sum,
    Mean,
    Square,
    Concat { outer: usize, inner: usize, extents: Vec<usize> },
    Narrow { outer: usize, inner: usize, extent: usize, start: usize },
    LayerNorm { row: usize, inv_std: Vec<f64> },
    Silu,
    Sigmoid,
    Ln,
    Clamp { lo: f64, hi: f64 },
    Reshape,
}

// Long rollouts build deep parent chains; unlink them iteratively so dropping
// a loss does not recurse once per graph node.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = match self.grad_fn.take() {
            Some(f) => f.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(f) = node.grad_fn.take() {
                    stack.extend(f.parents);
                }
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality: same shape and bit-for-bit equal data.
    fn eq(&self, other: &Self) -> bool {
        self.0.shape == other.0.shape
            && self
                .0
                .data
                .iter()
                .zip(&other.0.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != len
    {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// A leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.requires_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "Tensor::full with non-finite value");
        let len = shape.iter().product();
        check_shape(shape, len).expect("Tensor::full with empty extent");
        Self::leaf(shape.to_vec(), vec![value; len], false)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[1], vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::leaf(vec![n, n], data, false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    fn from_op(
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        op: Op,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let grad_fn = requires_grad.then(|| GradFn { parents, op });
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        })))
    }

    /// A fresh tracked leaf with the same values.
    pub fn requires_grad(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true)
    }

    /// A fresh untracked leaf with the same values.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            }),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect()
    }

    fn unary(&self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Self::from_op(name, self.shape().to_vec(), data, vec![self.clone()], op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.zip_map(other, |a, b| a + b);
        Self::from_op("add", self.shape().to_vec(), data, vec![self.clone(), other.clone()], Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.zip_map(other, |a, b| a - b);
        Self::from_op("sub", self.shape().to_vec(), data, vec![self.clone(), other.clone()], Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self.zip_map(other, |a, b| a * b);
        Self::from_op("mul", self.shape().to_vec(), data, vec![self.clone(), other.clone()], Op::Mul)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.unary("scale", Op::Scale(factor), |v| v * factor)
    }

    /// Adds a vector of the last-axis extent to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().expect("non-empty shape");
        if row.numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let r = row.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % n])
            .collect();
        Self::from_op("add_row", self.shape().to_vec(), data, vec![self.clone(), row.clone()], Op::AddRow)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || TensorError::Shape {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (m, k) = self.dims2("matmul").map_err(|_| mismatch())?;
        let (k2, n) = other.dims2("matmul").map_err(|_| mismatch())?;
        if k != k2 {
            return Err(mismatch());
        }
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Self::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Op::MatMul { m, k, n },
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = self.dims2("transpose")?;
        let data = transpose_raw(self.data(), rows, cols);
        Self::from_op(
            "transpose",
            vec![cols, rows],
            data,
            vec![self.clone()],
            Op::Transpose { rows, cols },
        )
    }

    /// Softmax over the last axis where `mask` allows; masked entries are 0.
    pub fn masked_softmax(&self, mask: &Mask) -> Result<Tensor> {
        if mask.shape != self.shape() {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: self.shape().to_vec(),
                rhs: mask.shape.clone(),
            });
        }
        self.softmax_impl(Some(&mask.allowed))
    }

    pub fn softmax(&self) -> Result<Tensor> {
        self.softmax_impl(None)
    }

    fn softmax_impl(&self, allowed: Option<&[bool]>) -> Result<Tensor> {
        let row = *self.shape().last().expect("non-empty shape");
        let mut out = vec![0.0; self.numel()];
        for (r, (x, y)) in self
            .data()
            .chunks(row)
            .zip(out.chunks_mut(row))
            .enumerate()
        {
            let ok = |j: usize| allowed.is_none_or(|a| a[r * row + j]);
            let max = (0..row)
                .filter(|&j| ok(j))
                .map(|j| x[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow);
            }
            let mut total = 0.0;
            for j in 0..row {
                if ok(j) {
                    y[j] = (x[j] - max).exp();
                    total += y[j];
                }
            }
            for v in y.iter_mut() {
                *v /= total;
            }
        }
        Self::from_op("softmax", self.shape().to_vec(), out, vec![self.clone()], Op::Softmax { row })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Self::from_op("sum", vec![1], vec![s], vec![self.clone()], Op::Sum)
    }

    pub fn mean(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        Self::from_op("mean", vec![1], vec![s / self.numel() as f64], vec![self.clone()], Op::Mean)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary("square", Op::Square, |v| v * v)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::OutOfBounds {
            op: "concat",
            shape: vec![],
        })?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::OutOfBounds {
                op: "concat",
                shape: first.shape().to_vec(),
            });
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut shape = first.shape().to_vec();
        shape[axis] = extents.iter().sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Self::from_op(
            "concat",
            shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            Op::Concat { outer, inner, extents },
        )
    }

    /// The sub-range `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::OutOfBounds {
                op: "narrow",
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Self::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Op::Narrow { outer, inner, extent, start },
        )
    }

    /// Normalizes each last-axis row to zero mean and unit variance.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let row = *self.shape().last().expect("non-empty shape");
        let mut out = vec![0.0; self.numel()];
        let mut inv_std = Vec::with_capacity(self.numel() / row);
        for (x, y) in self.data().chunks(row).zip(out.chunks_mut(row)) {
            let mean = x.iter().sum::<f64>() / row as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in y.iter_mut().zip(x) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Self::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Op::LayerNorm { row, inv_std },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Result<Tensor> {
        self.unary("silu", Op::Silu, |v| v * sigmoid(v))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary("sigmoid", Op::Sigmoid, sigmoid)
    }

    /// Natural logarithm; non-positive inputs fail as non-finite.
    pub fn ln(&self) -> Result<Tensor> {
        self.unary("ln", Op::Ln, f64::ln)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary("clamp", Op::Clamp { lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, self.numel())?;
        Self::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], Op::Reshape)
    }

    /// Accumulates `d self / d t` into every tracked ancestor `t`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.is_tracked() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.get(&t.0.id).cloned() else {
                continue;
            };
            if let Some(f) = &t.0.grad_fn {
                let parent_grads = f.op.backward(t, &f.parents, &g);
                for (p, pg) in f.parents.iter().zip(parent_grads) {
                    if !p.0.requires_grad {
                        continue;
                    }
                    match grads.get_mut(&p.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(p.0.id, pg);
                        }
                    }
                }
            }
        }
        for t in &order {
            if let Some(g) = grads.remove(&t.0.id) {
                let mut slot = t.0.grad.lock().expect("grad lock");
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for p in &f.parents {
                    if p.0.requires_grad && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl Op {
    fn backward(&self, out: &Tensor, parents: &[Tensor], g: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Op::Add => vec![g.to_vec(), g.to_vec()],
            Op::Sub => vec![g.to_vec(), g.iter().map(|v| -v).collect()],
            Op::Mul => {
                let (a, b) = (parents[0].data(), parents[1].data());
                vec![
                    g.iter().zip(b).map(|(g, b)| g * b).collect(),
                    g.iter().zip(a).map(|(g, a)| g * a).collect(),
                ]
            }
            Op::Scale(f) => vec![g.iter().map(|v| v * f).collect()],
            Op::AddRow => {
                let n = parents[1].numel();
                let mut gr = vec![0.0; n];
                for (i, v) in g.iter().enumerate() {
                    gr[i % n] += v;
                }
                vec![g.to_vec(), gr]
            }
            &Op::MatMul { m, k, n } => {
                let (a, b) = (parents[0].data(), parents[1].data());
                let bt = transpose_raw(b, k, n);
                let at = transpose_raw(a, m, k);
                vec![matmul_raw(g, &bt, m, n, k), matmul_raw(&at, g, k, m, n)]
            }
            &Op::Transpose { rows, cols } => vec![transpose_raw(g, cols, rows)],
            &Op::Softmax { row } => {
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), xr) in y.chunks(row).zip(g.chunks(row)).zip(gx.chunks_mut(row)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..row {
                        xr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![gx]
            }
            Op::Sum => vec![vec![g[0]; parents[0].numel()]],
            Op::Mean => {
                let n = parents[0].numel();
                vec![vec![g[0] / n as f64; n]]
            }
            Op::Square => vec![g
                .iter()
                .zip(parents[0].data())
                .map(|(g, x)| 2.0 * g * x)
                .collect()],
            Op::Concat { outer, inner, extents } => {
                let total: usize = extents.iter().sum();
                let mut out_grads: Vec<Vec<f64>> = extents
                    .iter()
                    .map(|e| Vec::with_capacity(outer * e * inner))
                    .collect();
                for o in 0..*outer {
                    let mut offset = o * total * inner;
                    for (pg, e) in out_grads.iter_mut().zip(extents) {
                        pg.extend_from_slice(&g[offset..offset + e * inner]);
                        offset += e * inner;
                    }
                }
                out_grads
            }
            &Op::Narrow { outer, inner, extent, start } => {
                let len = g.len() / (outer * inner);
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![gx]
            }
            Op::LayerNorm { row, inv_std } => {
                let xhat = out.data();
                let n = *row as f64;
                let mut gx = vec![0.0; xhat.len()];
                for (r, ((xh, gr), dst)) in xhat
                    .chunks(*row)
                    .zip(g.chunks(*row))
                    .zip(gx.chunks_mut(*row))
                    .enumerate()
                {
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gx = gr.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..*row {
                        dst[j] = inv_std[r] * (gr[j] - mean_g - xh[j] * mean_gx);
                    }
                }
                vec![gx]
            }
            Op::Silu => vec![g
                .iter()
                .zip(parents[0].data())
                .map(|(g, &x)| {
                    let s = sigmoid(x);
                    g * (s + x * s * (1.0 - s))
                })
                .collect()],
            Op::Sigmoid => vec![g
                .iter()
                .zip(out.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect()],
            Op::Ln => vec![g.iter().zip(parents[0].data()).map(|(g, x)| g / x).collect()],
            &Op::Clamp { lo, hi } => vec![g
                .iter()
                .zip(parents[0].data())
                .map(|(g, &x)| if x < lo || x > hi { 0.0 } else { *g })
                .collect()],
            Op::Reshape => vec![g.to_vec()],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Which positions of a logits tensor may receive attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    allowed: Vec<bool>,
}

impl Mask {
    /// Builds a mask from additive values, each exactly `0` or `-inf`.
    pub fn from_additive(shape: &[usize], values: &[f64]) -> Result<Self> {
        check_shape(shape, values.len())?;
        let allowed = values
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(true)
                } else if v == f64::NEG_INFINITY {
                    Ok(false)
                } else {
                    Err(TensorError::InvalidMask(v))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: shape.to_vec(),
            allowed,
        })
    }

    pub fn from_fn(shape: &[usize], f: impl Fn(&[usize]) -> bool) -> Self {
        let len = shape.iter().product();
        check_shape(shape, len).expect("mask shape");
        let mut idx = vec![0usize; shape.len()];
        let mut allowed = Vec::with_capacity(len);
        for _ in 0..len {
            allowed.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            allowed,
        }
    }

    pub fn all(shape: &[usize]) -> Self {
        Self::from_fn(shape, |_| true)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_allowed(&self, flat: usize) -> bool {
        self.allowed[flat]
    }
}

/// `dot(a, b) / (|a| |b|)` for two vectors of equal length.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TensorError::Shape {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let i = Tensor::identity(2);
        assert_eq!(i.matmul(&i).unwrap(), Tensor::identity(2));
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[0.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[3, 2]);
        let err = a.matmul(&Tensor::zeros(&[3, 2])).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![3, 2],
                rhs: vec![3, 2]
            }
        );
        assert!(err.to_string().contains("[3, 2]"));
    }

    #[test]
    fn masked_softmax_examples() {
        let z = t(&[2], &[0.0, 0.0]);
        let open = Mask::from_additive(&[2], &[0.0, 0.0]).unwrap();
        assert_eq!(z.masked_softmax(&open).unwrap().data(), &[0.5, 0.5]);
        let one = Mask::from_additive(&[2], &[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(z.masked_softmax(&one).unwrap().data(), &[1.0, 0.0]);
        let y = t(&[2], &[2f64.ln(), 0.0]).masked_softmax(&open).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let m = Mask::from_additive(&[1, 2], &[f64::NEG_INFINITY; 2]).unwrap();
        let err = Tensor::zeros(&[1, 2]).masked_softmax(&m).unwrap_err();
        assert_eq!(err.to_string(), "fully masked attention row");
    }

    #[test]
    fn mask_rejects_other_values() {
        assert!(matches!(
            Mask::from_additive(&[1], &[-1.0]),
            Err(TensorError::InvalidMask(_))
        ));
    }

    #[test]
    fn backward_examples() {
        let x = Tensor::param(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        x.square().unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(x.backward(), Err(TensorError::NonScalar(vec![2])));
    }

    #[test]
    fn intermediate_nodes_receive_gradients() {
        let x = Tensor::param(&[2], vec![1.0, 3.0]).unwrap();
        let y = x.scale(2.0).unwrap();
        y.sum().unwrap().backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn untracked_ops_record_nothing() {
        let a = Tensor::full(&[2, 2], 1.0);
        let b = a.matmul(&a).unwrap();
        assert!(!b.is_tracked());
        assert!(b.0.grad_fn.is_none());
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let x = t(&[1], &[-1.0]);
        assert_eq!(x.ln().unwrap_err(), TensorError::NonFinite { op: "ln" });
        assert!(Tensor::new(&[1], vec![f64::NAN]).is_err());
        let big = t(&[1], &[1e300]);
        assert!(big.mul(&big).is_err());
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
    }

    #[test]
    fn cosine_similarity_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(TensorError::ZeroNorm)
        );
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.narrow(1, 0, 2).unwrap(), a);
        assert_eq!(c.narrow(1, 2, 1).unwrap(), b);
        let r = Tensor::concat(&[&a, &a], 0).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
    }

    #[test]
    fn deep_chains_drop_without_overflow() {
        let x = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.scale(1.0).unwrap();
        }
        drop(y);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = RandomSource::new(3);
        for _ in 0..50 {
            let data: Vec<f64> = (0..12).map(|_| 5.0 * rng.normal()).collect();
            let mask = Mask::from_fn(&[3, 4], |i| i[1] <= i[0] + 1);
            let y = t(&[3, 4], &data).masked_softmax(&mask).unwrap();
            for (r, row) in y.data().chunks(4).enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                for (c, v) in row.iter().enumerate() {
                    assert!(*v >= 0.0);
                    if c > r + 1 {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }
}
