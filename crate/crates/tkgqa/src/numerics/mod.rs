//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Tensors are double-precision, row-major, rank 1 or 2, and live on a
//! [`Tape`] that records every operation together with its local gradient
//! rule. [`Tensor::backward`] replays the tape in reverse and accumulates
//! gradients into every `requires_grad` leaf.
//!
//! A tape and its tensors are confined to one thread; distinct tapes may
//! run in parallel. There is no broadcasting beyond scalar-with-tensor.

mod gradcheck;

pub use gradcheck::{grad_check, ParamSpec};

use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Mask sentinel honored by `softmax`: entries at −∞ map to exactly 0.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    MulScalarTensor { x: NodeId, s: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Transpose(NodeId),
    Softmax { x: NodeId, axis: usize },
    LogSoftmax(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, start: usize },
    Gather { x: NodeId, indices: Vec<usize> },
    SelectRows { x: NodeId, indices: Vec<usize> },
    ScatterLse { x: NodeId, positions: Vec<(usize, usize)>, n: usize },
    Reshape(NodeId),
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Records operations; owns all tensor storage.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: NodeId,
}

impl Tensor {
    /// The tape this tensor is recorded on.
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("values", &self.values())
            .finish()
    }
}


fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), values.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Record an input tensor. `requires_grad` leaves receive gradients
    /// from `backward`.
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(NumericsError::Contract(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        if numel(shape) != values.len() {
            return Err(NumericsError::Contract(format!(
                "shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, requires_grad, Op::Leaf))
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], false, Op::Leaf)
    }

    pub fn ones(&self, shape: &[usize]) -> Tensor {
        self.push(shape.to_vec(), vec![1.0; numel(shape)], false, Op::Leaf)
    }

    pub fn eye(&self, n: usize) -> Tensor {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        self.push(vec![n, n], v, false, Op::Leaf)
    }

    /// Concatenate along `axis`. Rank-1 tensors concat along axis 0;
    /// rank-2 along axis 0 (stack rows) or 1 (widen rows).
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::Contract("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        let rank = first.len();
        if axis >= rank {
            return Err(NumericsError::Contract(format!(
                "concat axis {axis} out of range for rank {rank}"
            )));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != rank {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s,
                });
            }
            for d in 0..rank {
                if d != axis && s[d] != first[d] {
                    return Err(NumericsError::ShapeMismatch {
                        op: "concat",
                        lhs: first.clone(),
                        rhs: s,
                    });
                }
            }
        }
        let requires = parts.iter().any(|p| p.requires_grad());
        let (shape, values) = if rank == 1 {
            let mut v = Vec::new();
            for p in parts {
                v.extend(p.values());
            }
            (vec![v.len()], v)
        } else if axis == 0 {
            let cols = first[1];
            let mut v = Vec::new();
            let mut rows = 0;
            for p in parts {
                rows += p.shape()[0];
                v.extend(p.values());
            }
            (vec![rows, cols], v)
        } else {
            let rows = first[0];
            let total_cols: usize = parts.iter().map(|p| p.shape()[1]).sum();
            let mut v = vec![0.0; rows * total_cols];
            let mut off = 0;
            for p in parts {
                let pv = p.values();
                let pc = p.shape()[1];
                for r in 0..rows {
                    v[r * total_cols + off..r * total_cols + off + pc]
                        .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
                }
                off += pc;
            }
            (vec![rows, total_cols], v)
        };
        Ok(self.push(
            shape,
            values,
            requires,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].values.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Gradient buffer populated by `backward`, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].values.len()
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        debug_assert_eq!(n.values.len(), 1);
        n.values[0]
    }

    fn unary(&self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Tensor {
        self.tape.push(shape, values, self.requires_grad(), op)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.values();
        let b = other.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * b[p * n + j];
                }
            }
        }
        let req = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(vec![m, n], out, req, Op::Matmul(self.id, other.id)))
    }

    fn zip(&self, other: &Tensor, name: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok((self.values(), other.values()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.zip(other, "add")?;
        let v = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(self.shape(), v, req, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.zip(other, "sub")?;
        let v = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(self.shape(), v, req, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.zip(other, "mul")?;
        let v = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let req = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(self.shape(), v, req, Op::Mul(self.id, other.id)))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let v = self.values().iter().map(|x| x + c).collect();
        self.unary(self.shape(), v, Op::AddScalar(self.id))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let v = self.values().iter().map(|x| x * c).collect();
        self.unary(self.shape(), v, Op::Scale(self.id, c))
    }

    /// Multiply by a learnable scalar tensor (the one permitted broadcast).
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "mul_scalar_tensor expects a scalar, got shape {:?}",
                s.shape()
            )));
        }
        let sv = s.item();
        let v = self.values().iter().map(|x| x * sv).collect();
        let req = self.requires_grad() || s.requires_grad();
        Ok(self.tape.push(
            self.shape(),
            v,
            req,
            Op::MulScalarTensor { x: self.id, s: s.id },
        ))
    }

    pub fn relu(&self) -> Tensor {
        let v = self.values().iter().map(|x| x.max(0.0)).collect();
        self.unary(self.shape(), v, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Tensor {
        let v = self
            .values()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.unary(self.shape(), v, Op::Sigmoid(self.id))
    }

    pub fn log(&self) -> Result<Tensor> {
        let vals = self.values();
        if let Some(bad) = vals.iter().find(|x| **x <= 0.0) {
            return Err(NumericsError::Numeric(format!(
                "log of non-positive value {bad}"
            )));
        }
        let v = vals.iter().map(|x| x.ln()).collect();
        Ok(self.unary(self.shape(), v, Op::Log(self.id)))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.values().iter().sum();
        self.unary(vec![1], vec![s], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Tensor {
        let vals = self.values();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        self.unary(vec![1], vec![m], Op::Mean(self.id))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(NumericsError::Contract(format!(
                "transpose expects rank 2, got {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let a = self.values();
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = a[i * c + j];
            }
        }
        Ok(self.unary(vec![c, r], v, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(NumericsError::Contract(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        Ok(self.unary(shape.to_vec(), self.values(), Op::Reshape(self.id)))
    }

    /// Softmax along `axis`. Entries at −∞ map to exactly 0; a slice that
    /// is entirely −∞ maps to all-zero.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        let vals = self.values();
        if vals.iter().any(|x| x.is_nan()) {
            return Err(NumericsError::Numeric("softmax of NaN input".into()));
        }
        if axis >= shape.len() {
            return Err(NumericsError::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let mut out = vec![0.0; vals.len()];
        let (slices, len, stride) = slice_layout(&shape, axis);
        for s in 0..slices {
            let base = slice_base(&shape, axis, s);
            let mut mx = NEG_INF;
            for i in 0..len {
                mx = mx.max(vals[base + i * stride]);
            }
            if mx == NEG_INF {
                continue; // fully masked slice stays all-zero
            }
            let mut z = 0.0;
            for i in 0..len {
                let e = (vals[base + i * stride] - mx).exp();
                out[base + i * stride] = e;
                z += e;
            }
            for i in 0..len {
                out[base + i * stride] /= z;
            }
        }
        Ok(self.unary(shape, out, Op::Softmax { x: self.id, axis }))
    }

    /// Numerically stable log-softmax over a rank-1 tensor.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "log_softmax expects rank 1, got {shape:?}"
            )));
        }
        let vals = self.values();
        if vals.iter().any(|x| x.is_nan()) {
            return Err(NumericsError::Numeric("log_softmax of NaN input".into()));
        }
        let mx = vals.iter().cloned().fold(NEG_INF, f64::max);
        let z: f64 = vals.iter().map(|x| (x - mx).exp()).sum();
        let lse = mx + z.ln();
        let out = vals.iter().map(|x| x - lse).collect();
        Ok(self.unary(shape, out, Op::LogSoftmax(self.id)))
    }

    /// Contiguous sub-vector of a rank-1 tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 || start + len > shape[0] {
            return Err(NumericsError::Contract(format!(
                "slice [{start}, {start}+{len}) out of range for shape {shape:?}"
            )));
        }
        let v = self.values()[start..start + len].to_vec();
        Ok(self.unary(vec![len], v, Op::Slice { x: self.id, start }))
    }

    /// Gather elements of a rank-1 tensor at `indices`.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "gather expects rank 1, got {shape:?}"
            )));
        }
        let vals = self.values();
        let mut v = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= shape[0] {
                return Err(NumericsError::Contract(format!(
                    "gather index {i} out of range {}",
                    shape[0]
                )));
            }
            v.push(vals[i]);
        }
        Ok(self.unary(
            vec![indices.len()],
            v,
            Op::Gather {
                x: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Gather rows of a rank-2 tensor; gradients scatter-add back.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(NumericsError::Contract(format!(
                "select_rows expects rank 2, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let vals = self.values();
        let mut v = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(NumericsError::Contract(format!(
                    "select_rows index {i} out of range {rows}"
                )));
            }
            v.extend_from_slice(&vals[i * cols..(i + 1) * cols]);
        }
        Ok(self.unary(
            vec![indices.len(), cols],
            v,
            Op::SelectRows {
                x: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Scatter rank-1 logits into an n×n matrix. Repeated (i, j) positions
    /// are merged by log-sum-exp; untouched cells are −∞.
    pub fn scatter_lse(&self, positions: &[(usize, usize)], n: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 1 || shape[0] != positions.len() {
            return Err(NumericsError::Contract(format!(
                "scatter_lse: {} logits vs {} positions",
                shape.first().copied().unwrap_or(0),
                positions.len()
            )));
        }
        for &(i, j) in positions {
            if i >= n || j >= n {
                return Err(NumericsError::Contract(format!(
                    "scatter_lse position ({i}, {j}) out of range {n}"
                )));
            }
        }
        let vals = self.values();
        let mut mx = vec![NEG_INF; n * n];
        for (k, &(i, j)) in positions.iter().enumerate() {
            let c = i * n + j;
            mx[c] = mx[c].max(vals[k]);
        }
        let mut acc = vec![0.0; n * n];
        for (k, &(i, j)) in positions.iter().enumerate() {
            let c = i * n + j;
            acc[c] += (vals[k] - mx[c]).exp();
        }
        let mut out = vec![NEG_INF; n * n];
        for c in 0..n * n {
            if mx[c] > NEG_INF {
                out[c] = mx[c] + acc[c].ln();
            }
        }
        Ok(self.unary(
            vec![n, n],
            out,
            Op::ScatterLse {
                x: self.id,
                positions: positions.to_vec(),
                n,
            },
        ))
    }

    /// Reverse pass from a scalar loss; populates grads of every
    /// `requires_grad` tensor that contributed to it.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let mut inner = self.tape.inner.borrow_mut();
        // reset and allocate grads for the reachable requires_grad subgraph
        for node in inner.nodes.iter_mut() {
            node.grad = if node.requires_grad {
                Some(vec![0.0; node.values.len()])
            } else {
                None
            };
        }
        if !inner.nodes[self.id].requires_grad {
            return Ok(()); // loss does not depend on any parameter
        }
        if let Some(g) = inner.nodes[self.id].grad.as_mut() {
            g[0] = 1.0;
        }
        for id in (0..=self.id).rev() {
            if inner.nodes[id].grad.is_none() {
                continue;
            }
            let g = inner.nodes[id].grad.clone().unwrap();
            let op = inner.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, n) = (inner.nodes[id].shape[0], inner.nodes[id].shape[1]);
                    let k = inner.nodes[a].shape[1];
                    if inner.nodes[a].grad.is_some() {
                        let bv = inner.nodes[b].values.clone();
                        let ga = inner.nodes[a].grad.as_mut().unwrap();
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    if inner.nodes[b].grad.is_some() {
                        let av = inner.nodes[a].values.clone();
                        let gb = inner.nodes[b].grad.as_mut().unwrap();
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += av[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut inner, a, &g, |gv, _| gv);
                    accumulate(&mut inner, b, &g, |gv, _| gv);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut inner, a, &g, |gv, _| gv);
                    accumulate(&mut inner, b, &g, |gv, _| -gv);
                }
                Op::Mul(a, b) => {
                    let av = inner.nodes[a].values.clone();
                    let bv = inner.nodes[b].values.clone();
                    accumulate(&mut inner, a, &g, |gv, i| gv * bv[i]);
                    accumulate(&mut inner, b, &g, |gv, i| gv * av[i]);
                }
                Op::AddScalar(a) => accumulate(&mut inner, a, &g, |gv, _| gv),
                Op::Scale(a, c) => accumulate(&mut inner, a, &g, |gv, _| gv * c),
                Op::MulScalarTensor { x, s } => {
                    let sv = inner.nodes[s].values[0];
                    let xv = inner.nodes[x].values.clone();
                    accumulate(&mut inner, x, &g, |gv, _| gv * sv);
                    if let Some(gs) = inner.nodes[s].grad.as_mut() {
                        gs[0] += g.iter().zip(&xv).map(|(gv, x)| gv * x).sum::<f64>();
                    }
                }
                Op::Relu(a) => {
                    let xv = inner.nodes[a].values.clone();
                    accumulate(&mut inner, a, &g, |gv, i| if xv[i] > 0.0 { gv } else { 0.0 });
                }
                Op::Sigmoid(a) => {
                    let yv = inner.nodes[id].values.clone();
                    accumulate(&mut inner, a, &g, |gv, i| gv * yv[i] * (1.0 - yv[i]));
                }
                Op::Log(a) => {
                    let xv = inner.nodes[a].values.clone();
                    accumulate(&mut inner, a, &g, |gv, i| gv / xv[i]);
                }
                Op::Sum(a) => {
                    let gs = g[0];
                    let n = inner.nodes[a].values.len();
                    accumulate(&mut inner, a, &vec![gs; n], |gv, _| gv);
                }
                Op::Mean(a) => {
                    let n = inner.nodes[a].values.len();
                    let gs = g[0] / n as f64;
                    accumulate(&mut inner, a, &vec![gs; n], |gv, _| gv);
                }
                Op::Transpose(a) => {
                    if inner.nodes[a].grad.is_some() {
                        let (r, c) = (inner.nodes[id].shape[0], inner.nodes[id].shape[1]);
                        let ga = inner.nodes[a].grad.as_mut().unwrap();
                        for i in 0..r {
                            for j in 0..c {
                                ga[j * r + i] += g[i * c + j];
                            }
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    if inner.nodes[x].grad.is_some() {
                        let shape = inner.nodes[id].shape.clone();
                        let yv = inner.nodes[id].values.clone();
                        let gx = inner.nodes[x].grad.as_mut().unwrap();
                        let (slices, len, stride) = slice_layout(&shape, axis);
                        for s in 0..slices {
                            let base = slice_base(&shape, axis, s);
                            let mut dot = 0.0;
                            for i in 0..len {
                                let c = base + i * stride;
                                dot += g[c] * yv[c];
                            }
                            for i in 0..len {
                                let c = base + i * stride;
                                gx[c] += yv[c] * (g[c] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    if inner.nodes[x].grad.is_some() {
                        let yv = inner.nodes[id].values.clone();
                        let gsum: f64 = g.iter().sum();
                        let gx = inner.nodes[x].grad.as_mut().unwrap();
                        for (i, gv) in g.iter().enumerate() {
                            gx[i] += gv - yv[i].exp() * gsum;
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let out_shape = inner.nodes[id].shape.clone();
                    if out_shape.len() == 1 || axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let len = inner.nodes[p].values.len();
                            if let Some(gp) = inner.nodes[p].grad.as_mut() {
                                for i in 0..len {
                                    gp[i] += g[off + i];
                                }
                            }
                            off += len;
                        }
                    } else {
                        let rows = out_shape[0];
                        let total_cols = out_shape[1];
                        let mut off = 0;
                        for p in parts {
                            let pc = inner.nodes[p].shape[1];
                            if let Some(gp) = inner.nodes[p].grad.as_mut() {
                                for r in 0..rows {
                                    for c in 0..pc {
                                        gp[r * pc + c] += g[r * total_cols + off + c];
                                    }
                                }
                            }
                            off += pc;
                        }
                    }
                }
                Op::Slice { x, start } => {
                    if let Some(gx) = inner.nodes[x].grad.as_mut() {
                        for (i, gv) in g.iter().enumerate() {
                            gx[start + i] += gv;
                        }
                    }
                }
                Op::Gather { x, indices } => {
                    if let Some(gx) = inner.nodes[x].grad.as_mut() {
                        for (k, &i) in indices.iter().enumerate() {
                            gx[i] += g[k];
                        }
                    }
                }
                Op::SelectRows { x, indices } => {
                    if inner.nodes[x].grad.is_some() {
                        let cols = inner.nodes[x].shape[1];
                        let gx = inner.nodes[x].grad.as_mut().unwrap();
                        for (k, &i) in indices.iter().enumerate() {
                            for c in 0..cols {
                                gx[i * cols + c] += g[k * cols + c];
                            }
                        }
                    }
                }
                Op::ScatterLse { x, positions, n } => {
                    if inner.nodes[x].grad.is_some() {
                        let xv = inner.nodes[x].values.clone();
                        let out = inner.nodes[id].values.clone();
                        let gx = inner.nodes[x].grad.as_mut().unwrap();
                        for (k, &(i, j)) in positions.iter().enumerate() {
                            let c = i * n + j;
                            gx[k] += g[c] * (xv[k] - out[c]).exp();
                        }
                    }
                }
                Op::Reshape(a) => accumulate(&mut inner, a, &g, |gv, _| gv),
            }
        }
        Ok(())
    }
}

fn accumulate(inner: &mut TapeInner, target: NodeId, g: &[f64], f: impl Fn(f64, usize) -> f64) {
    if let Some(gt) = inner.nodes[target].grad.as_mut() {
        for (i, gv) in g.iter().enumerate() {
            gt[i] += f(*gv, i);
        }
    }
}

/// (number of slices, slice length, stride between slice elements)
fn slice_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    if shape.len() == 1 {
        (1, shape[0], 1)
    } else if axis == 1 {
        (shape[0], shape[1], 1)
    } else {
        (shape[1], shape[0], shape[1])
    }
}

fn slice_base(shape: &[usize], axis: usize, slice: usize) -> usize {
    if shape.len() == 1 {
        0
    } else if axis == 1 {
        slice * shape[1]
    } else {
        slice
    }
}
