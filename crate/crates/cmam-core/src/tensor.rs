//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] that is rebuilt for every training
//! step; [`Tape::backward`] replays the recording in reverse and accumulates
//! gradients with the chain rule. Values are 64-bit throughout so that
//! finite-difference gradient checks resolve cleanly.

use std::cell::{Ref, RefCell};
use std::fmt;

/// Norm guard for cosine similarity; keeps the score defined (and zero)
/// on all-zero rows.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    ShapeMismatch { op: &'static str, detail: String },
    Domain { op: &'static str, detail: String },
    NonScalarLoss { shape: Vec<usize> },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, detail } => {
                write!(f, "{op}: shape mismatch: {detail}")
            }
            TensorError::Domain { op, detail } => write!(f, "{op}: domain error: {detail}"),
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward: loss must be scalar, got shape {shape:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Elementwise nonlinearities with registered backward rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sigmoid,
    Tanh,
    Softplus,
    /// `1 + softplus(x)`, so the output is always >= 1.
    Oneplus,
    Relu,
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvMeta {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolMeta {
    pub ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub win: (usize, usize),
    pub stride: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `mul * x + add`, elementwise; only the slope matters going backward.
    Affine { x: Var, mul: f64 },
    /// Broadcast multiply of a tensor by a one-element node.
    ScaleBy { x: Var, s: Var },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatVec { w: Var, x: Var, m: usize, k: usize },
    /// Weighted sum of matrix rows: out[d] = sum_i w[i] * m[i][d].
    VecMat { w: Var, m: Var, n: usize, d: usize },
    Outer { u: Var, v: Var, n: usize, d: usize },
    Unary { x: Var, f: UnaryFn },
    SoftmaxRows { x: Var, cols: usize },
    LogSoftmaxRows { x: Var, cols: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    Sum { x: Var },
    Reshape { x: Var },
    /// Guarded cosine similarity between each row of `m` and the key `k`.
    CosineRows { m: Var, k: Var, n: usize, d: usize },
    Conv2d { input: Var, kernel: Var, bias: Var, meta: ConvMeta },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    /// Scalar with a precomputed vector-Jacobian product w.r.t. `x`
    /// (used for losses whose gradient has a closed form).
    OpaqueScalar { x: Var, vjp: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
}

/// Recording of one forward computation. Nodes are appended in evaluation
/// order, so every node's parents precede it and one reverse traversal
/// visits each node exactly once.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len() as u32;
        nodes.push(Node { shape, values, op });
        Var(id)
    }

    /// Records an input node. Whether it is a trainable parameter or a
    /// constant is the caller's bookkeeping; both get gradients.
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        if numel(shape) != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(shape), values.len()),
            });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf))
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.push(vec![1], vec![value], Op::Leaf)
    }

    pub fn zeros(&self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.idx()].shape.clone()
    }

    pub fn values(&self, v: Var) -> Ref<'_, [f64]> {
        Ref::map(self.nodes.borrow(), |n| n[v.idx()].values.as_slice())
    }

    pub fn value_vec(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.idx()].values.clone()
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.idx()].values.len(), 1);
        nodes[v.idx()].values[0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`. Zero-filled for
    /// nodes the loss does not reach.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let grads = self.grads.borrow();
        assert!(
            v.idx() < grads.len(),
            "grad queried before backward() populated the tape"
        );
        grads[v.idx()].clone()
    }

    // ---- arithmetic -----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let nodes = self.nodes.borrow();
        let sa = &nodes[a.idx()].shape;
        let sb = &nodes[b.idx()].shape;
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(sa.clone())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let values = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.idx()].values;
            let vb = &nodes[b.idx()].values;
            va.iter().zip(vb).map(|(x, y)| x + y).collect()
        };
        Ok(self.push(shape, values, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let values = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.idx()].values;
            let vb = &nodes[b.idx()].values;
            va.iter().zip(vb).map(|(x, y)| x - y).collect()
        };
        Ok(self.push(shape, values, Op::Sub(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let values = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.idx()].values;
            let vb = &nodes[b.idx()].values;
            va.iter().zip(vb).map(|(x, y)| x * y).collect()
        };
        Ok(self.push(shape, values, Op::Mul(a, b)))
    }

    /// `mul * x + add` elementwise; covers negation, `1 - x`, and constant
    /// scaling without extra nodes.
    pub fn affine(&self, x: Var, mul: f64, add: f64) -> Var {
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            (n.shape.clone(), n.values.iter().map(|v| mul * v + add).collect())
        };
        self.push(shape, values, Op::Affine { x, mul })
    }

    /// Multiplies every element of `x` by the one-element node `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Result<Var> {
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let sn = &nodes[s.idx()];
            if sn.values.len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "scale_by",
                    detail: format!("scale must be one element, got shape {:?}", sn.shape),
                });
            }
            let sv = sn.values[0];
            let xn = &nodes[x.idx()];
            (xn.shape.clone(), xn.values.iter().map(|v| sv * v).collect())
        };
        Ok(self.push(shape, values, Op::ScaleBy { x, s }))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = {
            let nodes = self.nodes.borrow();
            let sa = &nodes[a.idx()].shape;
            let sb = &nodes[b.idx()].shape;
            if sa.len() != 2 || sb.len() != 2 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("expected two matrices, got {sa:?} and {sb:?}"),
                });
            }
            if sa[1] != sb[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("inner extents differ: {}x{} times {}x{}", sa[0], sa[1], sb[0], sb[1]),
                });
            }
            (sa[0], sa[1], sb[1])
        };
        let values = {
            let nodes = self.nodes.borrow();
            let va = &nodes[a.idx()].values;
            let vb = &nodes[b.idx()].values;
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = va[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &vb[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
            out
        };
        Ok(self.push(vec![m, n], values, Op::MatMul { a, b, m, k, n }))
    }

    pub fn matvec(&self, w: Var, x: Var) -> Result<Var> {
        let (m, k) = {
            let nodes = self.nodes.borrow();
            let sw = &nodes[w.idx()].shape;
            let sx = &nodes[x.idx()].shape;
            if sw.len() != 2 || sx.len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "matvec",
                    detail: format!("expected matrix and vector, got {sw:?} and {sx:?}"),
                });
            }
            if sw[1] != sx[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "matvec",
                    detail: format!("matrix is {}x{} but vector has {}", sw[0], sw[1], sx[0]),
                });
            }
            (sw[0], sw[1])
        };
        let values = {
            let nodes = self.nodes.borrow();
            let vw = &nodes[w.idx()].values;
            let vx = &nodes[x.idx()].values;
            let mut out = vec![0.0; m];
            for i in 0..m {
                let row = &vw[i * k..(i + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += row[p] * vx[p];
                }
                out[i] = acc;
            }
            out
        };
        Ok(self.push(vec![m], values, Op::MatVec { w, x, m, k }))
    }

    /// Weighted sum of the rows of `m` with weights `w`.
    pub fn vecmat(&self, w: Var, m: Var) -> Result<Var> {
        let (n, d) = {
            let nodes = self.nodes.borrow();
            let sw = &nodes[w.idx()].shape;
            let sm = &nodes[m.idx()].shape;
            if sw.len() != 1 || sm.len() != 2 || sw[0] != sm[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "vecmat",
                    detail: format!("weights {sw:?} vs matrix {sm:?}"),
                });
            }
            (sm[0], sm[1])
        };
        let values = {
            let nodes = self.nodes.borrow();
            let vw = &nodes[w.idx()].values;
            let vm = &nodes[m.idx()].values;
            let mut out = vec![0.0; d];
            for i in 0..n {
                let wi = vw[i];
                if wi == 0.0 {
                    continue;
                }
                let row = &vm[i * d..(i + 1) * d];
                for j in 0..d {
                    out[j] += wi * row[j];
                }
            }
            out
        };
        Ok(self.push(vec![d], values, Op::VecMat { w, m, n, d }))
    }

    pub fn outer(&self, u: Var, v: Var) -> Result<Var> {
        let (n, d) = {
            let nodes = self.nodes.borrow();
            let su = &nodes[u.idx()].shape;
            let sv = &nodes[v.idx()].shape;
            if su.len() != 1 || sv.len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "outer",
                    detail: format!("expected two vectors, got {su:?} and {sv:?}"),
                });
            }
            (su[0], sv[0])
        };
        let values = {
            let nodes = self.nodes.borrow();
            let vu = &nodes[u.idx()].values;
            let vv = &nodes[v.idx()].values;
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    out[i * d + j] = vu[i] * vv[j];
                }
            }
            out
        };
        Ok(self.push(vec![n, d], values, Op::Outer { u, v, n, d }))
    }

    pub fn unary(&self, x: Var, f: UnaryFn) -> Result<Var> {
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            if f == UnaryFn::Log {
                if let Some(bad) = n.values.iter().find(|v| **v <= 0.0) {
                    return Err(TensorError::Domain {
                        op: "log",
                        detail: format!("input {bad} is not positive"),
                    });
                }
            }
            let values = n.values.iter().map(|&v| apply_unary(f, v)).collect();
            (n.shape.clone(), values)
        };
        Ok(self.push(shape, values, Op::Unary { x, f }))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, UnaryFn::Sigmoid).expect("sigmoid is total")
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, UnaryFn::Tanh).expect("tanh is total")
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, UnaryFn::Relu).expect("relu is total")
    }

    pub fn oneplus(&self, x: Var) -> Var {
        self.unary(x, UnaryFn::Oneplus).expect("oneplus is total")
    }

    fn rows_cols(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let nodes = self.nodes.borrow();
        let s = &nodes[x.idx()].shape;
        match s.len() {
            1 => Ok((1, s[0])),
            2 => Ok((s[0], s[1])),
            _ => Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected vector or matrix, got {s:?}"),
            }),
        }
    }

    /// Softmax over each row, computed with max subtraction. A rank-1 input
    /// is treated as a single row.
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols("softmax_rows", x)?;
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            let mut out = vec![0.0; n.values.len()];
            for r in 0..rows {
                let row = &n.values[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                let orow = &mut out[r * cols..(r + 1) * cols];
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = (v - m).exp();
                    z += *o;
                }
                for o in orow.iter_mut() {
                    *o /= z;
                }
            }
            (n.shape.clone(), out)
        };
        Ok(self.push(shape, values, Op::SoftmaxRows { x, cols }))
    }

    pub fn log_softmax_rows(&self, x: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols("log_softmax_rows", x)?;
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            let mut out = vec![0.0; n.values.len()];
            for r in 0..rows {
                let row = &n.values[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                let lse = m + z.ln();
                for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *o = v - lse;
                }
            }
            (n.shape.clone(), out)
        };
        Ok(self.push(shape, values, Op::LogSoftmaxRows { x, cols }))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: "no parts".into(),
            });
        }
        let (shape, values) = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].idx()].shape;
            let rank = first.len();
            if axis >= rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("axis {axis} out of range for rank {rank}"),
                });
            }
            let mut out_shape = first.clone();
            out_shape[axis] = 0;
            for p in parts {
                let s = &nodes[p.idx()].shape;
                if s.len() != rank {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        detail: format!("rank mismatch: {first:?} vs {s:?}"),
                    });
                }
                for (ax, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                    if ax != axis && a != b {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            detail: format!("extent mismatch on axis {ax}: {first:?} vs {s:?}"),
                        });
                    }
                }
                out_shape[axis] += s[axis];
            }
            let outer: usize = first[..axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let total_axis = out_shape[axis];
            let mut out = vec![0.0; outer * total_axis * inner];
            let mut offset = 0;
            for p in parts {
                let n = &nodes[p.idx()];
                let pa = n.shape[axis];
                for o in 0..outer {
                    let src = &n.values[o * pa * inner..(o + 1) * pa * inner];
                    let dst_start = (o * total_axis + offset) * inner;
                    out[dst_start..dst_start + pa * inner].copy_from_slice(src);
                }
                offset += pa;
            }
            (out_shape, out)
        };
        Ok(self.push(shape, values, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Contiguous slice of a rank-1 tensor.
    pub fn slice(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let values = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            if n.shape.len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "slice",
                    detail: format!("expected vector, got {:?}", n.shape),
                });
            }
            if start + len > n.values.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "slice",
                    detail: format!("{start}..{} out of range for length {}", start + len, n.values.len()),
                });
            }
            n.values[start..start + len].to_vec()
        };
        Ok(self.push(vec![len], values, Op::Slice { x, start }))
    }

    /// Picks flat indices out of `x` into a vector; duplicate indices are
    /// allowed and accumulate in the backward pass.
    pub fn gather(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let values = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            let total = n.values.len();
            if let Some(bad) = idx.iter().find(|i| **i >= total) {
                return Err(TensorError::ShapeMismatch {
                    op: "gather",
                    detail: format!("index {bad} out of range for {total} elements"),
                });
            }
            idx.iter().map(|&i| n.values[i]).collect::<Vec<_>>()
        };
        Ok(self.push(vec![idx.len()], values, Op::Gather { x, idx: idx.to_vec() }))
    }

    pub fn sum(&self, x: Var) -> Var {
        let total: f64 = self.nodes.borrow()[x.idx()].values.iter().sum();
        self.push(vec![1], vec![total], Op::Sum { x })
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let values = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            if numel(shape) != n.values.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    detail: format!("cannot view {:?} as {:?}", n.shape, shape),
                });
            }
            n.values.clone()
        };
        Ok(self.push(shape.to_vec(), values, Op::Reshape { x }))
    }

    /// Cosine similarity between each row of `m` and key `k`, with the
    /// denominator guarded by [`COSINE_EPS`] so zero rows score 0.
    pub fn cosine_rows(&self, m: Var, k: Var) -> Result<Var> {
        let (n, d) = {
            let nodes = self.nodes.borrow();
            let sm = &nodes[m.idx()].shape;
            let sk = &nodes[k.idx()].shape;
            if sm.len() != 2 || sk.len() != 1 || sm[1] != sk[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "cosine_rows",
                    detail: format!("matrix {sm:?} vs key {sk:?}"),
                });
            }
            (sm[0], sm[1])
        };
        let values = {
            let nodes = self.nodes.borrow();
            let vm = &nodes[m.idx()].values;
            let vk = &nodes[k.idx()].values;
            let nk = vk.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut out = vec![0.0; n];
            for i in 0..n {
                let row = &vm[i * d..(i + 1) * d];
                let mut dot = 0.0;
                let mut nn = 0.0;
                for j in 0..d {
                    dot += row[j] * vk[j];
                    nn += row[j] * row[j];
                }
                out[i] = dot / (nn.sqrt() * nk + COSINE_EPS);
            }
            out
        };
        Ok(self.push(vec![n], values, Op::CosineRows { m, k, n, d }))
    }

    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let meta = {
            let nodes = self.nodes.borrow();
            let si = &nodes[input.idx()].shape;
            let sk = &nodes[kernel.idx()].shape;
            let sb = &nodes[bias.idx()].shape;
            if si.len() != 3 || sk.len() != 4 {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("expected CxHxW input and OxIxKhxKw kernel, got {si:?} and {sk:?}"),
                });
            }
            if sk[1] != si[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("kernel expects {} input channels, image has {}", sk[1], si[0]),
                });
            }
            if sb.len() != 1 || sb[0] != sk[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias {sb:?} vs {} output channels", sk[0]),
                });
            }
            let (in_h, in_w) = (si[1], si[2]);
            let (kh, kw) = (sk[2], sk[3]);
            let padded_h = in_h + 2 * pad.0;
            let padded_w = in_w + 2 * pad.1;
            if padded_h < kh || padded_w < kw {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("kernel {kh}x{kw} exceeds padded input {padded_h}x{padded_w}"),
                });
            }
            let out_h = (padded_h - kh) / stride.0 + 1;
            let out_w = (padded_w - kw) / stride.1 + 1;
            if out_h == 0 || out_w == 0 {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: "non-positive output extents".into(),
                });
            }
            ConvMeta {
                in_ch: si[0],
                out_ch: sk[0],
                in_h,
                in_w,
                kh,
                kw,
                stride,
                pad,
                out_h,
                out_w,
            }
        };
        let values = {
            let nodes = self.nodes.borrow();
            conv2d_forward(
                &nodes[input.idx()].values,
                &nodes[kernel.idx()].values,
                &nodes[bias.idx()].values,
                &meta,
            )
        };
        Ok(self.push(
            vec![meta.out_ch, meta.out_h, meta.out_w],
            values,
            Op::Conv2d { input, kernel, bias, meta },
        ))
    }

    /// Per-window maximum with stride; windows that do not fit are
    /// truncated away. Ties resolve to the first element in scan order.
    pub fn maxpool2d(&self, x: Var, win: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (meta, argmax, values) = {
            let nodes = self.nodes.borrow();
            let s = &nodes[x.idx()].shape;
            if s.len() != 3 {
                return Err(TensorError::ShapeMismatch {
                    op: "maxpool2d",
                    detail: format!("expected CxHxW input, got {s:?}"),
                });
            }
            let (ch, in_h, in_w) = (s[0], s[1], s[2]);
            if win.0 > in_h || win.1 > in_w {
                return Err(TensorError::ShapeMismatch {
                    op: "maxpool2d",
                    detail: format!("window {}x{} larger than input {in_h}x{in_w}", win.0, win.1),
                });
            }
            let out_h = (in_h - win.0) / stride.0 + 1;
            let out_w = (in_w - win.1) / stride.1 + 1;
            let meta = PoolMeta { ch, in_h, in_w, win, stride, out_h, out_w };
            let v = &nodes[x.idx()].values;
            let mut out = vec![0.0; ch * out_h * out_w];
            let mut argmax = vec![0usize; ch * out_h * out_w];
            for c in 0..ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dy in 0..win.0 {
                            for dx in 0..win.1 {
                                let iy = oy * stride.0 + dy;
                                let ix = ox * stride.1 + dx;
                                let idx = c * in_h * in_w + iy * in_w + ix;
                                if v[idx] > best {
                                    best = v[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = c * out_h * out_w + oy * out_w + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
            (meta, argmax, out)
        };
        Ok(self.push(
            vec![meta.ch, meta.out_h, meta.out_w],
            values,
            Op::MaxPool2d { x, argmax },
        ))
    }

    /// Scalar node whose gradient w.r.t. `x` is the supplied vector. The
    /// caller is responsible for `vjp` being the true derivative; gradient
    /// checks in the test suites hold it to that.
    pub fn opaque_scalar(&self, x: Var, value: f64, vjp: Vec<f64>) -> Result<Var> {
        {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.idx()];
            if n.values.len() != vjp.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "opaque_scalar",
                    detail: format!("vjp has {} entries for {} inputs", vjp.len(), n.values.len()),
                });
            }
        }
        Ok(self.push(vec![1], vec![value], Op::OpaqueScalar { x, vjp }))
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates gradients of the scalar `loss` into every node of the
    /// tape. Nodes not on a path to the loss keep zero gradient.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.idx()].values.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: nodes[loss.idx()].shape.clone(),
            });
        }
        let mut grads: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        grads[loss.idx()][0] = 1.0;

        for i in (0..nodes.len()).rev() {
            let g = grads[i].clone();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.idx()], &g, 1.0);
                    accumulate(&mut grads[b.idx()], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.idx()], &g, 1.0);
                    accumulate(&mut grads[b.idx()], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let va = nodes[a.idx()].values.clone();
                    let vb = nodes[b.idx()].values.clone();
                    for (ga, (gi, vbi)) in grads[a.idx()].iter_mut().zip(g.iter().zip(&vb)) {
                        *ga += gi * vbi;
                    }
                    for (gb, (gi, vai)) in grads[b.idx()].iter_mut().zip(g.iter().zip(&va)) {
                        *gb += gi * vai;
                    }
                }
                Op::Affine { x, mul } => {
                    accumulate(&mut grads[x.idx()], &g, *mul);
                }
                Op::ScaleBy { x, s } => {
                    let sv = nodes[s.idx()].values[0];
                    let vx = &nodes[x.idx()].values;
                    let mut gs = 0.0;
                    for (gi, vxi) in g.iter().zip(vx) {
                        gs += gi * vxi;
                    }
                    accumulate(&mut grads[x.idx()], &g, sv);
                    grads[s.idx()][0] += gs;
                }
                Op::MatMul { a, b, m, k, n } => {
                    let va = &nodes[a.idx()].values;
                    let vb = &nodes[b.idx()].values;
                    // dA = g . B^T
                    {
                        let ga = &mut grads[a.idx()];
                        for i2 in 0..*m {
                            for p in 0..*k {
                                let mut acc = 0.0;
                                let grow = &g[i2 * n..(i2 + 1) * n];
                                let brow = &vb[p * n..(p + 1) * n];
                                for j in 0..*n {
                                    acc += grow[j] * brow[j];
                                }
                                ga[i2 * k + p] += acc;
                            }
                        }
                    }
                    // dB = A^T . g
                    {
                        let gb = &mut grads[b.idx()];
                        for p in 0..*k {
                            for i2 in 0..*m {
                                let aip = va[i2 * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let grow = &g[i2 * n..(i2 + 1) * n];
                                let brow = &mut gb[p * n..(p + 1) * n];
                                for j in 0..*n {
                                    brow[j] += aip * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::MatVec { w, x, m, k } => {
                    let vw = &nodes[w.idx()].values;
                    let vx = nodes[x.idx()].values.clone();
                    {
                        let gw = &mut grads[w.idx()];
                        for i2 in 0..*m {
                            let gi = g[i2];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i2 * k..(i2 + 1) * k];
                            for p in 0..*k {
                                row[p] += gi * vx[p];
                            }
                        }
                    }
                    {
                        let gx = &mut grads[x.idx()];
                        for i2 in 0..*m {
                            let gi = g[i2];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &vw[i2 * k..(i2 + 1) * k];
                            for p in 0..*k {
                                gx[p] += gi * row[p];
                            }
                        }
                    }
                }
                Op::VecMat { w, m, n, d } => {
                    let vw = nodes[w.idx()].values.clone();
                    let vm = &nodes[m.idx()].values;
                    {
                        let gw = &mut grads[w.idx()];
                        for i2 in 0..*n {
                            let row = &vm[i2 * d..(i2 + 1) * d];
                            let mut acc = 0.0;
                            for j in 0..*d {
                                acc += g[j] * row[j];
                            }
                            gw[i2] += acc;
                        }
                    }
                    {
                        let gm = &mut grads[m.idx()];
                        for i2 in 0..*n {
                            let wi = vw[i2];
                            if wi == 0.0 {
                                continue;
                            }
                            let row = &mut gm[i2 * d..(i2 + 1) * d];
                            for j in 0..*d {
                                row[j] += wi * g[j];
                            }
                        }
                    }
                }
                Op::Outer { u, v, n, d } => {
                    let vu = nodes[u.idx()].values.clone();
                    let vv = nodes[v.idx()].values.clone();
                    {
                        let gu = &mut grads[u.idx()];
                        for i2 in 0..*n {
                            let grow = &g[i2 * d..(i2 + 1) * d];
                            let mut acc = 0.0;
                            for j in 0..*d {
                                acc += grow[j] * vv[j];
                            }
                            gu[i2] += acc;
                        }
                    }
                    {
                        let gv = &mut grads[v.idx()];
                        for i2 in 0..*n {
                            let ui = vu[i2];
                            if ui == 0.0 {
                                continue;
                            }
                            let grow = &g[i2 * d..(i2 + 1) * d];
                            for j in 0..*d {
                                gv[j] += ui * grow[j];
                            }
                        }
                    }
                }
                Op::Unary { x, f } => {
                    let vx = &nodes[x.idx()].values;
                    let vy = &nodes[i].values;
                    let gx = &mut grads[x.idx()];
                    for j in 0..g.len() {
                        gx[j] += g[j] * unary_deriv(*f, vx[j], vy[j]);
                    }
                }
                Op::SoftmaxRows { x, cols } => {
                    let vy = &nodes[i].values;
                    let gx = &mut grads[x.idx()];
                    let rows = vy.len() / cols;
                    for r in 0..rows {
                        let y = &vy[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        let gxr = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..*cols {
                            gxr[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LogSoftmaxRows { x, cols } => {
                    let vy = &nodes[i].values;
                    let gx = &mut grads[x.idx()];
                    let rows = vy.len() / cols;
                    for r in 0..rows {
                        let y = &vy[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gsum: f64 = gr.iter().sum();
                        let gxr = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..*cols {
                            gxr[j] += gr[j] - y[j].exp() * gsum;
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let out_shape = &nodes[i].shape;
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[*axis + 1..].iter().product();
                    let total_axis = out_shape[*axis];
                    let mut offset = 0;
                    for p in parts {
                        let pa = nodes[p.idx()].shape[*axis];
                        let gp = &mut grads[p.idx()];
                        for o in 0..outer {
                            let src_start = (o * total_axis + offset) * inner;
                            let dst = &mut gp[o * pa * inner..(o + 1) * pa * inner];
                            for (d2, s2) in dst.iter_mut().zip(&g[src_start..src_start + pa * inner]) {
                                *d2 += s2;
                            }
                        }
                        offset += pa;
                    }
                }
                Op::Slice { x, start, .. } => {
                    let gx = &mut grads[x.idx()];
                    for (j, gj) in g.iter().enumerate() {
                        gx[start + j] += gj;
                    }
                }
                Op::Gather { x, idx } => {
                    let gx = &mut grads[x.idx()];
                    for (j, &src) in idx.iter().enumerate() {
                        gx[src] += g[j];
                    }
                }
                Op::Sum { x } => {
                    let g0 = g[0];
                    for v in grads[x.idx()].iter_mut() {
                        *v += g0;
                    }
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads[x.idx()], &g, 1.0);
                }
                Op::CosineRows { m, k, n, d } => {
                    let vm = &nodes[m.idx()].values;
                    let vk = &nodes[k.idx()].values;
                    let vy = &nodes[i].values;
                    let nk = vk.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let inv_nk = if nk > 0.0 { 1.0 / nk } else { 0.0 };
                    // Two passes so the borrows of grads[m] and grads[k] do
                    // not overlap.
                    {
                        let gm = &mut grads[m.idx()];
                        for i2 in 0..*n {
                            let gi = g[i2];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &vm[i2 * d..(i2 + 1) * d];
                            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let inv_nr = if nr > 0.0 { 1.0 / nr } else { 0.0 };
                            let den = nr * nk + COSINE_EPS;
                            let grow = &mut gm[i2 * d..(i2 + 1) * d];
                            for j in 0..*d {
                                grow[j] += gi * (vk[j] / den - vy[i2] * nk * row[j] * inv_nr / den);
                            }
                        }
                    }
                    {
                        let gk = &mut grads[k.idx()];
                        for i2 in 0..*n {
                            let gi = g[i2];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &vm[i2 * d..(i2 + 1) * d];
                            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let den = nr * nk + COSINE_EPS;
                            for j in 0..*d {
                                gk[j] += gi * (row[j] / den - vy[i2] * nr * vk[j] * inv_nk / den);
                            }
                        }
                    }
                }
                Op::Conv2d { input, kernel, bias, meta } => {
                    let vi = &nodes[input.idx()].values;
                    let vk = &nodes[kernel.idx()].values;
                    conv2d_backward_input(&mut grads[input.idx()], vk, &g, meta);
                    conv2d_backward_kernel(&mut grads[kernel.idx()], vi, &g, meta);
                    {
                        let gb = &mut grads[bias.idx()];
                        let plane = meta.out_h * meta.out_w;
                        for c in 0..meta.out_ch {
                            gb[c] += g[c * plane..(c + 1) * plane].iter().sum::<f64>();
                        }
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    let gx = &mut grads[x.idx()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                }
                Op::OpaqueScalar { x, vjp } => {
                    accumulate(&mut grads[x.idx()], vjp, g[0]);
                }
            }
        }

        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn apply_unary(f: UnaryFn, v: f64) -> f64 {
    match f {
        UnaryFn::Sigmoid => sigmoid(v),
        UnaryFn::Tanh => v.tanh(),
        UnaryFn::Softplus => softplus(v),
        UnaryFn::Oneplus => 1.0 + softplus(v),
        UnaryFn::Relu => v.max(0.0),
        UnaryFn::Exp => v.exp(),
        UnaryFn::Log => v.ln(),
    }
}

fn unary_deriv(f: UnaryFn, x: f64, y: f64) -> f64 {
    match f {
        UnaryFn::Sigmoid => y * (1.0 - y),
        UnaryFn::Tanh => 1.0 - y * y,
        UnaryFn::Softplus | UnaryFn::Oneplus => sigmoid(x),
        UnaryFn::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryFn::Exp => y,
        UnaryFn::Log => 1.0 / x,
    }
}

fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], m: &ConvMeta) -> Vec<f64> {
    let out_plane = m.out_h * m.out_w;
    let in_plane = m.in_h * m.in_w;
    let mut out = vec![0.0; m.out_ch * out_plane];
    for co in 0..m.out_ch {
        let dst = &mut out[co * out_plane..(co + 1) * out_plane];
        dst.fill(bias[co]);
        for ci in 0..m.in_ch {
            let src = &input[ci * in_plane..(ci + 1) * in_plane];
            for ky in 0..m.kh {
                for kx in 0..m.kw {
                    let w = kernel[((co * m.in_ch + ci) * m.kh + ky) * m.kw + kx];
                    if w == 0.0 {
                        continue;
                    }
                    for oy in 0..m.out_h {
                        let iy = (oy * m.stride.0 + ky) as isize - m.pad.0 as isize;
                        if iy < 0 || iy as usize >= m.in_h {
                            continue;
                        }
                        let iy = iy as usize;
                        // valid ox range so that ix stays in bounds
                        for ox in 0..m.out_w {
                            let ix = (ox * m.stride.1 + kx) as isize - m.pad.1 as isize;
                            if ix < 0 || ix as usize >= m.in_w {
                                continue;
                            }
                            dst[oy * m.out_w + ox] += w * src[iy * m.in_w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(gi: &mut [f64], kernel: &[f64], g: &[f64], m: &ConvMeta) {
    let out_plane = m.out_h * m.out_w;
    let in_plane = m.in_h * m.in_w;
    for co in 0..m.out_ch {
        let gout = &g[co * out_plane..(co + 1) * out_plane];
        for ci in 0..m.in_ch {
            let dst = &mut gi[ci * in_plane..(ci + 1) * in_plane];
            for ky in 0..m.kh {
                for kx in 0..m.kw {
                    let w = kernel[((co * m.in_ch + ci) * m.kh + ky) * m.kw + kx];
                    if w == 0.0 {
                        continue;
                    }
                    for oy in 0..m.out_h {
                        let iy = (oy * m.stride.0 + ky) as isize - m.pad.0 as isize;
                        if iy < 0 || iy as usize >= m.in_h {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..m.out_w {
                            let ix = (ox * m.stride.1 + kx) as isize - m.pad.1 as isize;
                            if ix < 0 || ix as usize >= m.in_w {
                                continue;
                            }
                            dst[iy * m.in_w + ix as usize] += w * gout[oy * m.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernel(gk: &mut [f64], input: &[f64], g: &[f64], m: &ConvMeta) {
    let out_plane = m.out_h * m.out_w;
    let in_plane = m.in_h * m.in_w;
    for co in 0..m.out_ch {
        let gout = &g[co * out_plane..(co + 1) * out_plane];
        for ci in 0..m.in_ch {
            let src = &input[ci * in_plane..(ci + 1) * in_plane];
            for ky in 0..m.kh {
                for kx in 0..m.kw {
                    let mut acc = 0.0;
                    for oy in 0..m.out_h {
                        let iy = (oy * m.stride.0 + ky) as isize - m.pad.0 as isize;
                        if iy < 0 || iy as usize >= m.in_h {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..m.out_w {
                            let ix = (ox * m.stride.1 + kx) as isize - m.pad.1 as isize;
                            if ix < 0 || ix as usize >= m.in_w {
                                continue;
                            }
                            acc += src[iy * m.in_w + ix as usize] * gout[oy * m.out_w + ox];
                        }
                    }
                    gk[((co * m.in_ch + ci) * m.kh + ky) * m.kw + kx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &Tape, shape: &[usize], values: &[f64]) -> Var {
        tape.leaf(shape, values.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let tape = Tape::new();
        let eye = leaf(&tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = leaf(&tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value_vec(out), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector() {
        let tape = Tape::new();
        let p = leaf(&tape, &[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let v = leaf(&tape, &[2, 1], &[5.0, 7.0]);
        let out = tape.matmul(p, v).unwrap();
        assert_eq!(tape.value_vec(out), vec![5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_extents() {
        let tape = Tape::new();
        let a = leaf(&tape, &[2, 3], &[0.0; 6]);
        let b = leaf(&tape, &[2, 2], &[0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1], &[0.0]);
        let y = tape.sigmoid(x);
        assert_eq!(tape.value_scalar(y), 0.5);
    }

    #[test]
    fn oneplus_at_zero() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1], &[0.0]);
        let y = tape.oneplus(x);
        assert!((tape.value_scalar(y) - (1.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_of_nonpositive_rejected() {
        let tape = Tape::new();
        let x = leaf(&tape, &[2], &[1.0, -0.5]);
        assert!(matches!(
            tape.unary(x, UnaryFn::Log),
            Err(TensorError::Domain { .. })
        ));
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let tape = Tape::new();
        let x = leaf(&tape, &[3], &[0.0, 0.0, 0.0]);
        let y = tape.softmax_rows(x).unwrap();
        for v in tape.value_vec(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let tape = Tape::new();
        let x = leaf(&tape, &[3], &[1000.0, 0.0, 0.0]);
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value_vec(y);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1] < 1e-12 && v[2] < 1e-12);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        let vals: Vec<f64> = (0..40).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let x = leaf(&tape, &[5, 8], &vals);
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value_vec(y);
        for r in 0..5 {
            let s: f64 = v[r * 8..(r + 1) * 8].iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_single_part_is_identity() {
        let tape = Tape::new();
        let a = leaf(&tape, &[3], &[1.0, 2.0, 3.0]);
        let out = tape.concat(&[a], 0).unwrap();
        assert_eq!(tape.value_vec(out), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_vectors() {
        let tape = Tape::new();
        let a = leaf(&tape, &[2], &[1.0, 2.0]);
        let b = leaf(&tape, &[1], &[3.0]);
        let out = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value_vec(out), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let tape = Tape::new();
        let a = leaf(&tape, &[2], &[1.0, 2.0]);
        let b = leaf(&tape, &[3], &[3.0, 4.0, 5.0]);
        let out = tape.concat(&[a, b], 0).unwrap();
        let loss = tape.sum(out);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a), vec![1.0, 1.0]);
        assert_eq!(tape.grad(b), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_rejects_mismatched_other_axes() {
        let tape = Tape::new();
        let a = leaf(&tape, &[2, 2], &[0.0; 4]);
        let b = leaf(&tape, &[2, 3], &[0.0; 6]);
        assert!(tape.concat(&[a, b], 0).is_err());
        assert!(tape.concat(&[a, b], 1).is_ok());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = leaf(&tape, &[4], &[0.3, -1.0, 2.0, 7.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_half_square_norm_is_x() {
        let tape = Tape::new();
        let x = leaf(&tape, &[3], &[1.5, -2.0, 0.25]);
        let sq = tape.mul(x, x).unwrap();
        let half = tape.affine(sq, 0.5, 0.0);
        let loss = tape.sum(half);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = leaf(&tape, &[2], &[1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = leaf(&tape, &[2], &[1.0, 2.0]);
        let unused = leaf(&tape, &[3], &[9.0, 9.0, 9.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused), vec![0.0; 3]);
    }

    #[test]
    fn maxpool_2x2_takes_window_max() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = tape.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value_vec(y), vec![4.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_element() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2, 4], &[5.0; 8]);
        let y = tape.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        assert_eq!(tape.value_vec(y), vec![5.0, 5.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_oversized_window() {
        let tape = Tape::new();
        let x = leaf(&tape, &[1, 2, 2], &[0.0; 4]);
        assert!(tape.maxpool2d(x, (3, 3), (1, 1)).is_err());
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let tape = Tape::new();
        let img = leaf(&tape, &[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let k = leaf(&tape, &[1, 1, 1, 1], &[1.0]);
        let b = leaf(&tape, &[1], &[0.0]);
        let y = tape.conv2d(img, k, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(tape.value_vec(y), tape.value_vec(img));
    }

    #[test]
    fn conv_ones_kernel_on_constant_image() {
        let tape = Tape::new();
        let c = 2.5;
        let img = leaf(&tape, &[1, 5, 5], &[c; 25]);
        let k = leaf(&tape, &[1, 1, 3, 3], &[1.0; 9]);
        let b = leaf(&tape, &[1], &[0.0]);
        let y = tape.conv2d(img, k, b, (1, 1), (1, 1)).unwrap();
        let v = tape.value_vec(y);
        // interior pixels see the full 3x3 window
        for iy in 1..4 {
            for ix in 1..4 {
                assert!((v[iy * 5 + ix] - 9.0 * c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_rows_orthonormal_selects_matching_row() {
        let tape = Tape::new();
        let m = leaf(&tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let k = leaf(&tape, &[2], &[1.0, 0.0]);
        let y = tape.cosine_rows(m, k).unwrap();
        let v = tape.value_vec(y);
        assert!((v[0] - 1.0).abs() < 1e-7);
        assert!(v[1].abs() < 1e-12);
    }

    #[test]
    fn cosine_rows_zero_row_scores_zero() {
        let tape = Tape::new();
        let m = leaf(&tape, &[2, 2], &[0.0, 0.0, 3.0, 4.0]);
        let k = leaf(&tape, &[2], &[1.0, 1.0]);
        let y = tape.cosine_rows(m, k).unwrap();
        let v = tape.value_vec(y);
        assert_eq!(v[0], 0.0);
        assert!(v[1].is_finite());
    }

    #[test]
    fn determinism_same_inputs_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = leaf(&tape, &[3], &[0.1, 0.2, 0.3]);
            let w = leaf(&tape, &[2, 3], &[0.5, -0.25, 1.0, 0.0, 2.0, -1.0]);
            let h = tape.matvec(w, x).unwrap();
            let s = tape.tanh(h);
            let loss = tape.sum(s);
            tape.backward(loss).unwrap();
            (tape.value_vec(s), tape.grad(w))
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
