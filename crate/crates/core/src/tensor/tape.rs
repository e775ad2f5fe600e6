//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and the rule
//! needed to push gradients back to its inputs. Nodes are only ever appended,
//! so the node list is already in topological order and `backward` is a single
//! reverse sweep.

use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use super::dense::Tensor;
use crate::error::{Error, Result};
use crate::graph::EdgeIndex;

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-supplied operation: receives the output gradient,
/// the input values and the output value, returns one gradient per input.
pub type BackwardFn = Rc<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Log,
    Exp,
    Softplus,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        row_broadcast: bool,
    },
    Scale(Var, f64),
    Unary(Var, UnaryKind),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    SegmentSoftmax(Var, Arc<[usize]>),
    MaskedSoftmax(Var),
    LogSoftmaxRows(Var),
    EdgeDot {
        a: Var,
        b: Var,
        edges: EdgeIndex,
    },
    EdgeAggregate {
        w: Var,
        v: Var,
        edges: EdgeIndex,
    },
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn,
    },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            },
            Op::Scale(..) => "scale",
            Op::Unary(_, k) => match k {
                UnaryKind::Relu => "relu",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Log => "log",
                UnaryKind::Exp => "exp",
                UnaryKind::Softplus => "softplus",
            },
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::LogSoftmaxRows(_) => "log_softmax_rows",
            Op::EdgeDot { .. } => "edge_dot",
            Op::EdgeAggregate { .. } => "edge_aggregate",
            Op::Custom { .. } => "custom",
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf, remembered in registration order for [`Tape::param_grads`].
    pub fn param(&mut self, value: &Tensor) -> Var {
        let v = self.leaf(value.clone(), true);
        self.params.push(v);
        v
    }

    pub fn bind(&mut self, values: &[&Tensor]) -> Vec<Var> {
        values.iter().map(|t| self.param(t)).collect()
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    /// Gradients of every registered parameter, zero-filled where absent.
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|&v| {
                let node = &self.nodes[v.0];
                node.grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Copies the value of `v` into a fresh constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() {
            return Err(Error::dim("transpose", t.shape(), &[]));
        }
        let out = t.transpose();
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, op: &'static str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let row_broadcast = if ta.same_shape(tb) {
            false
        } else if ta.is_matrix()
            && tb.numel() == ta.cols()
            && (tb.shape().len() == 1 || (tb.is_matrix() && tb.rows() == 1))
        {
            true
        } else {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        };
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let out = if row_broadcast {
            let c = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[i % c]))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            ta.zip_map(tb, f)
        };
        Ok(self.push(
            out,
            Op::Binary {
                a,
                b,
                kind,
                row_broadcast,
            },
            &[a, b],
        ))
    }

    /// `a + b`; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let f = match kind {
            UnaryKind::Relu => |v: f64| if v > 0.0 { v } else { 0.0 },
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Log => |v: f64| v.max(PROB_FLOOR).ln(),
            UnaryKind::Exp => f64::exp,
            UnaryKind::Softplus => softplus,
        };
        let out = self.value(x).map(f);
        self.push(out, Op::Unary(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    /// Natural log with inputs clamped below at [`PROB_FLOOR`]; clamped
    /// entries pass no gradient.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Log)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Softplus)
    }

    // ---- shape ----------------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if !t.is_matrix() || t.rows() != rows {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), t.shape()));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, end)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::dim("gather_rows", t.shape(), &[bad]));
        }
        let out = t.select_rows(&idx);
        Ok(self.push(out, Op::GatherRows { x, idx }, &[x]))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        self.push(out, Op::Mean(x), &[x])
    }

    /// Per-row sums: `[n × d] → [n]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::vector((0..t.rows()).map(|r| t.row(r).iter().sum()).collect());
        self.push(out, Op::RowSum(x), &[x])
    }

    // ---- softmax family -------------------------------------------------

    /// Softmax over contiguous segments of a packed vector, one segment per
    /// node as delimited by `row_ptr`.
    pub fn segment_softmax(&mut self, x: Var, row_ptr: Arc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        let total = *row_ptr.last().unwrap_or(&0);
        if total != t.numel() {
            return Err(Error::dim("segment_softmax", t.shape(), &[total]));
        }
        let mut out = vec![0.0; t.numel()];
        for (row, w) in row_ptr.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(Error::DegenerateRow { row });
            }
            softmax_into(&t.data()[w[0]..w[1]], &mut out[w[0]..w[1]]);
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(out, Op::SegmentSoftmax(x, row_ptr), &[x]))
    }

    /// Row softmax of a matrix restricted to entries where `mask` is set.
    /// Masked entries come out exactly zero.
    pub fn row_softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::dim("row_softmax_masked", t.shape(), &[mask.len()]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            let m = &mask[span.clone()];
            let xs = &t.data()[span.clone()];
            let mut hi = f64::NEG_INFINITY;
            let mut any = false;
            for (x, &keep) in xs.iter().zip(m) {
                if keep {
                    any = true;
                    hi = hi.max(*x);
                }
            }
            if !any {
                return Err(Error::DegenerateRow { row: r });
            }
            let o = &mut out[span];
            let mut z = 0.0;
            for ((oi, x), &keep) in o.iter_mut().zip(xs).zip(m) {
                if keep {
                    *oi = (x - hi).exp();
                    z += *oi;
                }
            }
            for oi in o.iter_mut() {
                *oi /= z;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(out, Op::MaskedSoftmax(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = hi + row.iter().map(|v| (v - hi).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.push(out, Op::LogSoftmaxRows(x), &[x])
    }

    // ---- sparse graph ops -----------------------------------------------

    /// `out[e] = ⟨a[src(e)], b[dst(e)]⟩` for every edge.
    pub fn edge_dot(&mut self, a: Var, b: Var, edges: &EdgeIndex) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) || ta.rows() != edges.n_nodes() {
            return Err(Error::dim("edge_dot", ta.shape(), tb.shape()));
        }
        let d = ta.cols();
        let out: Vec<f64> = edges
            .src()
            .iter()
            .zip(edges.dst().iter())
            .map(|(&i, &j)| dot(&ta.data()[i * d..(i + 1) * d], &tb.data()[j * d..(j + 1) * d]))
            .collect();
        let out = Tensor::vector(out);
        Ok(self.push(
            out,
            Op::EdgeDot {
                a,
                b,
                edges: edges.clone(),
            },
            &[a, b],
        ))
    }

    /// `out[i] = Σ_{e: src(e)=i} w[e] · v[dst(e)]`.
    pub fn edge_aggregate(&mut self, w: Var, v: Var, edges: &EdgeIndex) -> Result<Var> {
        let (tw, tv) = (self.value(w), self.value(v));
        if tw.numel() != edges.n_edges() || tv.rows() != edges.n_nodes() || !tv.is_matrix() {
            return Err(Error::dim("edge_aggregate", tw.shape(), tv.shape()));
        }
        let d = tv.cols();
        let mut out = vec![0.0; edges.n_nodes() * d];
        for (e, (&i, &j)) in edges.src().iter().zip(edges.dst().iter()).enumerate() {
            let we = tw.data()[e];
            if we == 0.0 {
                continue;
            }
            let o = &mut out[i * d..(i + 1) * d];
            for (oi, vj) in o.iter_mut().zip(&tv.data()[j * d..(j + 1) * d]) {
                *oi += we * vj;
            }
        }
        let out = Tensor::matrix(edges.n_nodes(), d, out)?;
        Ok(self.push(
            out,
            Op::EdgeAggregate {
                w,
                v,
                edges: edges.clone(),
            },
            &[w, v],
        ))
    }

    /// Records an operation whose forward value is computed by the caller and
    /// whose backward rule is supplied explicitly.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            inputs,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates `∂loss/∂x` into every gradient-requiring node recorded up
    /// to `loss`. Calling it twice without [`Tape::zero_grad`] adds the
    /// gradients again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = local[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let contributions = self.input_grads(idx, &g);
            for (input, grad) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut local[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
            local[idx] = Some(g);
        }

        for (idx, g) in local.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if needs(*a) {
                    let ga = g.matmul(&val(*b).transpose()).expect("matmul shapes");
                    res.push((*a, ga));
                }
                if needs(*b) {
                    let gb = val(*a).transpose().matmul(g).expect("matmul shapes");
                    res.push((*b, gb));
                }
                res
            }
            Op::Binary {
                a,
                b,
                kind,
                row_broadcast,
            } => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                let gb_full: Vec<f64> = match kind {
                    BinaryKind::Add => g.data().to_vec(),
                    BinaryKind::Sub => g.data().iter().map(|x| -x).collect(),
                    BinaryKind::Mul => g
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(gi, ai)| gi * ai)
                        .collect(),
                };
                let ga = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.clone(),
                    BinaryKind::Mul => {
                        let data = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| {
                                let bi = if *row_broadcast {
                                    tb.data()[i % c]
                                } else {
                                    tb.data()[i]
                                };
                                gi * bi
                            })
                            .collect();
                        Tensor::new(ta.shape().to_vec(), data).expect("shape")
                    }
                };
                let gb = if *row_broadcast {
                    let mut acc = vec![0.0; c];
                    for (i, x) in gb_full.iter().enumerate() {
                        acc[i % c] += x;
                    }
                    Tensor::new(tb.shape().to_vec(), acc).expect("shape")
                } else {
                    Tensor::new(tb.shape().to_vec(), gb_full).expect("shape")
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * s))],
            Op::Unary(x, kind) => {
                let tx = val(*x);
                let gx = match kind {
                    UnaryKind::Relu => g.zip_map(tx, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                    UnaryKind::Sigmoid => g.zip_map(out, |gi, s| gi * s * (1.0 - s)),
                    UnaryKind::Log => {
                        g.zip_map(tx, |gi, xi| if xi > PROB_FLOOR { gi / xi } else { 0.0 })
                    }
                    UnaryKind::Exp => g.zip_map(out, |gi, e| gi * e),
                    UnaryKind::Softplus => g.zip_map(tx, |gi, xi| gi * sigmoid(xi)),
                };
                vec![(*x, gx)]
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).cols();
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    res.push((p, Tensor::matrix(rows, w, data).expect("shape")));
                    offset += w;
                }
                res
            }
            Op::SliceCols { x, start } => {
                let tx = val(*x);
                let (rows, cols, w) = (tx.rows(), tx.cols(), g.cols());
                let mut gx = Tensor::zeros(tx.shape());
                for r in 0..rows {
                    gx.data_mut()[r * cols + start..r * cols + start + w]
                        .copy_from_slice(g.row(r));
                }
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
            Op::Mean(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), g.item() / t.numel().max(1) as f64))]
            }
            Op::RowSum(x) => {
                let t = val(*x);
                let c = t.cols();
                let data = (0..t.numel()).map(|i| g.data()[i / c]).collect();
                vec![(*x, Tensor::new(t.shape().to_vec(), data).expect("shape"))]
            }
            Op::GatherRows { x, idx } => {
                let t = val(*x);
                let c = t.cols();
                let mut gx = Tensor::zeros(t.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..c {
                        gx.data_mut()[i * c + k] += g.data()[r * c + k];
                    }
                }
                vec![(*x, gx)]
            }
            Op::SegmentSoftmax(x, row_ptr) => {
                let mut gx = vec![0.0; out.numel()];
                for w in row_ptr.windows(2) {
                    softmax_vjp(&out.data()[w[0]..w[1]], &g.data()[w[0]..w[1]], &mut gx[w[0]..w[1]]);
                }
                vec![(*x, Tensor::new(out.shape().to_vec(), gx).expect("shape"))]
            }
            Op::MaskedSoftmax(x) => {
                // Masked outputs are exactly zero so they drop out of the
                // Jacobian on their own.
                let c = out.cols();
                let mut gx = vec![0.0; out.numel()];
                for r in 0..out.rows() {
                    let s = r * c..(r + 1) * c;
                    softmax_vjp(&out.data()[s.clone()], &g.data()[s.clone()], &mut gx[s]);
                }
                vec![(*x, Tensor::new(out.shape().to_vec(), gx).expect("shape"))]
            }
            Op::LogSoftmaxRows(x) => {
                let c = out.cols();
                let mut gx = vec![0.0; out.numel()];
                for r in 0..out.rows() {
                    let s = r * c..(r + 1) * c;
                    let gsum: f64 = g.data()[s.clone()].iter().sum();
                    for k in s {
                        gx[k] = g.data()[k] - out.data()[k].exp() * gsum;
                    }
                }
                vec![(*x, Tensor::new(out.shape().to_vec(), gx).expect("shape"))]
            }
            Op::EdgeDot { a, b, edges } => {
                let (ta, tb) = (val(*a), val(*b));
                let d = ta.cols();
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for (e, (&i, &j)) in edges.src().iter().zip(edges.dst().iter()).enumerate() {
                    let ge = g.data()[e];
                    if ge == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        ga.data_mut()[i * d + k] += ge * tb.data()[j * d + k];
                        gb.data_mut()[j * d + k] += ge * ta.data()[i * d + k];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::EdgeAggregate { w, v, edges } => {
                let (tw, tv) = (val(*w), val(*v));
                let d = tv.cols();
                let mut gw = vec![0.0; tw.numel()];
                let mut gv = Tensor::zeros(tv.shape());
                for (e, (&i, &j)) in edges.src().iter().zip(edges.dst().iter()).enumerate() {
                    let gi = &g.data()[i * d..(i + 1) * d];
                    gw[e] = dot(gi, &tv.data()[j * d..(j + 1) * d]);
                    let we = tw.data()[e];
                    if we != 0.0 {
                        for (k, gk) in gi.iter().enumerate() {
                            gv.data_mut()[j * d + k] += we * gk;
                        }
                    }
                }
                vec![
                    (*w, Tensor::new(tw.shape().to_vec(), gw).expect("shape")),
                    (*v, gv),
                ]
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = backward(g, &vals, out);
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax of `xs` written into `out`.
pub(crate) fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - hi).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn softmax_vjp(y: &[f64], g: &[f64], out: &mut [f64]) {
    let inner = dot(y, g);
    for ((o, yi), gi) in out.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - inner);
    }
}
