//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] walks the
//! record in reverse and accumulates exact adjoints. Leaves created through
//! [`Tape::param`] remember which [`ParamSet`] slot they came from, so
//! [`Tape::write_grads`] can push the accumulated gradients back.
//!
//! The tape lives on one thread for the duration of a training step and is
//! dropped afterwards; gradients for reused values accumulate additively.

use crate::error::{Result, SimbaError};
use crate::params::ParamSet;
use crate::tensor::{logsumexp, Tensor};
use std::rc::Rc;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Fixed sparse linear operator stored as (row, col, weight) triplets.
///
/// Graph adjacency never becomes a dense tensor: neighbor sums, normalized
/// adjacencies and the graphs-to-graph propagation operator are all `LinOp`s
/// applied to dense feature matrices. The operator itself carries no
/// gradient; differentiation flows through the application only.
#[derive(Debug, Clone)]
pub struct LinOp {
    out_dim: usize,
    in_dim: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl LinOp {
    pub fn new(out_dim: usize, in_dim: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut packed = Vec::with_capacity(entries.len());
        for (r, c, w) in entries {
            if r >= out_dim || c >= in_dim {
                return Err(SimbaError::Dimension(format!(
                    "linop entry ({r},{c}) outside {out_dim}x{in_dim}"
                )));
            }
            packed.push((r as u32, c as u32, w));
        }
        Ok(LinOp {
            out_dim,
            in_dim,
            entries: packed,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.in_dim {
            return Err(SimbaError::Dimension(format!(
                "linop {}x{} applied to {}x{}",
                self.out_dim,
                self.in_dim,
                x.rows(),
                x.cols()
            )));
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(self.out_dim, cols);
        for &(r, c, w) in &self.entries {
            let src = x.row(c as usize);
            let dst = out.row_mut(r as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        Ok(out)
    }

    /// Apply the transposed operator (used for adjoints).
    pub fn apply_transpose(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.out_dim {
            return Err(SimbaError::Dimension(format!(
                "linop^T {}x{} applied to {}x{}",
                self.in_dim,
                self.out_dim,
                g.rows(),
                g.cols()
            )));
        }
        let cols = g.cols();
        let mut out = Tensor::zeros(self.in_dim, cols);
        for &(r, c, w) in &self.entries {
            let src = g.row(r as usize);
            let dst = out.row_mut(c as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.out_dim, self.in_dim);
        for &(r, c, w) in &self.entries {
            let v = t.at(r as usize, c as usize);
            t.set(r as usize, c as usize, v + w);
        }
        t
    }
}

#[derive(Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    RowSoftmax(NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    MulScalar(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    ReduceSum(NodeId),
    Linear(Rc<LinOp>, NodeId),
    RowLogsumexp(NodeId),
    PickPerRow(NodeId, Rc<Vec<usize>>),
    MulConst(NodeId, Rc<Tensor>),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Record a leaf bound to `params[idx]`; its accumulated gradient is
    /// written back by [`Tape::write_grads`].
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> NodeId {
        self.push(params.get(idx).value.clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(v, Op::MulElem(a, b)))
    }

    /// Broadcast-add a 1xC row (bias) over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row_broadcast(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).row_softmax();
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    /// Multiply a tensor by a 1x1 scalar node (e.g. a trainable layer weight).
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item()?;
        let v = self.value(a).scale(sv);
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn reduce_sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::ReduceSum(a))
    }

    /// Apply a fixed sparse operator; gradients flow through the input only.
    pub fn apply_linop(&mut self, op: Rc<LinOp>, a: NodeId) -> Result<NodeId> {
        let v = op.apply(self.value(a))?;
        Ok(self.push(v, Op::Linear(op, a)))
    }

    /// Per-row stable log-sum-exp: NxC -> Nx1.
    pub fn row_logsumexp(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.cols() == 0 {
            return Err(SimbaError::Argument("logsumexp over zero columns".into()));
        }
        let mut v = Tensor::zeros(t.rows(), 1);
        for i in 0..t.rows() {
            v.set(i, 0, logsumexp(t.row(i))?);
        }
        Ok(self.push(v, Op::RowLogsumexp(a)))
    }

    /// Select one entry per row: out[i] = a[i, indices[i]] (NxC -> Nx1).
    pub fn pick_per_row(&mut self, a: NodeId, indices: Rc<Vec<usize>>) -> Result<NodeId> {
        let t = self.value(a);
        if indices.len() != t.rows() {
            return Err(SimbaError::Dimension(format!(
                "pick_per_row: {} indices for {} rows",
                indices.len(),
                t.rows()
            )));
        }
        let mut v = Tensor::zeros(t.rows(), 1);
        for (i, &j) in indices.iter().enumerate() {
            if j >= t.cols() {
                return Err(SimbaError::Argument(format!(
                    "label {} out of range for {} classes",
                    j,
                    t.cols()
                )));
            }
            v.set(i, 0, t.at(i, j));
        }
        Ok(self.push(v, Op::PickPerRow(a, indices)))
    }

    /// Elementwise multiply by a constant tensor (no gradient to the constant).
    pub fn mul_const(&mut self, a: NodeId, c: Rc<Tensor>) -> Result<NodeId> {
        let v = self.value(a).mul_elem(&c)?;
        Ok(self.push(v, Op::MulConst(a, c)))
    }

    fn accum(&mut self, id: NodeId, delta: Tensor) {
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_assign(&delta).expect("gradient shape"),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. Fills gradient slots for every node
    /// that contributes to the loss; untouched leaves keep no gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(SimbaError::Argument(format!(
                "backward on a non-scalar {}x{} value",
                self.nodes[loss.0].value.rows(),
                self.nodes[loss.0].value.cols()
            )));
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = self.nodes[id].grad.clone() else {
                continue;
            };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::Matmul(a, b) => {
                    let ga = g.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&g)?;
                    self.accum(a, ga);
                    self.accum(b, gb);
                }
                Op::Add(a, b) => {
                    self.accum(a, g.clone());
                    self.accum(b, g);
                }
                Op::Sub(a, b) => {
                    self.accum(a, g.clone());
                    self.accum(b, g.scale(-1.0));
                }
                Op::MulElem(a, b) => {
                    let ga = g.mul_elem(self.value(b))?;
                    let gb = g.mul_elem(self.value(a))?;
                    self.accum(a, ga);
                    self.accum(b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gr.set(0, j, gr.at(0, j) + g.at(i, j));
                        }
                    }
                    self.accum(a, g);
                    self.accum(row, gr);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    let ga = g.mul_elem(&y.map(|v| 1.0 - v * v))?;
                    self.accum(a, ga);
                }
                Op::Relu(a) => {
                    let mask = self.value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let ga = g.mul_elem(&mask)?;
                    self.accum(a, ga);
                }
                Op::RowSoftmax(a) => {
                    let y = self.nodes[id].value.clone();
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(s, gg)| s * gg).sum();
                        for j in 0..y.cols() {
                            ga.set(i, j, y.at(i, j) * (g.at(i, j) - dot));
                        }
                    }
                    self.accum(a, ga);
                }
                Op::Transpose(a) => {
                    self.accum(a, g.transpose());
                }
                Op::Scale(a, c) => {
                    self.accum(a, g.scale(c));
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value(s).item()?;
                    let gs = Tensor::scalar(g.mul_elem(self.value(a))?.sum());
                    self.accum(a, g.scale(sv));
                    self.accum(s, gs);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(p).rows();
                        let mut gp = Tensor::zeros(rows, g.cols());
                        for i in 0..rows {
                            gp.row_mut(i).copy_from_slice(g.row(offset + i));
                        }
                        offset += rows;
                        self.accum(p, gp);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(p).cols();
                        let rows = self.value(p).rows();
                        let mut gp = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                gp.set(i, j, g.at(i, offset + j));
                            }
                        }
                        offset += cols;
                        self.accum(p, gp);
                    }
                }
                Op::ReduceSum(a) => {
                    let shape = self.value(a).shape();
                    let gv = g.item()?;
                    self.accum(a, Tensor::filled(shape.0, shape.1, gv));
                }
                Op::Linear(op, a) => {
                    let ga = op.apply_transpose(&g)?;
                    self.accum(a, ga);
                }
                Op::RowLogsumexp(a) => {
                    let soft = self.value(a).row_softmax();
                    let mut ga = Tensor::zeros(soft.rows(), soft.cols());
                    for i in 0..soft.rows() {
                        let gi = g.at(i, 0);
                        for j in 0..soft.cols() {
                            ga.set(i, j, gi * soft.at(i, j));
                        }
                    }
                    self.accum(a, ga);
                }
                Op::PickPerRow(a, indices) => {
                    let (rows, cols) = self.value(a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for (i, &j) in indices.iter().enumerate() {
                        ga.set(i, j, g.at(i, 0));
                    }
                    self.accum(a, ga);
                }
                Op::MulConst(a, c) => {
                    let ga = g.mul_elem(&c)?;
                    self.accum(a, ga);
                }
            }
        }
        Ok(())
    }

    /// Add every parameter leaf's accumulated gradient into the `ParamSet`.
    pub fn write_grads(&self, params: &mut ParamSet) -> Result<()> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(idx) } = node.op {
                if let Some(g) = &node.grad {
                    params.get_mut(idx).grad.add_assign(g)?;
                }
            }
        }
        Ok(())
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `build_loss` must rebuild the full forward pass from the current
/// parameter values (any fixed topology is captured by the closure) and
/// return the tape plus the scalar loss node. The returned value is the
/// maximum relative error over every parameter entry, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &mut ParamSet, eps: f64, mut build_loss: F) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(Tape, NodeId)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SimbaError::Argument(format!(
            "finite-diff eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |params: &ParamSet, build: &mut F| -> Result<f64> {
        let (tape, loss) = build(params)?;
        tape.value(loss).item()
    };
    let l0 = eval(params, &mut build_loss)?;
    let l0_again = eval(params, &mut build_loss)?;
    if l0.to_bits() != l0_again.to_bits() {
        return Err(SimbaError::Numeric(format!(
            "loss is not deterministic across evaluations: {l0} vs {l0_again}"
        )));
    }

    params.zero_grads();
    let (mut tape, loss) = build_loss(params)?;
    tape.backward(loss)?;
    tape.write_grads(params)?;
    let analytic: Vec<Tensor> = (0..params.len()).map(|i| params.get(i).grad.clone()).collect();

    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        for j in 0..params.get(pi).value.len() {
            let orig = params.get(pi).value.data()[j];
            params.get_mut(pi).value.data_mut()[j] = orig + eps;
            let lp = eval(params, &mut build_loss)?;
            params.get_mut(pi).value.data_mut()[j] = orig - eps;
            let lm = eval(params, &mut build_loss)?;
            params.get_mut(pi).value.data_mut()[j] = orig;

            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
