//! Define-by-run reverse-mode tape over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is built; [`Graph::backward`]
//! walks the tape once in reverse recording order, so gradient accumulation
//! order is fixed and results are reproducible bit-for-bit. Graphs are cheap
//! and meant to be rebuilt from scratch for every training step.

use super::tensor::{gemm, GemmKind, Tensor};
use super::AdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Recip(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    /// Sum over consecutive groups of rows: (G*group, C) -> (G, C).
    GroupRowSum(NodeId, usize),
    RowL2Norm(NodeId),
    RowDot(NodeId, NodeId),
    /// Column-wise concatenation.
    Concat(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    Reshape(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    MinConst(NodeId, f64),
    MaxConst(NodeId, f64),
    /// out[r, c] = a[r, c] * s[r, 0].
    MulColBroadcast(NodeId, NodeId),
    /// out = a * s with s a 1x1 node.
    MulScalar(NodeId, NodeId),
    /// out[r, c] = sum of x[r, 0..c] (exclusive running sum along each row).
    CumsumExclusiveRow(NodeId),
    /// x·w + b with x: (B, I), w: (I, O), b: (1, O) broadcast over rows.
    Affine { x: NodeId, w: NodeId, b: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, kept for leaf nodes only (interior
/// buffers are dropped as soon as their parents have consumed them).
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
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

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input: receives no gradient.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input: gradient retained by `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, v: f64) -> NodeId {
        self.leaf(Tensor::filled(rows, cols, v))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AdError::Shape {
                op,
                shapes: format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AdError> {
        self.same_shape(name, a, b)?;
        let value = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, f);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// 1/x. Callers are responsible for keeping x away from 0 (compose with
    /// `max_const` when the operand can vanish).
    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Recip(a), f64::recip)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    pub fn min_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::MinConst(a, c), |x| x.min(c))
    }

    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::MaxConst(a, c), |x| x.max(c))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(t.rows(), 1);
        for r in 0..t.rows() {
            out.set(r, 0, t.row(r).iter().sum());
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::RowSum(a), rg)
    }

    /// Sum over consecutive groups of `group` rows; rows must divide evenly.
    pub fn group_row_sum(&mut self, a: NodeId, group: usize) -> Result<NodeId, AdError> {
        let t = &self.nodes[a.0].value;
        if group == 0 || t.rows() % group != 0 {
            return Err(AdError::Shape {
                op: "group_row_sum",
                shapes: format!("{}x{} with group {}", t.rows(), t.cols(), group),
            });
        }
        let groups = t.rows() / group;
        let cols = t.cols();
        let mut out = Tensor::zeros(groups, cols);
        for g in 0..groups {
            for r in 0..group {
                let src = t.row(g * group + r);
                let dst = out.row_mut(g);
                for c in 0..cols {
                    dst[c] += src[c];
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::GroupRowSum(a, group), rg))
    }

    /// Euclidean norm of each row: (R, C) -> (R, 1).
    pub fn row_l2norm(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(t.rows(), 1);
        for r in 0..t.rows() {
            out.set(r, 0, t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::RowL2Norm(a), rg)
    }

    /// Row-wise dot product: (R, C) x (R, C) -> (R, 1).
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            out.set(
                r,
                0,
                ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum(),
            );
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    /// Dot product of two whole tensors as a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows() != tb.rows() {
            return Err(AdError::Shape {
                op: "concat",
                shapes: format!(
                    "{}x{} vs {}x{}",
                    ta.rows(),
                    ta.cols(),
                    tb.rows(),
                    tb.cols()
                ),
            });
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::from_vec(rows, ca + cb, data).expect("concat layout");
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AdError> {
        let t = &self.nodes[a.0].value;
        if len == 0 || start + len > t.rows() {
            return Err(AdError::Shape {
                op: "slice_rows",
                shapes: format!("{}x{} sliced at {}..{}", t.rows(), t.cols(), start, start + len),
            });
        }
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data).expect("slice layout");
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::SliceRows(a, start, len), rg))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, AdError> {
        let out = self.nodes[a.0].value.reshaped(rows, cols)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Scale each row of `a` by the matching entry of the column vector `s`.
    pub fn mul_col_broadcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, AdError> {
        let (ta, ts) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(AdError::Shape {
                op: "mul_col_broadcast",
                shapes: format!(
                    "{}x{} vs {}x{}",
                    ta.rows(),
                    ta.cols(),
                    ts.rows(),
                    ts.cols()
                ),
            });
        }
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            let f = ts.get(r, 0);
            for v in out.row_mut(r) {
                *v *= f;
            }
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[s.0].requires_grad;
        Ok(self.push(out, Op::MulColBroadcast(a, s), rg))
    }

    /// Multiply every element of `a` by a 1x1 scalar node.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, AdError> {
        let ts = &self.nodes[s.0].value;
        if ts.shape() != (1, 1) {
            return Err(AdError::Shape {
                op: "mul_scalar",
                shapes: format!("scalar operand is {}x{}", ts.rows(), ts.cols()),
            });
        }
        let sv = ts.scalar_value();
        let value = self.nodes[a.0].value.map(|x| x * sv);
        let rg = self.nodes[a.0].requires_grad || self.nodes[s.0].requires_grad;
        Ok(self.push(value, Op::MulScalar(a, s), rg))
    }

    /// Exclusive running sum along each row: out[r, c] = sum of x[r, 0..c].
    pub fn cumsum_exclusive_row(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let mut acc = 0.0;
            for c in 0..t.cols() {
                out.set(r, c, acc);
                acc += t.get(r, c);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, Op::CumsumExclusiveRow(a), rg)
    }

    /// Rescale every row to unit Euclidean length, guarding the norm away
    /// from zero. Composition of registered ops.
    pub fn unit_rows(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let n = self.row_l2norm(a);
        let n = self.max_const(n, 1e-12);
        let inv = self.recip(n);
        self.mul_col_broadcast(a, inv)
    }

    /// Carve `len` consecutive elements (row-major order) out of `a` and
    /// shape them as rows x cols. Composition of reshape and slice_rows.
    pub fn slice_reshape(
        &mut self,
        a: NodeId,
        start: usize,
        len: usize,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, AdError> {
        let flat_len = self.value(a).len();
        let flat = self.reshape(a, flat_len, 1)?;
        let cut = self.slice_rows(flat, start, len)?;
        self.reshape(cut, rows, cols)
    }

    /// x·w + b (bias broadcast over rows).
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (tx, tw, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if tx.cols() != tw.rows() || tb.rows() != 1 || tb.cols() != tw.cols() {
            return Err(AdError::Shape {
                op: "affine",
                shapes: format!(
                    "x {}x{}, w {}x{}, b {}x{}",
                    tx.rows(),
                    tx.cols(),
                    tw.rows(),
                    tw.cols(),
                    tb.rows(),
                    tb.cols()
                ),
            });
        }
        let mut out = gemm(GemmKind::Plain, tx, tw)?;
        for r in 0..out.rows() {
            let bias = tb.row(0);
            let row = out.row_mut(r);
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[w.0].requires_grad
            || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::Affine { x, w, b }, rg))
    }

    /// Reverse pass from a scalar root. Gradient buffers of interior nodes
    /// are freed eagerly; only leaf gradients are returned.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AdError> {
        let root_t = &self.nodes[root.0].value;
        if root_t.shape() != (1, 1) {
            return Err(AdError::NonScalarRoot(root_t.rows(), root_t.cols()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { by_node: grads });
        }
        grads[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                // Returned to the caller; put it back.
                grads[id] = Some(g);
                continue;
            }
            self.push_to_parents(id, &g, &mut grads);
        }
        Ok(Gradients { by_node: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_in_place(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn push_to_parents(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let val = |n: NodeId| &self.nodes[n.0].value;
        match self.nodes[id].op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, a, g.zip_map(val(b), |gv, bv| gv * bv));
                self.accumulate(grads, b, g.zip_map(val(a), |gv, av| gv * av));
            }
            Op::Neg(a) => self.accumulate(grads, a, g.map(|x| -x)),
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                self.accumulate(grads, a, g.zip_map(out, |gv, ov| gv * ov));
            }
            Op::Log(a) => self.accumulate(grads, a, g.zip_map(val(a), |gv, av| gv / av)),
            Op::Softplus(a) => {
                self.accumulate(grads, a, g.zip_map(val(a), |gv, av| gv * sigmoid(av)))
            }
            Op::Relu(a) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |gv, av| if av > 0.0 { gv } else { 0.0 }),
            ),
            Op::Sigmoid(a) => {
                let out = &self.nodes[id].value;
                self.accumulate(grads, a, g.zip_map(out, |gv, ov| gv * ov * (1.0 - ov)));
            }
            Op::Sin(a) => self.accumulate(grads, a, g.zip_map(val(a), |gv, av| gv * av.cos())),
            Op::Cos(a) => self.accumulate(grads, a, g.zip_map(val(a), |gv, av| -gv * av.sin())),
            Op::Square(a) => {
                self.accumulate(grads, a, g.zip_map(val(a), |gv, av| 2.0 * av * gv))
            }
            Op::Sqrt(a) => {
                // Subgradient 0 at the origin keeps all-zero residual norms
                // from poisoning the rest of the pass with infinities.
                let out = &self.nodes[id].value;
                self.accumulate(
                    grads,
                    a,
                    g.zip_map(out, |gv, ov| if ov == 0.0 { 0.0 } else { 0.5 * gv / ov }),
                );
            }
            Op::Abs(a) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |gv, av| gv * if av == 0.0 { 0.0 } else { av.signum() }),
            ),
            Op::Recip(a) => {
                self.accumulate(grads, a, g.zip_map(val(a), |gv, av| -gv / (av * av)))
            }
            Op::Sum(a) => {
                let s = g.scalar_value();
                let t = val(a);
                self.accumulate(grads, a, Tensor::filled(t.rows(), t.cols(), s));
            }
            Op::Mean(a) => {
                let t = val(a);
                let s = g.scalar_value() / t.len() as f64;
                self.accumulate(grads, a, Tensor::filled(t.rows(), t.cols(), s));
            }
            Op::RowSum(a) => {
                let t = val(a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let gv = g.get(r, 0);
                    for v in d.row_mut(r) {
                        *v = gv;
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::GroupRowSum(a, group) => {
                let t = val(a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let src = g.row(r / group);
                    d.row_mut(r).copy_from_slice(src);
                }
                self.accumulate(grads, a, d);
            }
            Op::RowL2Norm(a) => {
                let t = val(a);
                let out = &self.nodes[id].value;
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let norm = out.get(r, 0);
                    if norm == 0.0 {
                        continue;
                    }
                    let gv = g.get(r, 0);
                    for (dv, &xv) in d.row_mut(r).iter_mut().zip(t.row(r)) {
                        *dv = gv * xv / norm;
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..ta.rows() {
                    let gv = g.get(r, 0);
                    for c in 0..ta.cols() {
                        da.set(r, c, gv * tb.get(r, c));
                        db.set(r, c, gv * ta.get(r, c));
                    }
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = Tensor::zeros(rows, ca);
                let mut db = Tensor::zeros(rows, cb);
                for r in 0..rows {
                    let src = g.row(r);
                    da.row_mut(r).copy_from_slice(&src[..ca]);
                    db.row_mut(r).copy_from_slice(&src[ca..]);
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::SliceRows(a, start, len) => {
                let t = val(a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..len {
                    d.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, a, d);
            }
            Op::Reshape(a) => {
                let (r, c) = val(a).shape();
                self.accumulate(grads, a, g.reshaped(r, c).expect("reshape grad"));
            }
            Op::Scale(a, cst) => self.accumulate(grads, a, g.map(|x| x * cst)),
            Op::AddConst(a) => self.accumulate(grads, a, g.clone()),
            Op::MinConst(a, cst) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |gv, av| if av < cst { gv } else { 0.0 }),
            ),
            Op::MaxConst(a, cst) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |gv, av| if av > cst { gv } else { 0.0 }),
            ),
            Op::MulColBroadcast(a, s) => {
                let (ta, ts) = (val(a), val(s));
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut ds = Tensor::zeros(ts.rows(), 1);
                for r in 0..ta.rows() {
                    let sv = ts.get(r, 0);
                    let mut acc = 0.0;
                    for c in 0..ta.cols() {
                        let gv = g.get(r, c);
                        da.set(r, c, gv * sv);
                        acc += gv * ta.get(r, c);
                    }
                    ds.set(r, 0, acc);
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, s, ds);
            }
            Op::MulScalar(a, s) => {
                let sv = val(s).scalar_value();
                self.accumulate(grads, a, g.map(|x| x * sv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(val(a).data())
                    .map(|(gv, av)| gv * av)
                    .sum();
                self.accumulate(grads, s, Tensor::scalar(dot));
            }
            Op::CumsumExclusiveRow(a) => {
                // d x[r, j] = sum over c > j of g[r, c]: an exclusive
                // suffix sum along each row.
                let t = val(a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let mut acc = 0.0;
                    for c in (0..t.cols()).rev() {
                        d.set(r, c, acc);
                        acc += g.get(r, c);
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::Affine { x, w, b } => {
                if self.nodes[x.0].requires_grad {
                    let dx = gemm(GemmKind::TransB, g, val(w)).expect("affine dx");
                    self.accumulate(grads, x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let dw = gemm(GemmKind::TransA, val(x), g).expect("affine dw");
                    self.accumulate(grads, w, dw);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        let dst = db.row_mut(0);
                        for (d, &gv) in dst.iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
        }
    }
}

/// Overflow-safe log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let sp = g.softplus(x);
        assert!((g.value(sp).scalar_value() - std::f64::consts::LN_2).abs() < 1e-12);
        let sg = g.sigmoid(x);
        assert_eq!(g.value(sg).scalar_value(), 0.5);
    }

    #[test]
    fn square_gradient_is_2x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 0.25);
    }

    #[test]
    fn concat_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(1, 3));
        let b = g.leaf(Tensor::zeros(1, 2));
        let c = g.concat_cols(a, b).unwrap();
        assert_eq!(g.shape(c), (1, 5));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2));
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(AdError::NonScalarRoot(2, 2))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(3, 2));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let c = g.leaf(Tensor::scalar(5.0));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 5.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn cumsum_and_backward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.cumsum_exclusive_row(x);
        assert_eq!(g.value(c).data(), &[0.0, 1.0, 3.0, 6.0]);
        // Weighted sum picks out suffix-sum structure in the gradient.
        let w = g.leaf(Tensor::from_vec(1, 4, vec![1.0, 10.0, 100.0, 1000.0]).unwrap());
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        // d s / d x_j = sum of w_c for c > j.
        assert_eq!(grads.get(x).unwrap().data(), &[1110.0, 1100.0, 1000.0, 0.0]);
    }

    #[test]
    fn affine_forward_and_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.param(Tensor::from_vec(2, 2, vec![0.5, -1.0, 1.5, 2.0]).unwrap());
        let b = g.param(Tensor::from_vec(1, 2, vec![0.1, -0.2]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        // Row 0: [1*0.5 + 2*1.5 + 0.1, 1*-1 + 2*2 - 0.2] = [3.6, 2.8].
        assert!((g.value(y).get(0, 0) - 3.6).abs() < 1e-12);
        assert!((g.value(y).get(0, 1) - 2.8).abs() < 1e-12);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        // d sum / d b = column counts.
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
        // d sum / d x = row sums of w.
        let dx = grads.get(x).unwrap();
        assert!((dx.get(0, 0) - (-0.5)).abs() < 1e-12);
        assert!((dx.get(0, 1) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn backward_is_reproducible_bitwise() {
        let build = || {
            let mut g = Graph::new();
            let x = g.param(
                Tensor::from_vec(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.5, 0.9]).unwrap(),
            );
            let w = g.param(Tensor::from_vec(2, 2, vec![0.4, 0.6, -0.3, 0.8]).unwrap());
            let b = g.param(Tensor::from_vec(1, 2, vec![0.05, -0.02]).unwrap());
            let h = g.affine(x, w, b).unwrap();
            let h = g.softplus(h);
            let n = g.row_l2norm(h);
            let n1 = g.add_const(n, -1.0);
            let sq = g.square(n1);
            let loss = g.mean(sq);
            let grads = g.backward(loss).unwrap();
            (
                g.value(loss).scalar_value(),
                grads.get(x).unwrap().clone(),
                grads.get(w).unwrap().clone(),
            )
        };
        let (l1, gx1, gw1) = build();
        let (l2, gx2, gw2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1.data(), gx2.data());
        assert_eq!(gw1.data(), gw2.data());
    }
}
