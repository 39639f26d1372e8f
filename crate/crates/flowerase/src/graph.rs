//! Reverse-mode automatic differentiation over [`RealArray`] values.
//!
//! The graph is append-only and define-by-run: creating a node runs its
//! forward computation immediately and caches the output, so node input ids
//! are always strictly smaller than the node's own id. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into per-node slots.
//!
//! The op set is deliberately small: affine layers, tanh/relu, elementwise
//! arithmetic, reductions, log/exp, fused softmax cross-entropy, cosine
//! similarity, plus the row-gather and column-concat plumbing an MLP over
//! batched inputs needs. Nothing here broadcasts beyond what those ops
//! require.

use crate::error::{Error, Result};
use crate::tensor::RealArray;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    /// inputs: x [n x i], w [i x o], b [o]
    Affine,
    Tanh,
    Relu,
    Dot,
    SumAll,
    MeanAll,
    Square,
    Log,
    Exp,
    Scale(f64),
    AddConst,
    /// [n x d] -> [n], per-row sum of squares
    RowSumSq,
    ConcatCols,
    /// table [r x e] -> [rows.len() x e]
    GatherRows(Vec<usize>),
    /// inputs: logits [n x k], targets [n] (class ids, no gradient)
    SoftmaxXent,
    Cosine,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: RealArray,
    grad: Option<RealArray>,
    param: bool,
}

/// Append-only autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: RealArray, param: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &RealArray {
        &self.nodes[id.0].value
    }

    /// Whether a node was registered as a trainable parameter.
    pub fn is_param(&self, id: NodeId) -> bool {
        self.nodes[id.0].param
    }

    /// Cached output of a node.
    pub fn value(&self, id: NodeId) -> &RealArray {
        self.val(id)
    }

    /// Gradient slot of a node after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&RealArray> {
        self.nodes[id.0].grad.as_ref()
    }

    fn shape_err(&self, expected: &str, actual: &str) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Constant input node (receives a gradient but is not a parameter).
    pub fn constant(&mut self, value: RealArray) -> NodeId {
        self.push(Op::Leaf, vec![], value, false)
    }

    /// Trainable parameter node.
    pub fn param(&mut self, value: RealArray) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    fn binary_elementwise(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.val(a), self.val(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err(
                &format!("{:?}", va.shape()),
                &format!("{:?}", vb.shape()),
            ));
        }
        let value = match op {
            Op::Add => va.zip_map(vb, |x, y| x + y)?,
            Op::Sub => va.zip_map(vb, |x, y| x - y)?,
            Op::Mul => va.zip_map(vb, |x, y| x * y)?,
            _ => unreachable!(),
        };
        Ok(self.push(op, vec![a, b], value, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Mul, a, b)
    }

    /// x·W + b with b broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.val(x), self.val(w), self.val(b));
        if vw.rank() != 2 || vx.cols() != vw.shape()[0] || vb.len() != vw.shape()[1] {
            return Err(self.shape_err(
                &format!("x[.x{}] w[{0}x{}] b[{1}]", vw.shape()[0], vw.shape()[1]),
                &format!("x{:?} w{:?} b{:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let mut y = vx.matmul(vw)?;
        let m = vb.len();
        let bs = vb.values().to_vec();
        for r in 0..y.rows() {
            let row = &mut y.values_mut()[r * m..(r + 1) * m];
            for (o, &bb) in row.iter_mut().zip(&bs) {
                *o += bb;
            }
        }
        Ok(self.push(Op::Affine, vec![x, w, b], y, false))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let y = self.val(x).map(f64::tanh);
        self.push(Op::Tanh, vec![x], y, false)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.val(x).map(|v| v.max(0.0));
        self.push(Op::Relu, vec![x], y, false)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.val(a).dot(self.val(b))?;
        Ok(self.push(Op::Dot, vec![a, b], RealArray::scalar(v), false))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.val(x).values().iter().sum();
        self.push(Op::SumAll, vec![x], RealArray::scalar(v), false)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xs = self.val(x).values();
        let v = xs.iter().sum::<f64>() / xs.len() as f64;
        self.push(Op::MeanAll, vec![x], RealArray::scalar(v), false)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let y = self.val(x).map(|v| v * v);
        self.push(Op::Square, vec![x], y, false)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let y = self.val(x).map(f64::ln);
        self.push(Op::Log, vec![x], y, false)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let y = self.val(x).map(f64::exp);
        self.push(Op::Exp, vec![x], y, false)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y = self.val(x).map(|v| v * c);
        self.push(Op::Scale(c), vec![x], y, false)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let y = self.val(x).map(|v| v + c);
        self.push(Op::AddConst, vec![x], y, false)
    }

    /// Per-row sum of squares: [n x d] -> [n].
    pub fn row_sum_sq(&mut self, x: NodeId) -> NodeId {
        let v = self.val(x);
        let out: Vec<f64> = (0..v.rows())
            .map(|r| v.row(r).iter().map(|a| a * a).sum())
            .collect();
        self.push(Op::RowSumSq, vec![x], RealArray::vector(out), false)
    }

    /// Concatenate along columns; inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.val(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let v = self.val(p);
                if v.rows() != n {
                    return Err(self.shape_err(&format!("{n} rows"), &format!("{} rows", v.rows())));
                }
                out.extend_from_slice(v.row(r));
            }
        }
        Ok(self.push(
            Op::ConcatCols,
            parts.to_vec(),
            RealArray::new(vec![n, total], out)?,
            false,
        ))
    }

    /// Gather rows of a rank-2 table; gradient scatter-adds back.
    pub fn gather_rows(&mut self, table: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let t = self.val(table);
        if t.rank() != 2 {
            return Err(self.shape_err("rank-2 table", &format!("{:?}", t.shape())));
        }
        let e = t.cols();
        let mut out = Vec::with_capacity(rows.len() * e);
        for &r in &rows {
            if r >= t.rows() {
                return Err(Error::InvalidArg(format!(
                    "gather row {r} out of range (table has {} rows)",
                    t.rows()
                )));
            }
            out.extend_from_slice(t.row(r));
        }
        let value = RealArray::new(vec![rows.len(), e], out)?;
        Ok(self.push(Op::GatherRows(rows), vec![table], value, false))
    }

    /// Fused softmax + cross-entropy, mean over rows. `targets` holds class
    /// ids as f64 and receives no gradient.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let l = self.val(logits);
        let t = self.val(targets);
        if t.len() != l.rows() {
            return Err(self.shape_err(
                &format!("{} targets", l.rows()),
                &format!("{} targets", t.len()),
            ));
        }
        let n = l.rows();
        let k = l.cols();
        let mut total = 0.0;
        for r in 0..n {
            let row = l.row(r);
            let cls = t.values()[r] as usize;
            if cls >= k {
                return Err(Error::InvalidArg(format!(
                    "target class {cls} out of range (k={k})"
                )));
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - row[cls];
        }
        Ok(self.push(
            Op::SoftmaxXent,
            vec![logits, targets],
            RealArray::scalar(total / n as f64),
            false,
        ))
    }

    /// Cosine similarity of two vectors.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.val(a), self.val(b));
        if va.len() != vb.len() {
            return Err(self.shape_err(
                &format!("{} elems", va.len()),
                &format!("{} elems", vb.len()),
            ));
        }
        let (na, nb) = (va.norm(), vb.norm());
        if na < 1e-300 || nb < 1e-300 {
            return Err(Error::InvalidArg("cosine of zero-norm vector".into()));
        }
        let v = va.dot(vb)? / (na * nb);
        Ok(self.push(Op::Cosine, vec![a, b], RealArray::scalar(v), false))
    }

    /// Reverse pass from a scalar root. Gradient slots of every node that the
    /// root depends on are filled; call [`Graph::grad`] to read them.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::InvalidArg(format!("backward: no node {}", root.0)));
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::InvalidArg(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(RealArray::scalar(1.0));

        for i in (0..=root.0).rev() {
            let g = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            let out = self.nodes[i].value.clone();
            match op {
                Op::Leaf => {}
                Op::Add => {
                    self.accum(inputs[0], &g);
                    self.accum(inputs[1], &g);
                }
                Op::Sub => {
                    self.accum(inputs[0], &g);
                    let neg = g.map(|v| -v);
                    self.accum(inputs[1], &neg);
                }
                Op::Mul => {
                    let ga = g.zip_map(self.val(inputs[1]), |gv, b| gv * b)?;
                    let gb = g.zip_map(self.val(inputs[0]), |gv, a| gv * a)?;
                    self.accum(inputs[0], &ga);
                    self.accum(inputs[1], &gb);
                }
                Op::Affine => {
                    let x = self.val(inputs[0]).clone();
                    let w = self.val(inputs[1]).clone();
                    // reshape g to [n x o] view semantics
                    let gm = if g.rank() == 1 {
                        RealArray::new(vec![1, g.len()], g.values().to_vec())?
                    } else {
                        g.clone()
                    };
                    let xm = if x.rank() == 1 {
                        RealArray::new(vec![1, x.len()], x.values().to_vec())?
                    } else {
                        x.clone()
                    };
                    let gx = gm.matmul(&w.transpose())?;
                    let gx = RealArray::new(x.shape().to_vec(), gx.values().to_vec())?;
                    let gw = xm.transpose().matmul(&gm)?;
                    let o = gm.cols();
                    let mut gb = vec![0.0; o];
                    for r in 0..gm.rows() {
                        for (s, &v) in gb.iter_mut().zip(gm.row(r)) {
                            *s += v;
                        }
                    }
                    self.accum(inputs[0], &gx);
                    self.accum(inputs[1], &gw);
                    self.accum(inputs[2], &RealArray::vector(gb));
                }
                Op::Tanh => {
                    let dx = g.zip_map(&out, |gv, y| gv * (1.0 - y * y))?;
                    self.accum(inputs[0], &dx);
                }
                Op::Relu => {
                    let x = self.val(inputs[0]);
                    let dx = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                    self.accum(inputs[0], &dx);
                }
                Op::Dot => {
                    let s = g.item();
                    let ga = self.val(inputs[1]).map(|v| s * v);
                    let gb = self.val(inputs[0]).map(|v| s * v);
                    self.accum(inputs[0], &ga);
                    self.accum(inputs[1], &gb);
                }
                Op::SumAll => {
                    let s = g.item();
                    let shape = self.val(inputs[0]).shape().to_vec();
                    let dx = RealArray::zeros(shape).map(|_| s);
                    self.accum(inputs[0], &dx);
                }
                Op::MeanAll => {
                    let n = self.val(inputs[0]).len() as f64;
                    let s = g.item() / n;
                    let shape = self.val(inputs[0]).shape().to_vec();
                    let dx = RealArray::zeros(shape).map(|_| s);
                    self.accum(inputs[0], &dx);
                }
                Op::Square => {
                    let x = self.val(inputs[0]);
                    let dx = g.zip_map(x, |gv, xv| gv * 2.0 * xv)?;
                    self.accum(inputs[0], &dx);
                }
                Op::Log => {
                    let x = self.val(inputs[0]);
                    let dx = g.zip_map(x, |gv, xv| gv / xv)?;
                    self.accum(inputs[0], &dx);
                }
                Op::Exp => {
                    let dx = g.zip_map(&out, |gv, y| gv * y)?;
                    self.accum(inputs[0], &dx);
                }
                Op::Scale(c) => {
                    let dx = g.map(|v| v * c);
                    self.accum(inputs[0], &dx);
                }
                Op::AddConst => {
                    self.accum(inputs[0], &g);
                }
                Op::RowSumSq => {
                    let x = self.val(inputs[0]);
                    let d = x.cols();
                    let mut dx = RealArray::zeros(x.shape().to_vec());
                    for r in 0..x.rows() {
                        let gr = g.values()[r];
                        for c in 0..d {
                            dx.values_mut()[r * d + c] = 2.0 * x.at(r, c) * gr;
                        }
                    }
                    self.accum(inputs[0], &dx);
                }
                Op::ConcatCols => {
                    let n = out.rows();
                    let mut col = 0usize;
                    for &p in &inputs {
                        let c = self.val(p).cols();
                        let shape = self.val(p).shape().to_vec();
                        let mut gp = RealArray::zeros(shape);
                        for r in 0..n {
                            let src = &g.row(r)[col..col + c];
                            gp.values_mut()[r * c..(r + 1) * c].copy_from_slice(src);
                        }
                        self.accum(p, &gp);
                        col += c;
                    }
                }
                Op::GatherRows(rows) => {
                    let t = self.val(inputs[0]);
                    let e = t.cols();
                    let mut gt = RealArray::zeros(t.shape().to_vec());
                    for (out_r, &tab_r) in rows.iter().enumerate() {
                        let src = g.row(out_r);
                        let dst = &mut gt.values_mut()[tab_r * e..(tab_r + 1) * e];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    self.accum(inputs[0], &gt);
                }
                Op::SoftmaxXent => {
                    let l = self.val(inputs[0]).clone();
                    let t = self.val(inputs[1]).clone();
                    let (n, k) = (l.rows(), l.cols());
                    let s = g.item() / n as f64;
                    let mut gl = RealArray::zeros(vec![n, k]);
                    for r in 0..n {
                        let row = l.row(r);
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                        let cls = t.values()[r] as usize;
                        for c in 0..k {
                            let p = (row[c] - mx).exp() / z;
                            let onehot = if c == cls { 1.0 } else { 0.0 };
                            gl.values_mut()[r * k + c] = s * (p - onehot);
                        }
                    }
                    self.accum(inputs[0], &gl);
                }
                Op::Cosine => {
                    let a = self.val(inputs[0]).clone();
                    let b = self.val(inputs[1]).clone();
                    let (na, nb) = (a.norm(), b.norm());
                    let y = out.item();
                    let s = g.item();
                    let ga = b
                        .map(|bv| bv / (na * nb))
                        .zip_map(&a.map(|av| y * av / (na * na)), |p, q| s * (p - q))?;
                    let gb = a
                        .map(|av| av / (na * nb))
                        .zip_map(&b.map(|bv| y * bv / (nb * nb)), |p, q| s * (p - q))?;
                    self.accum(inputs[0], &ga);
                    self.accum(inputs[1], &gb);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, g: &RealArray) {
        match &mut self.nodes[id.0].grad {
            Some(existing) => existing.axpy(1.0, g),
            slot @ None => *slot = Some(g.clone()),
        }
    }
}
