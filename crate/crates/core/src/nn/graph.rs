//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as a node while the forward pass runs.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse.
//!
//! Parameters are borrowed from a [`ParamStore`] rather than copied; a
//! parameter used several times in one pass maps to a single node, and its
//! gradient is reported once in [`Gradients`].

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{axis_extents, gemm, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities inside the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Gather { src: Var, indices: Vec<usize> },
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    SliceLast { x: Var, start: usize },
    SumAll(Var),
    Bce { pred: Var, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    // None for parameters, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only constants and variables.
    pub fn detached() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.expect("param node without store").get(*id),
            (None, _) => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Variable, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// Adds a bias vector of length `k` to every row of `x` (`[..., k]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let k = *sx.last().unwrap_or(&0);
        if self.value(b).len() != k {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(k.max(1)) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Multiplies row `i` of `x` (`[n, ...]`) by the scalar `s[i]` (`s` has n elements).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.len() != tx.rows() {
            return Err(Error::shape("scale_rows", tx.shape(), ts.shape()));
        }
        let w = tx.row_len();
        let mut out = tx.clone();
        for (row, &sv) in out.data_mut().chunks_mut(w.max(1)).zip(ts.data()) {
            for o in row {
                *o *= sv;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(out, Op::ScaleRows(x, s), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::shape("softmax axis", t.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax { x, axis }, ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Selects rows of `src` along its first axis; this is the embedding lookup.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let rows = t.rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather index", t.shape(), &[bad]));
        }
        let w = t.row_len();
        let mut out = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        let ng = self.ng(src);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.gather(table, indices)
    }

    fn reduce_axis(&self, x: Var, axis: usize, scale: f64) -> Result<Tensor> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::shape("reduce axis", t.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let src = t.data();
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::new(shape, out)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.reduce_axis(x, axis, 1.0)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SumAxis { x, axis }, ng))
    }

    /// Averages over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = self.shape(x).get(axis).copied().unwrap_or(1).max(1);
        let out = self.reduce_axis(x, axis, 1.0 / len as f64)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::MeanAxis { x, axis }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let k = *t.shape().last().unwrap_or(&0);
        if start + len > k {
            return Err(Error::shape("slice_last", t.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(t.len() / k.max(1) * len);
        for row in t.data().chunks(k.max(1)) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceLast { x, start }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Mean binary cross-entropy of probabilities `pred` against 0/1 `labels`.
    pub fn bce_loss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != labels.len() || labels.is_empty() {
            return Err(Error::shape("bce_loss", p.shape(), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Domain(format!("label {bad} is not 0 or 1")));
        }
        let loss = bce(p.data(), labels);
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward called on non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads[i].take() {
                    params.insert(id, g);
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.ng(v) {
            return None;
        }
        let shape = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, gd, false, tb.data(), true, ga.data_mut(), 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, ta.data(), true, gd, false, gb.data_mut(), 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let k = gb.len();
                    for row in gd.chunks(k.max(1)) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (o, v) in gb.data_mut().iter_mut().zip(gd) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(gd).zip(tb.data()) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(gd).zip(ta.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let w = tx.row_len().max(1);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((orow, grow), sv) in
                        gx.data_mut().chunks_mut(w).zip(gd.chunks(w)).zip(ts.data())
                    {
                        for (o, gv) in orow.iter_mut().zip(grow) {
                            *o += gv * sv;
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *s) {
                    for ((o, grow), xrow) in
                        gs.data_mut().iter_mut().zip(gd.chunks(w)).zip(tx.data().chunks(w))
                    {
                        *o += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (o, v) in gx.data_mut().iter_mut().zip(gd) {
                        *o += v * c;
                    }
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, v), xv) in gx.data_mut().iter_mut().zip(gd).zip(tx.data()) {
                        if *xv > 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_ref().expect("sigmoid value");
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, v), yv) in gx.data_mut().iter_mut().zip(gd).zip(y.data()) {
                        *o += v * yv * (1.0 - yv);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.as_ref().expect("softmax value");
                let (outer, len, inner) = axis_extents(y.shape(), *axis);
                let yd = y.data();
                if let Some(gx) = self.slot(grads, *x) {
                    let gxd = gx.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                            for j in 0..len {
                                gxd[idx(j)] += yd[idx(j)] * (gd[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.as_ref().expect("concat value").shape();
                let (outer, total, inner) = axis_extents(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    let chunk = len * inner;
                    if let Some(gv) = self.slot(grads, v) {
                        let gvd = gv.data_mut();
                        for o in 0..outer {
                            let src = &gd[o * total * inner + offset * inner..][..chunk];
                            for (dst, s) in gvd[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Gather { src, indices } => {
                if let Some(gs) = self.slot(grads, *src) {
                    let w = gs.row_len().max(1);
                    let gsd = gs.data_mut();
                    for (r, &idx) in indices.iter().enumerate() {
                        for (dst, s) in gsd[idx * w..(idx + 1) * w].iter_mut().zip(&gd[r * w..]) {
                            *dst += s;
                        }
                    }
                }
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let scale = match node.op {
                    Op::MeanAxis { .. } => 1.0 / self.shape(*x)[*axis].max(1) as f64,
                    _ => 1.0,
                };
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    let gxd = gx.data_mut();
                    for o in 0..outer {
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            for i in 0..inner {
                                gxd[base + i] += gd[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.add_assign(g);
                }
            }
            Op::SliceLast { x, start } => {
                let k = *self.shape(*x).last().unwrap();
                let len = *g.shape().last().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for (orow, grow) in gx.data_mut().chunks_mut(k.max(1)).zip(gd.chunks(len.max(1))) {
                        for (o, v) in orow[*start..*start + len].iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for o in gx.data_mut() {
                        *o += gd[0];
                    }
                }
            }
            Op::Bce { pred, labels } => {
                let p = self.value(*pred).data();
                let n = labels.len() as f64;
                if let Some(gp) = self.slot(grads, *pred) {
                    for ((o, &pv), &y) in gp.data_mut().iter_mut().zip(p).zip(labels) {
                        // The clamp has zero derivative outside [eps, 1 - eps].
                        if pv > BCE_EPS && pv < 1.0 - BCE_EPS {
                            *o += gd[0] * (-(y / pv) + (1.0 - y) / (1.0 - pv)) / n;
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient with respect to a non-parameter node.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor> {
        self.params
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

/// Mean BCE with probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce(preds: &[f64], labels: &[f64]) -> f64 {
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    sum / preds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_and_its_derivative() {
        let mut g = Graph::detached();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data()[0], 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::detached();
        let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn bce_analytic_values() {
        assert!((bce(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(&[0.0], &[0.0]) < 1e-6);
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((bce(&[0.9, 0.2], &[1.0, 0.0]) - want).abs() < 1e-12);
        assert!((want - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_non_binary_labels() {
        let mut g = Graph::detached();
        let p = g.constant(t(&[1], &[0.3]));
        assert!(matches!(g.bce_loss(p, &[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_input_gets_no_gradient() {
        let mut g = Graph::detached();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let v = g.variable(t(&[2], &[3.0, 4.0]));
        let p = g.mul(c, v).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(v).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::detached();
        let v = g.variable(t(&[2], &[1.0, 2.0]));
        let r = g.relu(v);
        assert!(matches!(g.backward(r), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::detached();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let a = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let b = [1.5, -0.25, 0.8];
        let mut g = Graph::detached();
        let va = g.constant(t(&[2, 3], &a));
        let vb = g.constant(t(&[3, 1], &b));
        let c = g.matmul(va, vb).unwrap();
        for i in 0..2 {
            let mut want = 0.0;
            for k in 0..3 {
                want += a[i * 3 + k] * b[k];
            }
            assert!((g.value(c).data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::detached();
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.slice_last(c, 1, 2).unwrap();
        assert_eq!(g.value(s), g.value(b));
    }

    #[test]
    fn shared_param_reported_once() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[1], &[2.0])).unwrap();
        let mut g = Graph::new(&store);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let p = g.mul(a, b).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(w).unwrap().data(), &[4.0]);
    }
}
