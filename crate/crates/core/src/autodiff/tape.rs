//! Reverse-mode differentiation over a recorded sequence of matrix ops.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s together with
//! the values needed to run the pullback. Nodes are appended in evaluation
//! order, so walking the node list backwards is a reverse topological order.

use std::sync::Arc;

use crate::autodiff::sparse::{spmm_transpose, spmm_values, SparsePattern};
use crate::autodiff::tensor::{dot, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the parent values, the forward output and the
/// upstream gradient and returns one gradient per parent (or `None` when a
/// parent receives no gradient).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    RescaleNorm(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RepeatRows(Var),
    MeanRows(Var),
    Sum(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    SpMM {
        pattern: Arc<SparsePattern>,
        values: Var,
        dense: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
    },
    Margin {
        probs: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
        runner_up: Vec<usize>,
    },
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drops all recorded nodes and re-arms the tape.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        assert!(!self.consumed, "recording on a consumed tape; call reset()");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x c` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `a * norm / |a|` with the Frobenius norm. A zero input stays zero
    /// and passes no gradient.
    pub fn rescale_norm(&mut self, a: Var, norm: f64) -> Var {
        let v = self.value(a);
        let n = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = if n > 0.0 { v.scale(norm / n) } else { v.clone() };
        let rg = self.rg(&[a]);
        self.push(out, Op::RescaleNorm(a, norm), rg)
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return Err(Error::shape("add_const", format!("{:?} vs {:?}", av.shape(), c.shape())));
        }
        let mut out = av.clone();
        out.add_assign(c);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::AddConst(a), rg))
    }

    /// Elementwise product with a constant of identical shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return Err(Error::shape("mul_const", format!("{:?} vs {:?}", av.shape(), c.shape())));
        }
        let mut out = av.clone();
        for (o, v) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= v;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = self.value(a).row_softmax();
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ".to_string()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::shape("concat_rows", "column counts differ".to_string()));
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Stacks `times` copies of a single-row tensor.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(Error::shape("repeat_rows", format!("expected one row, got {:?}", av.shape())));
        }
        let mut data = Vec::with_capacity(times * av.cols());
        for _ in 0..times {
            data.extend_from_slice(av.data());
        }
        let out = Tensor::from_vec(times, av.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::RepeatRows(a), rg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::row_vector(vec![self.value(a).sum()]);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let rows = self.value(a).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {rows}")));
        }
        let out = self.value(a).gather_rows(idx);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Sparse-dense product. `values` is a `1 x nnz` row holding the stored
    /// entries of `pattern`; it may itself be differentiable.
    pub fn spmm(&mut self, pattern: &Arc<SparsePattern>, values: Var, dense: Var) -> Result<Var> {
        let vals = self.value(values);
        if vals.len() != pattern.nnz() {
            return Err(Error::shape(
                "spmm",
                format!("{} values for {} stored entries", vals.len(), pattern.nnz()),
            ));
        }
        let out = spmm_values(pattern, vals.data(), self.value(dense))?;
        let rg = self.rg(&[values, dense]);
        Ok(self.push(
            out,
            Op::SpMM {
                pattern: Arc::clone(pattern),
                values,
                dense,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under `row_softmax(logits)`
    /// restricted to `rows`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        check_rows_labels("softmax_cross_entropy", lv, rows, labels)?;
        let mut total = 0.0;
        for (&r, &y) in rows.iter().zip(labels) {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let out = Tensor::row_vector(vec![total / rows.len().max(1) as f64]);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Sum over `rows` of `P[r, y] - max_{k != y} P[r, k]`. Ties in the max
    /// resolve to the smaller class index.
    pub fn margin(&mut self, probs: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        check_rows_labels("margin", pv, rows, labels)?;
        if pv.cols() < 2 {
            return Err(Error::shape("margin", "need at least two classes".to_string()));
        }
        let mut total = 0.0;
        let mut runner_up = Vec::with_capacity(rows.len());
        for (&r, &y) in rows.iter().zip(labels) {
            let row = pv.row(r);
            let k = best_other_class(row, y);
            runner_up.push(k);
            total += row[y] - row[k];
        }
        let out = Tensor::row_vector(vec![total]);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            out,
            Op::Margin {
                probs,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
                runner_up,
            },
            rg,
        ))
    }

    /// Records the result of an externally computed op.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        let rg = self.rg(inputs);
        self.push(output, Op::Custom(op, inputs.to_vec()), rg)
    }

    /// Runs the pullback from the scalar `loss` and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.pullback(i, &g);
            for (v, gv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gv),
                    slot @ None => *slot = Some(gv),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients { grads })
    }

    fn pullback(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut out = Vec::new();
                if want(*a) {
                    out.push((*a, g.matmul_t(val(*b))));
                }
                if want(*b) {
                    out.push((*b, val(*a).t_matmul(g)));
                }
                out
            }
            Op::AddBias(x, b) => {
                let mut out = Vec::new();
                if want(*b) {
                    let mut gb = g.mean_rows();
                    let rows = g.rows() as f64;
                    gb.data_mut().iter_mut().for_each(|v| *v *= rows);
                    out.push((*b, gb));
                }
                out.push((*x, g.clone()));
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::RescaleNorm(a, norm) => {
                let x = val(*a);
                let nn = x.data().iter().map(|v| v * v).sum::<f64>();
                if nn == 0.0 {
                    return vec![(*a, Tensor::zeros(x.rows(), x.cols()))];
                }
                let n = nn.sqrt();
                let xg: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let mut ga = g.clone();
                for (o, xv) in ga.data_mut().iter_mut().zip(x.data()) {
                    *o = norm / n * (*o - xv * xg / nn);
                }
                vec![(*a, ga)]
            }
            Op::AddConst(a) => vec![(*a, g.clone())],
            Op::MulConst(a, c) => {
                let mut ga = g.clone();
                for (o, v) in ga.data_mut().iter_mut().zip(c.data()) {
                    *o *= v;
                }
                vec![(*a, ga)]
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                for (o, &x) in ga.data_mut().iter_mut().zip(val(*a).data()) {
                    if x <= 0.0 {
                        *o = 0.0;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                for (o, &s) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= s * (1.0 - s);
                }
                vec![(*a, ga)]
            }
            Op::RowSoftmax(a) => {
                let s = &node.value;
                let mut ga = Tensor::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let (sr, gr) = (s.row(r), g.row(r));
                    let inner = dot(sr, gr);
                    for (o, (&sv, &gv)) in ga.row_mut(r).iter_mut().zip(sr.iter().zip(gr)) {
                        *o = sv * (gv - inner);
                    }
                }
                vec![(*a, ga)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let cols = val(p).cols();
                    if want(p) {
                        let mut gp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        out.push((p, gp));
                    }
                    offset += cols;
                }
                out
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                let cols = g.cols();
                for &p in parts {
                    let rows = val(p).rows();
                    if want(p) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        out.push((p, Tensor::from_vec(rows, cols, data).expect("shape")));
                    }
                    offset += rows;
                }
                out
            }
            Op::RepeatRows(a) => {
                let mut ga = g.mean_rows();
                let rows = g.rows() as f64;
                ga.data_mut().iter_mut().for_each(|v| *v *= rows);
                vec![(*a, ga)]
            }
            Op::MeanRows(a) => {
                let rows = val(*a).rows();
                let inv = 1.0 / rows as f64;
                let mut ga = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    for (o, &gv) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.data()[0]))]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::GatherRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &gv) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                vec![(*a, ga)]
            }
            Op::SpMM {
                pattern,
                values,
                dense,
            } => {
                let vals = val(*values).data();
                let mut out = Vec::new();
                if want(*dense) {
                    out.push((*dense, spmm_transpose(pattern, vals, g)));
                }
                if want(*values) {
                    let t = val(*dense);
                    let mut gv = vec![0.0; pattern.nnz()];
                    for r in 0..pattern.n_rows {
                        let g_row = g.row(r);
                        for k in pattern.row_range(r) {
                            gv[k] = dot(g_row, t.row(pattern.indices[k]));
                        }
                    }
                    out.push((*values, Tensor::row_vector(gv)));
                }
                out
            }
            Op::SoftmaxCrossEntropy {
                logits,
                rows,
                labels,
            } => {
                let lv = val(*logits);
                let scale = g.data()[0] / rows.len().max(1) as f64;
                let mut gl = Tensor::zeros(lv.rows(), lv.cols());
                for (&r, &y) in rows.iter().zip(labels) {
                    let mut p = lv.row(r).to_vec();
                    softmax_in_place(&mut p);
                    p[y] -= 1.0;
                    for (o, pv) in gl.row_mut(r).iter_mut().zip(p) {
                        *o += scale * pv;
                    }
                }
                vec![(*logits, gl)]
            }
            Op::Margin {
                probs,
                rows,
                labels,
                runner_up,
            } => {
                let pv = val(*probs);
                let s = g.data()[0];
                let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                for ((&r, &y), &k) in rows.iter().zip(labels).zip(runner_up) {
                    let row = gp.row_mut(r);
                    row[y] += s;
                    row[k] -= s;
                }
                vec![(*probs, gp)]
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                op.backward(&ins, &node.value, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gi, &v)| gi.map(|t| (v, t)))
                    .collect()
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry other than `exclude`; ties go to the smaller index.
pub fn best_other_class(row: &[f64], exclude: usize) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in row.iter().enumerate() {
        if k == exclude {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = k;
        }
    }
    best
}

fn check_rows_labels(op: &'static str, t: &Tensor, rows: &[usize], labels: &[usize]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::shape(op, format!("{} rows, {} labels", rows.len(), labels.len())));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= t.rows()) {
        return Err(Error::shape(op, format!("row {r} of {}", t.rows())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= t.cols()) {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: t.cols(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap());
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(2, 2));
        let s = tape.sigmoid(w);
        assert_eq!(tape.value(s).data(), &[0.5; 4]);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Tensor::filled(2, 2, 0.25));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(1, 1));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
        tape.reset();
        let w = tape.param(Tensor::zeros(1, 1));
        let loss = tape.sum(w);
        assert!(tape.backward(loss).is_ok());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::filled(2, 2, 1.0));
        let w = tape.param(Tensor::filled(2, 2, 2.0));
        let p = tape.matmul(c, w).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap(), &Tensor::filled(2, 2, 2.0));
    }

    #[test]
    fn margin_matches_hand_values() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.2, 0.7, 0.1]]).unwrap());
        let m = tape.margin(p, &[0], &[0]).unwrap();
        assert!((tape.scalar(m) - 0.5).abs() < 1e-12);
        let m = tape.margin(p, &[1], &[0]).unwrap();
        assert!((tape.scalar(m) + 0.5).abs() < 1e-12);
        let m = tape.margin(p, &[0, 1], &[0, 0]).unwrap();
        assert!(tape.scalar(m).abs() < 1e-12);
        assert!(matches!(
            tape.margin(p, &[0], &[3]),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let bias = tape.constant(Tensor::zeros(1, 2));
        assert!(tape.add_bias(a, bias).is_err());
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn rescale_norm_matches_finite_differences() {
        let x0 = vec![0.3, -1.2, 2.0];
        let weights = [0.5, 1.5, -0.7];
        let f = |x: &[f64]| {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter().zip(&weights).map(|(v, w)| w * v * 2.0 / n).sum::<f64>()
        };
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row_vector(x0.clone()));
        let y = tape.rescale_norm(w, 2.0);
        let norm: f64 = tape.value(y).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);
        let y = tape.mul_const(y, Tensor::row_vector(weights.to_vec())).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(w).unwrap().data().to_vec();
        for i in 0..3 {
            let (mut up, mut down) = (x0.clone(), x0.clone());
            up[i] += 1e-6;
            down[i] -= 1e-6;
            assert!((g[i] - (f(&up) - f(&down)) / 2e-6).abs() < 1e-7);
        }
    }

    #[test]
    fn rescale_norm_of_zero_stays_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(1, 3));
        let y = tape.rescale_norm(w, 5.0);
        assert_eq!(tape.value(y).data(), &[0.0; 3]);
        let loss = tape.sum(y);
        assert_eq!(tape.backward(loss).unwrap().get(w).unwrap(), &Tensor::zeros(1, 3));
    }
}
