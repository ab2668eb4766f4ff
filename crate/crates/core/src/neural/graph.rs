//! Reverse-mode differentiation over a recorded tape of matrix ops.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Linear { x: usize, w: ParamId, b: ParamId },
    Relu { x: usize },
    Add { a: usize, b: usize },
    SlotBias { x: usize, bias: ParamId },
    Reshape { x: usize },
    Attention { q: usize, k: usize, v: usize, heads: usize, seq: usize, probs: Vec<f64> },
    GatherHeads { h: usize, w: ParamId, b: ParamId, idx: Vec<Vec<usize>> },
    WeightedSqError { pred: usize, target: Tensor2, weights: Vec<f64>, denom: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Tape of forward computations against a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to parameters and graph inputs.
pub struct Backward {
    pub params: Grads,
    nodes: Vec<Option<Tensor2>>,
}

impl Backward {
    /// Gradient with respect to an input node, if it received any.
    pub fn input(&self, id: NodeId) -> Option<&Tensor2> {
        self.nodes[id.0].as_ref()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, t: Tensor2) -> NodeId {
        self.push(t, Op::Input)
    }

    /// `x · W + b` with `b` a 1 × out row.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let wv = self.params.value(w);
        let bv = self.params.value(b);
        if bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(shape_err("bias", bv.shape(), (1, wv.cols())));
        }
        if xv.cols() != wv.rows() {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let mut y = Tensor2::zeros(xv.rows(), wv.cols());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(bv.data());
        }
        gemm(xv, false, wv, false, &mut y, 1.0)?;
        Ok(self.push(y, Op::Linear { x: x.0, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x.0].value.clone();
        for v in y.data_mut() {
            *v = v.max(0.0);
        }
        self.push(y, Op::Relu { x: x.0 })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let mut y = av.clone();
        y.add_assign(bv);
        Ok(self.push(y, Op::Add { a: a.0, b: b.0 }))
    }

    /// Adds row `r mod S` of the S × d bias to row `r` of `x`.
    pub fn slot_bias(&mut self, x: NodeId, bias: ParamId) -> Result<NodeId> {
        let bv = self.params.value(bias);
        let mut y = self.nodes[x.0].value.clone();
        if y.cols() != bv.cols() || bv.rows() == 0 || y.rows() % bv.rows() != 0 {
            return Err(shape_err("slot bias", y.shape(), bv.shape()));
        }
        for r in 0..y.rows() {
            for (a, b) in y.row_mut(r).iter_mut().zip(bv.row(r % bv.rows())) {
                *a += b;
            }
        }
        Ok(self.push(y, Op::SlotBias { x: x.0, bias }))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let y = self.nodes[x.0].value.clone().reshaped(rows, cols)?;
        Ok(self.push(y, Op::Reshape { x: x.0 }))
    }

    /// Scaled dot-product attention over consecutive groups of `seq` rows,
    /// with the width split into `heads` heads. Heads stay concatenated.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, seq: usize) -> Result<NodeId> {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let (rows, width) = qv.shape();
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
            return Err(shape_err("attention inputs", kv.shape(), qv.shape()));
        }
        if heads == 0 || width % heads != 0 {
            return Err(Error::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::Shape(format!("{rows} rows not a multiple of sequence length {seq}")));
        }
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = rows / seq;
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = Tensor2::zeros(rows, width);
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                for i in 0..seq {
                    let qi = &qv.row(b * seq + i)[cols.clone()];
                    let row = &mut p[i * seq..(i + 1) * seq];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kv.row(b * seq + j)[cols.clone()];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= total;
                    }
                    let o = &mut out.row_mut(b * seq + i)[cols.clone()];
                    for (j, a) in row.iter().enumerate() {
                        for (oc, vc) in o.iter_mut().zip(&vv.row(b * seq + j)[cols.clone()]) {
                            *oc += a * vc;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                seq,
                probs,
            },
        ))
    }

    /// Attention weights recorded by an attention node, laid out as
    /// `[batch][head][query][key]`.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// For each row `r`, `Σ_j (h_r · W[:, idx[r][j]] + b[idx[r][j]])`: the
    /// sum of selected output columns of a linear layer, without computing
    /// the unselected ones. Output is rows × 1.
    pub fn gather_heads(&mut self, h: NodeId, w: ParamId, b: ParamId, idx: Vec<Vec<usize>>) -> Result<NodeId> {
        let hv = &self.nodes[h.0].value;
        let (wv, bv) = (self.params.value(w), self.params.value(b));
        if hv.cols() != wv.rows() || idx.len() != hv.rows() || bv.cols() != wv.cols() {
            return Err(shape_err("gather heads", hv.shape(), wv.shape()));
        }
        let n = wv.cols();
        if idx.iter().flatten().any(|&a| a >= n) {
            return Err(Error::Shape("gather index out of range".into()));
        }
        let mut y = Tensor2::zeros(hv.rows(), 1);
        for (r, cols) in idx.iter().enumerate() {
            let hr = hv.row(r);
            let mut s = 0.0;
            for &a in cols {
                s += bv.data()[a];
                for (c, x) in hr.iter().enumerate() {
                    s += x * wv.data()[c * n + a];
                }
            }
            y.set(r, 0, s);
        }
        Ok(self.push(y, Op::GatherHeads { h: h.0, w, b, idx }))
    }

    /// `Σ_rc weights[c] · (pred − target)² / denom` as a 1 × 1 node.
    pub fn weighted_sq_error(&mut self, pred: NodeId, target: Tensor2, weights: Vec<f64>, denom: f64) -> Result<NodeId> {
        let pv = &self.nodes[pred.0].value;
        if pv.shape() != target.shape() || weights.len() != pv.cols() {
            return Err(shape_err("squared error", pv.shape(), target.shape()));
        }
        if !(denom > 0.0) {
            return Err(Error::Contract("loss denominator must be positive".into()));
        }
        let mut total = 0.0;
        for r in 0..pv.rows() {
            for (c, (p, t)) in pv.row(r).iter().zip(target.row(r)).enumerate() {
                total += weights[c] * (p - t) * (p - t);
            }
        }
        let y = Tensor2::from_vec(1, 1, vec![total / denom])?;
        Ok(self.push(
            y,
            Op::WeightedSqError {
                pred: pred.0,
                target,
                weights,
                denom,
            },
        ))
    }

    pub fn mse(&mut self, pred: NodeId, target: Tensor2) -> Result<NodeId> {
        let (r, c) = target.shape();
        self.weighted_sq_error(pred, target, vec![1.0; c], (r * c).max(1) as f64)
    }

    /// Gradients of the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Backward> {
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Diverged(format!("loss is {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        let mut pgrads = self.params.zero_grads();
        grads[loss.0] = Some(Tensor2::from_vec(1, 1, vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let wv = self.params.value(*w);
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    gemm(&dy, false, wv, true, &mut dx, 0.0)?;
                    accumulate(&mut grads[*x], dx);
                    let dw = param_grad(&mut pgrads, *w, wv.shape());
                    gemm(xv, true, &dy, false, dw, 1.0)?;
                    let db = param_grad(&mut pgrads, *b, (1, wv.cols()));
                    for r in 0..dy.rows() {
                        for (a, g) in db.data_mut().iter_mut().zip(dy.row(r)) {
                            *a += g;
                        }
                    }
                }
                Op::Relu { x } => {
                    let mut dx = dy;
                    for (g, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[*a], dy.clone());
                    accumulate(&mut grads[*b], dy);
                }
                Op::SlotBias { x, bias } => {
                    let slots = self.params.value(*bias).rows();
                    let db = param_grad(&mut pgrads, *bias, self.params.value(*bias).shape());
                    for r in 0..dy.rows() {
                        for (a, g) in db.row_mut(r % slots).iter_mut().zip(dy.row(r)) {
                            *a += g;
                        }
                    }
                    accumulate(&mut grads[*x], dy);
                }
                Op::Reshape { x } => {
                    let (r, c) = self.nodes[*x].value.shape();
                    accumulate(&mut grads[*x], dy.reshaped(r, c)?);
                }
                Op::Attention { q, k, v, heads, seq, probs } => {
                    let (dq, dk, dv) = self.attention_backward(&dy, *q, *k, *v, *heads, *seq, probs);
                    accumulate(&mut grads[*q], dq);
                    accumulate(&mut grads[*k], dk);
                    accumulate(&mut grads[*v], dv);
                }
                Op::GatherHeads { h, w, b, idx } => {
                    let hv = &self.nodes[*h].value;
                    let wv = self.params.value(*w);
                    let n = wv.cols();
                    let mut dh = Tensor2::zeros(hv.rows(), hv.cols());
                    {
                        let dw = param_grad(&mut pgrads, *w, wv.shape());
                        for (r, cols) in idx.iter().enumerate() {
                            let g = dy.get(r, 0);
                            for &a in cols {
                                for c in 0..hv.cols() {
                                    dh.data_mut()[r * hv.cols() + c] += g * wv.data()[c * n + a];
                                    dw.data_mut()[c * n + a] += g * hv.get(r, c);
                                }
                            }
                        }
                    }
                    let db = param_grad(&mut pgrads, *b, (1, n));
                    for (r, cols) in idx.iter().enumerate() {
                        for &a in cols {
                            db.data_mut()[a] += dy.get(r, 0);
                        }
                    }
                    accumulate(&mut grads[*h], dh);
                }
                Op::WeightedSqError { pred, target, weights, denom } => {
                    let pv = &self.nodes[*pred].value;
                    let g = dy.get(0, 0);
                    let mut dp = Tensor2::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        for c in 0..pv.cols() {
                            let e = pv.get(r, c) - target.get(r, c);
                            dp.set(r, c, g * 2.0 * weights[c] * e / denom);
                        }
                    }
                    accumulate(&mut grads[*pred], dp);
                }
            }
        }
        Ok(Backward {
            params: pgrads,
            nodes: grads,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        dy: &Tensor2,
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        seq: usize,
        probs: &[f64],
    ) -> (Tensor2, Tensor2, Tensor2) {
        let (qv, kv, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let (rows, width) = qv.shape();
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor2::zeros(rows, width);
        let mut dk = Tensor2::zeros(rows, width);
        let mut dv = Tensor2::zeros(rows, width);
        let mut da = vec![0.0; seq];
        for b in 0..rows / seq {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                for i in 0..seq {
                    let doi = &dy.row(b * seq + i)[cols.clone()];
                    let a = &p[i * seq..(i + 1) * seq];
                    for j in 0..seq {
                        da[j] = doi.iter().zip(&vv.row(b * seq + j)[cols.clone()]).map(|(x, y)| x * y).sum();
                        for (g, x) in dv.row_mut(b * seq + j)[cols.clone()].iter_mut().zip(doi) {
                            *g += a[j] * x;
                        }
                    }
                    let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for j in 0..seq {
                        let ds = a[j] * (da[j] - dot) * scale;
                        for c in cols.clone() {
                            dq.data_mut()[(b * seq + i) * width + c] += ds * kv.get(b * seq + j, c);
                            dk.data_mut()[(b * seq + j) * width + c] += ds * qv.get(b * seq + i, c);
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn accumulate(slot: &mut Option<Tensor2>, g: Tensor2) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn param_grad(g: &mut Grads, id: ParamId, shape: (usize, usize)) -> &mut Tensor2 {
    g.params[id].get_or_insert_with(|| Tensor2::zeros(shape.0, shape.1))
}
