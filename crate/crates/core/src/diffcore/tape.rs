//! Reverse accumulation over a recorded tape of tensor operations.
//!
//! The op set is exactly what the feature-graph network needs (embedding
//! gather, per-node transforms, weighted-mean aggregation, heads and the
//! clipped cross-entropy), plus a handful of elementwise ops used to build
//! the adjacency tensor from its logits. Nodes are appended in evaluation
//! order, so a single reverse sweep visits every consumer before its inputs.

use crate::diffcore::kernels::{logit_scalar, sigmoid_scalar, LOGIT_EPS};
use crate::diffcore::params::{ParamId, ParamStore};
use crate::error::{FivesError, Result};
use crate::tensor::Tensor;

/// Probability clipping used by the cross-entropy op.
pub const PROB_CLIP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Sigmoid(usize),
    Logit(usize),
    Scale(usize, f64),
    Add(usize, usize),
    Mul(usize, usize),
    Sum(usize),
    Mean(usize),
    MatMul(usize, usize),
    Linear { x: usize, w: usize, b: usize },
    Gather { table: usize, rows: Vec<usize> },
    NodeTransform { input: usize, weights: usize },
    Aggregate { messages: usize, weights: usize, eps: f64 },
    Reshape(usize),
    MaskMul(usize, Vec<f64>),
    StraightThrough(usize),
    Bce { probs: usize, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    binding: Option<(ParamId, usize)>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn dim_err(left: &[usize], right: &[usize], context: &'static str) -> FivesError {
    FivesError::Dimension {
        left: left.to_vec(),
        right: right.to_vec(),
        context,
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            binding: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            binding: None,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that tracks gradient but is not bound to a stored parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            binding: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf holding a copy of a stored parameter; [`Tape::backward`]
    /// accumulates into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            binding: Some((id, 0)),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf bound to the contiguous block `[offset, offset + prod(shape))`
    /// of a stored parameter.
    pub fn param_slice(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        offset: usize,
        shape: &[usize],
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = store.value(id).data();
        if offset + n > src.len() {
            return Err(dim_err(&[offset, n], store.value(id).shape(), "param slice"));
        }
        let value = Tensor::new(shape.to_vec(), src[offset..offset + n].to_vec())?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            binding: Some((id, offset)),
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid_scalar);
        self.push(v, Op::Sigmoid(x.0), &[x.0])
    }

    pub fn logit(&mut self, x: Var) -> Var {
        let v = self.value(x).map(logit_scalar);
        self.push(v, Op::Logit(x.0), &[x.0])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x.0, c), &[x.0])
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err(sa, sb, context));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(v, Op::Mean(x.0), &[x.0])
    }

    /// `[p, q] x [q, r] -> [p, r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[p, q], &[q2, r]) = (ta.shape(), tb.shape()) else {
            return Err(dim_err(ta.shape(), tb.shape(), "matmul operands must be rank 2"));
        };
        if q != q2 {
            return Err(dim_err(ta.shape(), tb.shape(), "matmul inner dimension"));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for k in 0..q {
                let aik = ad[i * q + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..r {
                    out[i * r + j] += aik * bd[k * r + j];
                }
            }
        }
        let v = Tensor::matrix(p, r, out)?;
        Ok(self.push(v, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `x [n, in]`, `w [out, in]`, `b [out]` -> `[n, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = crate::diffcore::kernels::linear(self.value(x), self.value(w), self.value(b))?;
        if self.value(x).ndim() != 2 {
            return Err(dim_err(self.value(x).shape(), self.value(w).shape(), "tape linear expects [n, in]"));
        }
        Ok(self.push(v, Op::Linear { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0]))
    }

    /// Row lookup: `table [V, d]`, `rows` indices -> `[rows.len(), d]`.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let &[n_rows, d] = t.shape() else {
            return Err(dim_err(t.shape(), &[], "gather table must be rank 2"));
        };
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            if r >= n_rows {
                return Err(FivesError::Lookup(format!(
                    "row {r} outside table with {n_rows} rows"
                )));
            }
            out.extend_from_slice(&t.data()[r * d..(r + 1) * d]);
        }
        let v = Tensor::matrix(rows.len(), d, out)?;
        Ok(self.push(v, Op::Gather { table: table.0, rows }, &[table.0]))
    }

    /// Per-node linear map: `input [B, m, d]`, `weights [m, d_out, d]`,
    /// `out[b, j] = weights[j] · input[b, j]`.
    pub fn node_transform(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(weights));
        let (&[bsz, m, d], &[m2, r, c]) = (ti.shape(), tw.shape()) else {
            return Err(dim_err(ti.shape(), tw.shape(), "node_transform expects [B,m,d] and [m,r,d]"));
        };
        if m != m2 || c != d {
            return Err(dim_err(ti.shape(), tw.shape(), "node_transform shapes"));
        }
        let (id, wd) = (ti.data(), tw.data());
        let mut out = vec![0.0; bsz * m * r];
        for b in 0..bsz {
            for j in 0..m {
                let x = &id[(b * m + j) * d..(b * m + j + 1) * d];
                let wj = &wd[j * r * d..(j + 1) * r * d];
                let o = &mut out[(b * m + j) * r..(b * m + j + 1) * r];
                for (row, oo) in o.iter_mut().enumerate() {
                    let wr = &wj[row * d..(row + 1) * d];
                    *oo = wr.iter().zip(x).map(|(p, q)| p * q).sum();
                }
            }
        }
        let v = Tensor::new(vec![bsz, m, r], out)?;
        Ok(self.push(v, Op::NodeTransform { input: input.0, weights: weights.0 }, &[input.0, weights.0]))
    }

    /// Batched weighted mean: `messages [B, m, d]`, `weights [m, m]`,
    /// `out[b, i] = sum_j w[i, j] messages[b, j] / max(sum_j w[i, j], eps)`.
    pub fn aggregate(&mut self, messages: Var, weights: Var, eps: f64) -> Result<Var> {
        let (tm, tw) = (self.value(messages), self.value(weights));
        let (&[bsz, m, d], &[m1, m2]) = (tm.shape(), tw.shape()) else {
            return Err(dim_err(tm.shape(), tw.shape(), "aggregate expects [B,m,d] and [m,m]"));
        };
        if m1 != m || m2 != m {
            return Err(dim_err(tm.shape(), tw.shape(), "aggregate shapes"));
        }
        let (md, wd) = (tm.data(), tw.data());
        let denoms: Vec<f64> = (0..m)
            .map(|i| wd[i * m..(i + 1) * m].iter().sum::<f64>().max(eps))
            .collect();
        let mut out = vec![0.0; bsz * m * d];
        for b in 0..bsz {
            let msg = &md[b * m * d..(b + 1) * m * d];
            for i in 0..m {
                let o = &mut out[(b * m + i) * d..(b * m + i + 1) * d];
                for j in 0..m {
                    let w = wd[i * m + j];
                    if w == 0.0 {
                        continue;
                    }
                    for (oo, x) in o.iter_mut().zip(&msg[j * d..(j + 1) * d]) {
                        *oo += w * x;
                    }
                }
                for oo in o.iter_mut() {
                    *oo /= denoms[i];
                }
            }
        }
        let v = Tensor::new(vec![bsz, m, d], out)?;
        Ok(self.push(
            v,
            Op::Aggregate { messages: messages.0, weights: weights.0, eps },
            &[messages.0, weights.0],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x.0), &[x.0]))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return Err(dim_err(t.shape(), &[mask.len()], "mask length"));
        }
        let data = t.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(v, Op::MaskMul(x.0, mask), &[x.0]))
    }

    /// Forward value `value`, backward identity into `x`.
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.value(x).shape() {
            return Err(dim_err(value.shape(), self.value(x).shape(), "straight-through value"));
        }
        Ok(self.push(value, Op::StraightThrough(x.0), &[x.0]))
    }

    /// Mean binary cross-entropy of probabilities clipped to
    /// `[PROB_CLIP, 1 - PROB_CLIP]`.
    pub fn bce(&mut self, probs: Var, labels: Vec<f64>) -> Result<Var> {
        let t = self.value(probs);
        if labels.len() != t.len() || labels.is_empty() {
            return Err(dim_err(t.shape(), &[labels.len()], "bce labels"));
        }
        let n = labels.len() as f64;
        let total: f64 = t
            .data()
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let v = Tensor::scalar(total / n);
        Ok(self.push(v, Op::Bce { probs: probs.0, labels }, &[probs.0]))
    }

    /// Runs the reverse sweep from a scalar `loss` and returns per-node
    /// gradients for every leaf that tracks them.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(FivesError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d(loss)/d(param) into `store` for every bound leaf.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let g = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some((id, offset)), Some(grad)) = (node.binding, g.grads[idx].as_ref()) {
                store.accumulate(id, offset, grad);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let y = nodes[idx].value.data();
        // Accumulate into input `i` only when it tracks gradient.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[i].needs_grad {
                return;
            }
            let slot = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
            f(slot);
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for ((gx, &gyy), &yy) in g.iter_mut().zip(gy).zip(y) {
                    *gx += gyy * yy * (1.0 - yy);
                }
            }),
            Op::Logit(x) => {
                let xv = nodes[*x].value.data();
                acc(*x, &mut |g| {
                    for ((gx, &gyy), &p) in g.iter_mut().zip(gy).zip(xv) {
                        if p > LOGIT_EPS && p < 1.0 - LOGIT_EPS {
                            *gx += gyy / (p * (1.0 - p));
                        }
                    }
                })
            }
            Op::Scale(x, c) => acc(*x, &mut |g| {
                for (gx, &gyy) in g.iter_mut().zip(gy) {
                    *gx += c * gyy;
                }
            }),
            Op::Add(a, b) => {
                for i in [*a, *b] {
                    acc(i, &mut |g| {
                        for (gx, &gyy) in g.iter_mut().zip(gy) {
                            *gx += gyy;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                acc(*a, &mut |g| {
                    for ((gx, &gyy), &o) in g.iter_mut().zip(gy).zip(bv) {
                        *gx += gyy * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gx, &gyy), &o) in g.iter_mut().zip(gy).zip(av) {
                        *gx += gyy * o;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| {
                for gx in g.iter_mut() {
                    *gx += gy[0];
                }
            }),
            Op::Mean(x) => {
                let n = nodes[*x].value.len().max(1) as f64;
                acc(*x, &mut |g| {
                    for gx in g.iter_mut() {
                        *gx += gy[0] / n;
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ad, bd) = (ta.data(), tb.data());
                acc(*a, &mut |g| {
                    for i in 0..p {
                        for k in 0..q {
                            let mut s = 0.0;
                            for j in 0..r {
                                s += gy[i * r + j] * bd[k * r + j];
                            }
                            g[i * q + k] += s;
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..p {
                        for k in 0..q {
                            let aik = ad[i * q + k];
                            for j in 0..r {
                                g[k * r + j] += aik * gy[i * r + j];
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (&nodes[*x].value, &nodes[*w].value);
                let (n, inner) = (tx.shape()[0], tx.shape()[1]);
                let out = tw.shape()[0];
                let (xd, wd) = (tx.data(), tw.data());
                acc(*x, &mut |g| {
                    for r in 0..n {
                        for o in 0..out {
                            let gyy = gy[r * out + o];
                            for c in 0..inner {
                                g[r * inner + c] += gyy * wd[o * inner + c];
                            }
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for r in 0..n {
                        for o in 0..out {
                            let gyy = gy[r * out + o];
                            for c in 0..inner {
                                g[o * inner + c] += gyy * xd[r * inner + c];
                            }
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for r in 0..n {
                        for o in 0..out {
                            g[o] += gy[r * out + o];
                        }
                    }
                });
            }
            Op::Gather { table, rows } => {
                let d = nodes[*table].value.shape()[1];
                acc(*table, &mut |g| {
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..d {
                            g[r * d + c] += gy[k * d + c];
                        }
                    }
                })
            }
            Op::NodeTransform { input, weights } => {
                let (ti, tw) = (&nodes[*input].value, &nodes[*weights].value);
                let (bsz, m, d) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
                let r = tw.shape()[1];
                let (id, wd) = (ti.data(), tw.data());
                acc(*input, &mut |g| {
                    for b in 0..bsz {
                        for j in 0..m {
                            let gyo = &gy[(b * m + j) * r..(b * m + j + 1) * r];
                            let wj = &wd[j * r * d..(j + 1) * r * d];
                            let gx = &mut g[(b * m + j) * d..(b * m + j + 1) * d];
                            for (row, &gv) in gyo.iter().enumerate() {
                                for (gc, wv) in gx.iter_mut().zip(&wj[row * d..(row + 1) * d]) {
                                    *gc += gv * wv;
                                }
                            }
                        }
                    }
                });
                acc(*weights, &mut |g| {
                    for b in 0..bsz {
                        for j in 0..m {
                            let gyo = &gy[(b * m + j) * r..(b * m + j + 1) * r];
                            let x = &id[(b * m + j) * d..(b * m + j + 1) * d];
                            let gw = &mut g[j * r * d..(j + 1) * r * d];
                            for (row, &gv) in gyo.iter().enumerate() {
                                for (gc, xv) in gw[row * d..(row + 1) * d].iter_mut().zip(x) {
                                    *gc += gv * xv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Aggregate { messages, weights, eps } => {
                let (tm, tw) = (&nodes[*messages].value, &nodes[*weights].value);
                let (bsz, m, d) = (tm.shape()[0], tm.shape()[1], tm.shape()[2]);
                let (md, wd) = (tm.data(), tw.data());
                let totals: Vec<f64> = (0..m).map(|i| wd[i * m..(i + 1) * m].iter().sum()).collect();
                let denoms: Vec<f64> = totals.iter().map(|t| t.max(*eps)).collect();
                acc(*messages, &mut |g| {
                    for b in 0..bsz {
                        for i in 0..m {
                            let gyi = &gy[(b * m + i) * d..(b * m + i + 1) * d];
                            for j in 0..m {
                                let c = wd[i * m + j] / denoms[i];
                                if c == 0.0 {
                                    continue;
                                }
                                let gm = &mut g[(b * m + j) * d..(b * m + j + 1) * d];
                                for (gg, &v) in gm.iter_mut().zip(gyi) {
                                    *gg += c * v;
                                }
                            }
                        }
                    }
                });
                acc(*weights, &mut |g| {
                    for i in 0..m {
                        let normalized = totals[i] > *eps;
                        for j in 0..m {
                            let mut s = 0.0;
                            for b in 0..bsz {
                                let gyi = &gy[(b * m + i) * d..(b * m + i + 1) * d];
                                let msg = &md[(b * m + j) * d..(b * m + j + 1) * d];
                                let yi = &y[(b * m + i) * d..(b * m + i + 1) * d];
                                for c in 0..d {
                                    let dy = if normalized { msg[c] - yi[c] } else { msg[c] };
                                    s += gyi[c] * dy;
                                }
                            }
                            g[i * m + j] += s / denoms[i];
                        }
                    }
                });
            }
            Op::Reshape(x) | Op::StraightThrough(x) => acc(*x, &mut |g| {
                for (gx, &gyy) in g.iter_mut().zip(gy) {
                    *gx += gyy;
                }
            }),
            Op::MaskMul(x, mask) => acc(*x, &mut |g| {
                for ((gx, &gyy), &mk) in g.iter_mut().zip(gy).zip(mask) {
                    *gx += gyy * mk;
                }
            }),
            Op::Bce { probs, labels } => {
                let pv = nodes[*probs].value.data();
                let n = labels.len() as f64;
                acc(*probs, &mut |g| {
                    for ((gx, &p), &yl) in g.iter_mut().zip(pv).zip(labels) {
                        if p > PROB_CLIP && p < 1.0 - PROB_CLIP {
                            *gx += -gy[0] / n * (yl / p - (1.0 - yl) / (1.0 - p));
                        }
                    }
                })
            }
        }
    }
}
