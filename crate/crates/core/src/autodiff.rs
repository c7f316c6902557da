//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Every op records its inputs and whatever forward state its backward pass
//! needs. Parameters live in a [`ParamStore`] and enter the tape as leaves
//! through [`Tape::param`]; after [`Tape::backward`] their gradients are read
//! back with [`Tape::param_grads`].

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Layout of a padded batch of sequences flattened to `batch * seq` rows.
#[derive(Debug, Clone)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq: usize,
    /// `true` for real tokens, row-major over `(batch, seq)`.
    pub mask: Vec<bool>,
}

impl SeqLayout {
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.mask[b * self.seq..(b + 1) * self.seq].iter().filter(|m| **m).count())
            .collect()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    MulConst(Var, Mat),
    GradReverse(Var, f64),
    ConcatCols(Var, Var),
    Rows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        probs: Vec<Mat>,
    },
    MeanPool {
        x: Var,
        layout: SeqLayout,
    },
    WeightedBce {
        logits: Var,
        targets: Mat,
        weights: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Mat,
    },
    Mse {
        pred: Var,
        target: Mat,
    },
    DistToIdentity(Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Mat>>,
}

fn scalar(v: f64) -> Mat {
    Array2::from_elem((1, 1), v)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

fn layer_norm_forward(x: &Mat, gamma: &Mat, beta: &Mat) -> (Mat, Mat, Vec<f64>) {
    const EPS: f64 = 1e-5;
    let (n, h) = x.dim();
    let mut xhat = Mat::zeros((n, h));
    let mut inv_std = Vec::with_capacity(n);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / (var + EPS).sqrt();
        inv_std.push(is);
        for (j, v) in row.iter().enumerate() {
            xhat[[i, j]] = (v - mean) * is;
        }
    }
    let out = &xhat * gamma + beta;
    (out, xhat, inv_std)
}

/// Masked multi-head scaled dot-product attention. Keys at padding positions
/// are excluded from every softmax; each query row only sees real keys of
/// its own sequence.
fn attention_forward(q: &Mat, k: &Mat, v: &Mat, layout: &SeqLayout, heads: usize) -> (Mat, Vec<Mat>) {
    let h = q.ncols();
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let l = layout.seq;
    let mut out = Mat::zeros(q.dim());
    let mut probs = Vec::with_capacity(layout.batch * heads);
    for b in 0..layout.batch {
        let base = b * l;
        let keys: Vec<usize> = (0..l).filter(|&j| layout.mask[base + j]).collect();
        for hd in 0..heads {
            let c0 = hd * d;
            let mut p = Mat::zeros((l, l));
            for i in 0..l {
                let qi = q.slice(s![base + i, c0..c0 + d]);
                let mut max = f64::NEG_INFINITY;
                for &j in &keys {
                    let kj = k.slice(s![base + j, c0..c0 + d]);
                    let sc = qi.dot(&kj) * scale;
                    p[[i, j]] = sc;
                    max = max.max(sc);
                }
                let mut z = 0.0;
                for &j in &keys {
                    let e = (p[[i, j]] - max).exp();
                    p[[i, j]] = e;
                    z += e;
                }
                for &j in &keys {
                    p[[i, j]] /= z;
                }
                for &j in &keys {
                    let pij = p[[i, j]];
                    for c in 0..d {
                        out[[base + i, c0 + c]] += pij * v[[base + j, c0 + c]];
                    }
                }
            }
            probs.push(p);
        }
    }
    (out, probs)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    /// Adds a `1 x m` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, c))
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::GradReverse(a, lambda))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Row gather (embedding lookup, row selection); indices may repeat.
    pub fn rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(0), &idx);
        self.push(value, Op::Rows(a, idx))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, xhat, inv_std) = layer_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: &SeqLayout, heads: usize) -> Var {
        let (value, probs) = attention_forward(self.value(q), self.value(k), self.value(v), layout, heads);
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                layout: layout.clone(),
                heads,
                probs,
            },
        )
    }

    /// Mean over the real (unmasked) rows of each sequence: `batch x h`.
    pub fn mean_pool(&mut self, x: Var, layout: &SeqLayout) -> Var {
        let xv = self.value(x);
        let h = xv.ncols();
        let mut value = Mat::zeros((layout.batch, h));
        for b in 0..layout.batch {
            let mut n = 0usize;
            for t in 0..layout.seq {
                let r = b * layout.seq + t;
                if layout.mask[r] {
                    n += 1;
                    for c in 0..h {
                        value[[b, c]] += xv[[r, c]];
                    }
                }
            }
            if n > 0 {
                value.row_mut(b).mapv_inplace(|v| v / n as f64);
            }
        }
        self.push(
            value,
            Op::MeanPool {
                x,
                layout: layout.clone(),
            },
        )
    }

    /// Mean over all `n x C` terms of
    /// `-(w_c * y * log sigmoid(x) + (1 - y) * log(1 - sigmoid(x)))`.
    pub fn weighted_bce(&mut self, logits: Var, targets: Mat, weights: &[f64]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim(), "weighted_bce: shape mismatch");
        let total = x.len().max(1) as f64;
        let mut sum = 0.0;
        for ((i, c), &xv) in x.indexed_iter() {
            let y = targets[[i, c]];
            sum += weights[c] * y * softplus(-xv) + (1.0 - y) * softplus(xv);
        }
        self.push(
            scalar(sum / total),
            Op::WeightedBce {
                logits,
                targets,
                weights: weights.to_vec(),
            },
        )
    }

    /// Mean softmax cross-entropy against integer labels.
    pub fn softmax_ce(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let x = self.value(logits);
        let n = x.nrows();
        let mut probs = Mat::zeros(x.dim());
        let mut sum = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs[[i, j]] = (v - max).exp() / z;
            }
            sum += max + z.ln() - row[labels[i]];
        }
        let value = if n == 0 { 0.0 } else { sum / n as f64 };
        self.push(scalar(value), Op::SoftmaxCe { logits, labels, probs })
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Mat) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mse: shape mismatch");
        let n = p.len().max(1) as f64;
        let value = (p - &target).mapv(|d| d * d).sum() / n;
        self.push(scalar(value), Op::Mse { pred, target })
    }

    /// Squared Frobenius distance of a square matrix from the identity.
    pub fn dist_to_identity(&mut self, w: Var) -> Var {
        let value = frobenius_to_identity(self.value(w));
        self.push(scalar(value), Op::DistToIdentity(w))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let value = terms.iter().map(|(v, c)| c * self.scalar_value(*v)).sum();
        self.push(scalar(value), Op::WeightedSum(terms.to_vec()))
    }

    fn accumulate(&mut self, v: Var, g: Mat) {
        match &mut self.grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagates from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) {
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            let contributions = self.node_backward(idx, &g);
            self.grads[idx] = Some(g);
            for (v, dg) in contributions {
                self.accumulate(v, dg);
            }
        }
    }

    fn node_backward(&self, idx: usize, g: &Mat) -> Vec<(Var, Mat)> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![(*a, g.dot(&bv.t())), (*b, av.t().dot(g))]
            }
            Op::MatMulT(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![(*a, g.dot(bv)), (*b, g.t().dot(av))]
            }
            Op::AddBias(a, bias) => {
                let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(*a, g.clone()), (*bias, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut out = g.clone();
                out.zip_mut_with(av, |o, x| {
                    if *x <= 0.0 {
                        *o = 0.0
                    }
                });
                vec![(*a, out)]
            }
            Op::Tanh(a) => {
                let mut out = g.clone();
                out.zip_mut_with(&node.value, |o, y| *o *= 1.0 - y * y);
                vec![(*a, out)]
            }
            Op::MulConst(a, c) => vec![(*a, g * c)],
            Op::GradReverse(a, lambda) => vec![(*a, g * (-lambda))],
            Op::ConcatCols(a, b) => {
                let na = self.value(*a).ncols();
                vec![
                    (*a, g.slice(s![.., ..na]).to_owned()),
                    (*b, g.slice(s![.., na..]).to_owned()),
                ]
            }
            Op::Rows(a, idx) => {
                let mut out = Mat::zeros(self.value(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut dst = out.row_mut(src);
                    dst += &g.row(r);
                }
                vec![(*a, out)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let h = xhat.ncols() as f64;
                let dgamma = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dxhat = g * gv;
                let mut dx = Mat::zeros(xhat.dim());
                for i in 0..xhat.nrows() {
                    let dr = dxhat.row(i);
                    let xr = xhat.row(i);
                    let mean_d = dr.sum() / h;
                    let mean_dx = dr.dot(&xr) / h;
                    for j in 0..xhat.ncols() {
                        dx[[i, j]] = inv_std[i] * (dr[j] - mean_d - xr[j] * mean_dx);
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.ncols() / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let l = layout.seq;
                let mut dq = Mat::zeros(qv.dim());
                let mut dk = Mat::zeros(kv.dim());
                let mut dv = Mat::zeros(vv.dim());
                for b in 0..layout.batch {
                    let base = b * l;
                    let keys: Vec<usize> = (0..l).filter(|&j| layout.mask[base + j]).collect();
                    for hd in 0..*heads {
                        let c0 = hd * d;
                        let p = &probs[b * heads + hd];
                        for i in 0..l {
                            let go = g.slice(s![base + i, c0..c0 + d]);
                            // dP_ij = dO_i . V_j ; dS = P * (dP - sum_j P dP)
                            let mut dp = vec![0.0; keys.len()];
                            let mut acc = 0.0;
                            for (t, &j) in keys.iter().enumerate() {
                                let vj = vv.slice(s![base + j, c0..c0 + d]);
                                dp[t] = go.dot(&vj);
                                acc += p[[i, j]] * dp[t];
                            }
                            for (t, &j) in keys.iter().enumerate() {
                                let pij = p[[i, j]];
                                let ds = pij * (dp[t] - acc) * scale;
                                for c in 0..d {
                                    dv[[base + j, c0 + c]] += pij * go[c];
                                    dq[[base + i, c0 + c]] += ds * kv[[base + j, c0 + c]];
                                    dk[[base + j, c0 + c]] += ds * qv[[base + i, c0 + c]];
                                }
                            }
                        }
                    }
                }
                vec![(*q, dq), (*k, dk), (*v, dv)]
            }
            Op::MeanPool { x, layout } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.dim());
                let lens = layout.lengths();
                for b in 0..layout.batch {
                    if lens[b] == 0 {
                        continue;
                    }
                    let inv = 1.0 / lens[b] as f64;
                    for t in 0..layout.seq {
                        let r = b * layout.seq + t;
                        if layout.mask[r] {
                            for c in 0..xv.ncols() {
                                dx[[r, c]] = g[[b, c]] * inv;
                            }
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::WeightedBce {
                logits,
                targets,
                weights,
            } => {
                let x = self.value(*logits);
                let scale = g[[0, 0]] / x.len().max(1) as f64;
                let mut dx = Mat::zeros(x.dim());
                for ((i, c), &xv) in x.indexed_iter() {
                    let y = targets[[i, c]];
                    let s = sigmoid(xv);
                    dx[[i, c]] = scale * (-weights[c] * y * (1.0 - s) + (1.0 - y) * s);
                }
                vec![(*logits, dx)]
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let n = probs.nrows().max(1) as f64;
                let mut dx = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    dx[[i, y]] -= 1.0;
                }
                dx *= g[[0, 0]] / n;
                vec![(*logits, dx)]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let n = p.len().max(1) as f64;
                let dx = (p - target) * (2.0 * g[[0, 0]] / n);
                vec![(*pred, dx)]
            }
            Op::DistToIdentity(w) => {
                let wv = self.value(*w);
                let mut dx = wv * (2.0 * g[[0, 0]]);
                for i in 0..wv.nrows().min(wv.ncols()) {
                    dx[[i, i]] -= 2.0 * g[[0, 0]];
                }
                vec![(*w, dx)]
            }
            Op::WeightedSum(terms) => terms.iter().map(|(v, c)| (*v, scalar(c * g[[0, 0]]))).collect(),
        }
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter that took part in the graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Mat)> {
        let mut out: Vec<(ParamId, Mat)> = self
            .params
            .iter()
            .filter_map(|(id, v)| self.grad(*v).map(|g| (*id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// `||w - I||_F^2`.
pub fn frobenius_to_identity(w: &Mat) -> f64 {
    w.indexed_iter()
        .map(|((i, j), v)| {
            let d = if i == j { v - 1.0 } else { *v };
            d * d
        })
        .sum()
}
