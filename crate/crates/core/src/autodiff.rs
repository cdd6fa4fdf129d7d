//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar node w.r.t. every node that depends on a trainable
//! leaf. Recurrent cells and forward kinematics are single fused nodes with
//! hand-written adjoints, which keeps the tape short for long sequences.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::body::{fk_backward, fk_forward, FkCache, Skeleton, VERTEX_DIM};
use crate::error::{Error, Result};
use crate::motion::NUM_JOINTS;
use crate::scalar::Scalar;
use crate::tensor::{gemm_acc, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.data().len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

/// Saved gate activations of one GRU step.
pub(crate) struct GruCache<T> {
    pub r: Tensor<T>,
    pub u: Tensor<T>,
    pub n: Tensor<T>,
    /// Recurrent contribution to the candidate, `h W_hn + b_hn`.
    pub hn: Tensor<T>,
}

/// One GRU step for a batch.
///
/// Gates are packed `[reset, update, candidate]` along the columns of the
/// `3H`-wide weights. `h' = (1 - u) ⊙ h + u ⊙ n` with
/// `n = tanh(x W_n + b_in + r ⊙ (h U_n + b_hn))`.
pub(crate) fn gru_forward<T: Scalar>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    b_ih: &Tensor<T>,
    b_hh: &Tensor<T>,
) -> Result<(Tensor<T>, GruCache<T>)> {
    let (b, hid) = h.shape();
    let three = 3 * hid;
    if x.rows() != b
        || w_ih.shape() != (x.cols(), three)
        || w_hh.shape() != (hid, three)
        || b_ih.shape() != (1, three)
        || b_hh.shape() != (1, three)
    {
        return Err(Error::Dimension {
            context: "gru step",
            expected: format!(
                "x: {b}×{}, W_ih: {}×{three}, W_hh: {hid}×{three}, biases 1×{three}",
                x.cols(),
                x.cols()
            ),
            actual: format!(
                "x: {:?}, W_ih: {:?}, W_hh: {:?}, b_ih: {:?}, b_hh: {:?}",
                x.shape(),
                w_ih.shape(),
                w_hh.shape(),
                b_ih.shape(),
                b_hh.shape()
            ),
        });
    }
    let gi = x.matmul(w_ih);
    let gh = h.matmul(w_hh);
    let mut r = Tensor::zeros(b, hid);
    let mut u = Tensor::zeros(b, hid);
    let mut n = Tensor::zeros(b, hid);
    let mut hn = Tensor::zeros(b, hid);
    let mut out = Tensor::zeros(b, hid);
    let (bi, bh) = (b_ih.data(), b_hh.data());
    for row in 0..b {
        let (gir, ghr) = (gi.row(row), gh.row(row));
        let hr = h.row(row);
        for k in 0..hid {
            let rv = sigmoid(gir[k] + bi[k] + ghr[k] + bh[k]);
            let uv = sigmoid(gir[hid + k] + bi[hid + k] + ghr[hid + k] + bh[hid + k]);
            let hnv = ghr[2 * hid + k] + bh[2 * hid + k];
            let nv = (gir[2 * hid + k] + bi[2 * hid + k] + rv * hnv).tanh();
            r.set(row, k, rv);
            u.set(row, k, uv);
            n.set(row, k, nv);
            hn.set(row, k, hnv);
            out.set(row, k, (T::one() - uv) * hr[k] + uv * nv);
        }
    }
    Ok((out, GruCache { r, u, n, hn }))
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    /// `x W + b` with `b` broadcast over rows.
    Affine(Var, Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Clamp(Var, T, T),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Gru {
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        cache: GruCache<T>,
    },
    Fk {
        input: Var,
        skeleton: Arc<Skeleton<T>>,
        caches: Vec<FkCache<T>>,
    },
    SumSquares(Var),
    Sum(Var),
    Kl {
        mu_q: Var,
        ls_q: Var,
        mu_p: Var,
        ls_p: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        softmax: Tensor<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Tape for one forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Tracked leaf that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Tracked leaf bound to a stored parameter; repeated calls reuse the node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.param_vars.insert(id, v);
        v
    }

    /// Parameter entered as a constant; no gradient is produced for it.
    pub fn frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    fn shape_err(context: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
        Error::Dimension {
            context,
            expected: format!("{a:?}"),
            actual: format!("{b:?}"),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Self::shape_err("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul(vb);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), t))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.cols() != vw.rows() || vb.shape() != (1, vw.cols()) {
            return Err(Self::shape_err("affine", vw.shape(), vx.shape()));
        }
        let mut out = vx.matmul(vw);
        let bias = vb.data().to_vec();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let t = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(out, Op::Affine(x, w, b), t))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.shape() != (1, va.cols()) {
            return Err(Self::shape_err("add_row", (1, va.cols()), vr.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += bv;
            }
        }
        let t = self.tracked(a) || self.tracked(row);
        Ok(self.push(out, Op::AddRow(a, row), t))
    }

    fn zip(&mut self, a: Var, b: Var, ctx: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err(ctx, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        let t = self.tracked(a);
        self.push(out, Op::Scale(a, c), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        let t = self.tracked(a);
        self.push(out, Op::Exp(a), t)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        let t = self.tracked(a);
        self.push(out, Op::Clamp(a, lo, hi), t)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::hcat(&tensors)?;
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), t))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.cols() {
            return Err(Self::shape_err("slice_cols", (start, end), va.shape()));
        }
        let mut out = Tensor::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        let t = self.tracked(a);
        Ok(self.push(out, Op::SliceCols(a, start), t))
    }

    /// Rows of `table` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vt.rows()) {
            return Err(Error::validation(format!(
                "row index {bad} out of range for {} rows",
                vt.rows()
            )));
        }
        let mut out = Tensor::zeros(indices.len(), vt.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(vt.row(i));
        }
        let t = self.tracked(table);
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec()), t))
    }

    pub fn gru(&mut self, x: Var, h: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let (out, cache) = gru_forward(
            self.value(x),
            self.value(h),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b_ih),
            self.value(b_hh),
        )?;
        let t = [x, h, w_ih, w_hh, b_ih, b_hh].iter().any(|&v| self.tracked(v));
        Ok(self.push(
            out,
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            },
            t,
        ))
    }

    /// Root-centered joint positions (`B × 72`) from frame vectors (`B × ≥144`).
    pub fn fk(&mut self, input: Var, skeleton: Arc<Skeleton<T>>) -> Result<Var> {
        let vi = self.value(input);
        if vi.cols() < NUM_JOINTS * 6 {
            return Err(Self::shape_err("fk", (vi.rows(), NUM_JOINTS * 6), vi.shape()));
        }
        let mut out = Tensor::zeros(vi.rows(), VERTEX_DIM);
        let mut caches = Vec::with_capacity(vi.rows());
        for r in 0..vi.rows() {
            caches.push(fk_forward(vi.row(r), &skeleton, out.row_mut(r))?);
        }
        let t = self.tracked(input);
        Ok(self.push(
            out,
            Op::Fk {
                input,
                skeleton,
                caches,
            },
            t,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&v| v * v).sum();
        let t = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let t = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), t)
    }

    /// Sum over all entries of `KL(N(mu_q, e^{2 ls_q}) || N(mu_p, e^{2 ls_p}))`.
    pub fn kl_diag(&mut self, mu_q: Var, ls_q: Var, mu_p: Var, ls_p: Var) -> Result<Var> {
        let shape = self.value(mu_q).shape();
        for v in [ls_q, mu_p, ls_p] {
            if self.value(v).shape() != shape {
                return Err(Self::shape_err("kl_diag", shape, self.value(v).shape()));
            }
        }
        let s = kl_diag_value(
            self.value(mu_q).data(),
            self.value(ls_q).data(),
            self.value(mu_p).data(),
            self.value(ls_p).data(),
        );
        let t = [mu_q, ls_q, mu_p, ls_p].iter().any(|&v| self.tracked(v));
        Ok(self.push(
            Tensor::scalar(s),
            Op::Kl {
                mu_q,
                ls_q,
                mu_p,
                ls_p,
            },
            t,
        ))
    }

    /// Sum over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if vl.rows() != labels.len() {
            return Err(Self::shape_err("cross_entropy", (labels.len(), vl.cols()), vl.shape()));
        }
        if let Some(&bad) = labels.iter().find(|&&a| a >= vl.cols()) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {} logits",
                vl.cols()
            )));
        }
        let mut softmax = Tensor::zeros(vl.rows(), vl.cols());
        let mut total = T::zero();
        for (r, &a) in labels.iter().enumerate() {
            let row = vl.row(r);
            let lse = log_sum_exp(row);
            total += lse - row[a];
            for (s, &v) in softmax.row_mut(r).iter_mut().zip(row) {
                *s = (v - lse).exp();
            }
        }
        let t = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
            t,
        ))
    }

    /// Gradients of the scalar node `loss` w.r.t. every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Self::shape_err("backward", (1, 1), self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
        if !self.tracked(v) {
            return None;
        }
        let (r, c) = self.value(v).shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(ga) = self.buf(grads, *a) {
                    gemm_acc(g, false, &vb, true, ga, T::one());
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gemm_acc(&va, true, g, false, gb, T::one());
                }
            }
            Op::Affine(x, w, b) => {
                if let Some(gx) = self.buf(grads, *x) {
                    gemm_acc(g, false, self.value(*w), true, gx, T::one());
                }
                if let Some(gw) = self.buf(grads, *w) {
                    gemm_acc(self.value(*x), true, g, false, gw, T::one());
                }
                if let Some(gb) = self.buf(grads, *b) {
                    col_sum_into(g, gb);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.buf(grads, *row) {
                    col_sum_into(g, gr);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.buf(grads, *v) {
                        gv.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for (o, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(ga) = self.buf(grads, *a) {
                    for ((o, &gv), &bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for ((o, &gv), &av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * *c;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += gv * y;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).clone();
                if let Some(ga) = self.buf(grads, *a) {
                    for ((o, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        if x >= *lo && x <= *hi {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.buf(grads, *p) {
                        for r in 0..g.rows() {
                            for (o, &gv) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..g.rows() {
                        for (o, &gv) in ga.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::GatherRows(table, idx) => {
                if let Some(gt) = self.buf(grads, *table) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gv) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            } => self.backprop_gru(g, grads, [*x, *h, *w_ih, *w_hh, *b_ih, *b_hh], cache),
            Op::Fk {
                input,
                skeleton,
                caches,
            } => {
                let vi = self.value(*input).clone();
                if let Some(gi) = self.buf(grads, *input) {
                    for (r, cache) in caches.iter().enumerate() {
                        fk_backward(vi.row(r), skeleton, cache, g.row(r), gi.row_mut(r));
                    }
                }
            }
            Op::SumSquares(a) => {
                let s = g.item() + g.item();
                let va = self.value(*a).clone();
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                        *o += s * x;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                if let Some(ga) = self.buf(grads, *a) {
                    for o in ga.data_mut() {
                        *o += s;
                    }
                }
            }
            Op::Kl {
                mu_q,
                ls_q,
                mu_p,
                ls_p,
            } => {
                let s = g.item();
                let (mq, lq, mp, lp) = (
                    self.value(*mu_q).clone(),
                    self.value(*ls_q).clone(),
                    self.value(*mu_p).clone(),
                    self.value(*ls_p).clone(),
                );
                let n = mq.data().len();
                let mut d_mq = vec![T::zero(); n];
                let mut d_lq = vec![T::zero(); n];
                let mut d_lp = vec![T::zero(); n];
                for i in 0..n {
                    let inv_var_p = (-(lp.data()[i] + lp.data()[i])).exp();
                    let var_q = (lq.data()[i] + lq.data()[i]).exp();
                    let diff = mq.data()[i] - mp.data()[i];
                    d_mq[i] = s * diff * inv_var_p;
                    d_lq[i] = s * (var_q * inv_var_p - T::one());
                    d_lp[i] = s * (T::one() - (diff * diff + var_q) * inv_var_p);
                }
                let pairs: [(Var, Vec<T>); 4] = [
                    (*mu_q, d_mq.clone()),
                    (*ls_q, d_lq),
                    (*mu_p, d_mq.iter().map(|&v| -v).collect()),
                    (*ls_p, d_lp),
                ];
                for (v, d) in pairs {
                    if let Some(gv) = self.buf(grads, v) {
                        for (o, dv) in gv.data_mut().iter_mut().zip(d) {
                            *o += dv;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                let s = g.item();
                if let Some(gl) = self.buf(grads, *logits) {
                    for (r, &a) in labels.iter().enumerate() {
                        for (c, o) in gl.row_mut(r).iter_mut().enumerate() {
                            let y = if c == a { T::one() } else { T::zero() };
                            *o += s * (softmax.get(r, c) - y);
                        }
                    }
                }
            }
        }
    }

    fn backprop_gru(
        &self,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        [x, h, w_ih, w_hh, b_ih, b_hh]: [Var; 6],
        cache: &GruCache<T>,
    ) {
        let vh = self.value(h);
        let (b, hid) = vh.shape();
        let mut dgi = Tensor::zeros(b, 3 * hid);
        let mut dgh = Tensor::zeros(b, 3 * hid);
        let mut dh_direct = Tensor::zeros(b, hid);
        for row in 0..b {
            for k in 0..hid {
                let (r, u, n, hn) = (
                    cache.r.get(row, k),
                    cache.u.get(row, k),
                    cache.n.get(row, k),
                    cache.hn.get(row, k),
                );
                let go = g.get(row, k);
                let du = go * (n - vh.get(row, k));
                let dn = go * u;
                dh_direct.set(row, k, go * (T::one() - u));
                let dan = dn * (T::one() - n * n);
                let dar = dan * hn * r * (T::one() - r);
                let dau = du * u * (T::one() - u);
                dgi.set(row, k, dar);
                dgi.set(row, hid + k, dau);
                dgi.set(row, 2 * hid + k, dan);
                dgh.set(row, k, dar);
                dgh.set(row, hid + k, dau);
                dgh.set(row, 2 * hid + k, dan * r);
            }
        }
        if let Some(gx) = self.buf(grads, x) {
            gemm_acc(&dgi, false, self.value(w_ih), true, gx, T::one());
        }
        if let Some(gw) = self.buf(grads, w_ih) {
            gemm_acc(self.value(x), true, &dgi, false, gw, T::one());
        }
        if let Some(gb) = self.buf(grads, b_ih) {
            col_sum_into(&dgi, gb);
        }
        if let Some(gh) = self.buf(grads, h) {
            gh.add_assign(&dh_direct);
            gemm_acc(&dgh, false, self.value(w_hh), true, gh, T::one());
        }
        if let Some(gw) = self.buf(grads, w_hh) {
            gemm_acc(vh, true, &dgh, false, gw, T::one());
        }
        if let Some(gb) = self.buf(grads, b_hh) {
            col_sum_into(&dgh, gb);
        }
    }
}

fn col_sum_into<T: Scalar>(g: &Tensor<T>, out: &mut Tensor<T>) {
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub(crate) fn kl_diag_value<T: Scalar>(mu_q: &[T], ls_q: &[T], mu_p: &[T], ls_p: &[T]) -> T {
    let half = T::lit(0.5);
    mu_q.iter()
        .zip(ls_q)
        .zip(mu_p.iter().zip(ls_p))
        .map(|((&mq, &lq), (&mp, &lp))| {
            let two_lq = lq + lq;
            let two_lp = lp + lp;
            let diff = mq - mp;
            half * ((diff * diff * (-two_lp).exp() + (two_lq - two_lp).exp() - T::one()) + (two_lp - two_lq))
        })
        .sum()
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_vars.get(&id).and_then(|&v| self.wrt(v))
    }

    /// One slot per stored parameter; `None` where the graph never used it.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        store.ids().map(|id| self.param(id).cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor<f64> {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    /// Checks d(build)/d(inputs) against central differences.
    fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        let eval = |ins: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
            let o = build(&mut g, &vars);
            g.value(o).item()
        };
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.data().len() {
                let mut p = inputs.clone();
                let mut m = inputs.clone();
                p[k].data_mut()[i] += h;
                m[k].data_mut()[i] -= h;
                let fd = (eval(&p) - eval(&m)) / (2.0 * h);
                let an = grads.wrt(vars[k]).map_or(0.0, |g| g.data()[i]);
                let scale = fd.abs().max(an.abs()).max(1.0);
                assert!((fd - an).abs() / scale < 1e-6, "input {k}[{i}]: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn elementwise_and_matrix_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4, 1.0);
        let b = rand_tensor(&mut rng, 4, 2, 1.0);
        let c = rand_tensor(&mut rng, 1, 2, 1.0);
        let d = rand_tensor(&mut rng, 3, 2, 1.0);
        check(vec![a, b, c, d], |g, v| {
            let m = g.affine(v[0], v[1], v[2]).unwrap();
            let m2 = g.matmul(v[0], v[1]).unwrap();
            let e = g.exp(m2);
            let p = g.mul(m, e).unwrap();
            let s = g.sub(p, v[3]).unwrap();
            let r = g.add_row(s, v[2]).unwrap();
            let cl = g.clamp(r, -0.5, 0.5);
            let q = g.add(cl, v[3]).unwrap();
            let q = g.scale(q, 1.5);
            let cat = g.concat(&[q, v[0]]).unwrap();
            let sl = g.slice_cols(cat, 1, 5).unwrap();
            let ss = g.sum_squares(sl);
            let t = g.sum(v[3]);
            g.add(ss, t).unwrap()
        });
    }

    #[test]
    fn gather_kl_and_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = rand_tensor(&mut rng, 3, 4, 1.0);
        let ls_table = rand_tensor(&mut rng, 3, 4, 0.5);
        let mq = rand_tensor(&mut rng, 2, 4, 1.0);
        let lq = rand_tensor(&mut rng, 2, 4, 0.5);
        check(vec![table, ls_table, mq, lq], |g, v| {
            let mp = g.gather_rows(v[0], &[2, 0]).unwrap();
            let lp = g.gather_rows(v[1], &[2, 0]).unwrap();
            let kl = g.kl_diag(v[2], v[3], mp, lp).unwrap();
            let ce = g.cross_entropy(v[2], &[1, 3]).unwrap();
            g.add(kl, ce).unwrap()
        });
    }

    #[test]
    fn gru_step_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, i, h) = (2, 3, 4);
        let inputs = vec![
            rand_tensor(&mut rng, b, i, 1.0),
            rand_tensor(&mut rng, b, h, 0.8),
            rand_tensor(&mut rng, i, 3 * h, 0.7),
            rand_tensor(&mut rng, h, 3 * h, 0.7),
            rand_tensor(&mut rng, 1, 3 * h, 0.5),
            rand_tensor(&mut rng, 1, 3 * h, 0.5),
        ];
        let w = rand_tensor(&mut rng, b, h, 1.0);
        check(inputs, move |g, v| {
            let h1 = g.gru(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            let h2 = g.gru(v[0], h1, v[2], v[3], v[4], v[5]).unwrap();
            let wv = g.constant(w.clone());
            let p = g.mul(h2, wv).unwrap();
            g.sum(p)
        });
    }

    #[test]
    fn fk_node_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sk = Arc::new(Skeleton::<f64>::smpl());
        let x = rand_tensor(&mut rng, 2, 147, 1.0);
        let target = rand_tensor(&mut rng, 2, VERTEX_DIM, 0.5);
        check(vec![x], move |g, v| {
            let p = g.fk(v[0], sk.clone()).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(p, t).unwrap();
            g.sum_squares(d)
        });
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0f64));
        let b = store.add("b", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let va = g.param(&store, a);
        let vb = g.frozen(&store, b);
        let p = g.mul(va, vb).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.param(a).unwrap().item(), 3.0);
        assert!(grads.param(b).is_none());
        let per_store = grads.for_store(&store);
        assert!(per_store[0].is_some() && per_store[1].is_none());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        assert!(g.cross_entropy(a, &[0]).is_err());
        assert!(g.cross_entropy(a, &[0, 5]).is_err());
        assert!(g.backward(a).is_err());
    }
}
