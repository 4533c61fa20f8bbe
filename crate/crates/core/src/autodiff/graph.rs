//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] walks it once in reverse.
//! Parameters enter the graph through [`Graph::param`]; their adjoints are
//! returned as a [`Gradients`] map keyed by [`ParamId`].

use super::params::{ParamId, ParamSet};
use super::tensor::{gemm, Layout, Tensor};
use crate::error::{GhqError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumCols(Var),
    MeanRowGroups(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    GatherCols(Var, Vec<usize>),
    Reshape(Var),
    RowBmm(Var, Var),
    GruGates(Box<GruCache>),
}

/// Inputs and gate activations of one fused GRU update.
#[derive(Clone, Debug)]
struct GruCache {
    gi: Var,
    gh: Var,
    h: Var,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-parameter adjoints produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` if the loss does not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, materialising zeros when the parameter is unused.
    pub fn get_or_zeros(&self, id: ParamId, params: &ParamSet) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Clips only the gradients of `ids` to a joint norm of `max_norm`,
    /// leaving every other gradient untouched. Returns the norm before
    /// clipping.
    pub fn clip_subset_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let norm = ids.iter().filter_map(|&id| self.get(id)).map(Tensor::sq_norm).sum::<f64>().sqrt();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for id in ids {
                if let Some(Some(g)) = self.grads.get_mut(id.0) {
                    g.data_mut().iter_mut().for_each(|x| *x *= factor);
                }
            }
        }
        norm
    }

    /// Parameters that received a gradient with at least one non-zero entry.
    pub fn touched(&self) -> Vec<ParamId> {
        self.grads
            .iter()
            .enumerate()
            .filter(|(_, g)| g.as_ref().is_some_and(|t| t.data().iter().any(|&x| x != 0.0)))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Flips the sign of one gradient. Used by the self-check suite to prove
    /// that the finite-difference comparison catches a broken backward rule.
    pub fn negate(&mut self, id: ParamId) {
        if let Some(Some(g)) = self.grads.get_mut(id.0) {
            g.data_mut().iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input. Receives no gradient that is reported anywhere.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Inserts a parameter. Repeated calls for the same id return the same
    /// node so gradients from every use accumulate in one place.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Copies `v` into a fresh constant: the stop-gradient boundary.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary_same_shape(&self, a: Var, b: Var, name: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{name}: shape mismatch"
        );
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a + bias` with `bias` (one row) broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let cols = av.cols();
        assert_eq!(bv.len(), cols, "add_bias: bias has {} values for {cols} columns", bv.len());
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.push(out, Op::AddBias(a, bias))
    }

    /// Dense layer `x W + b`, checking dimensions up front.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xc, wr) = (self.value(x).cols(), self.value(w).rows());
        if xc != wr {
            return Err(GhqError::Config(format!(
                "linear layer expects {wr} input features, got {xc}"
            )));
        }
        let y = self.matmul(x, w);
        Ok(self.add_bias(y, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "div");
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let data: Vec<f64> = av.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let v = Tensor::matrix(av.rows(), 1, data);
        self.push(v, Op::SumCols(a))
    }

    /// Averages consecutive blocks of `group` rows: `[n*group, m] -> [n, m]`.
    pub fn mean_row_groups(&mut self, a: Var, group: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert!(group > 0 && rows % group == 0, "mean_row_groups: {rows} rows by {group}");
        let n = rows / group;
        let mut out = vec![0.0; n * cols];
        let inv = 1.0 / group as f64;
        for (r, row) in av.data().chunks(cols).enumerate() {
            let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
            for (d, x) in dst.iter_mut().zip(row) {
                *d += x * inv;
            }
        }
        self.push(Tensor::matrix(n, cols, out), Op::MeanRowGroups(a, group))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols: row mismatch");
                out.extend_from_slice(pv.row_slice(r));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows: column mismatch");
            out.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols());
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for row in av.data().chunks(av.cols().max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        let v = Tensor::matrix(av.rows(), end - start, data);
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.rows());
        let cols = av.cols();
        let v = Tensor::matrix(end - start, cols, av.data()[start * cols..end * cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    /// Picks column `idx[r]` from each row `r`, giving an `n x 1` column.
    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        assert_eq!(idx.len(), av.rows(), "gather_cols: one index per row");
        let data: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        let v = Tensor::matrix(av.rows(), 1, data);
        self.push(v, Op::GatherCols(a, idx))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshaped(vec![rows, cols]);
        self.push(v, Op::Reshape(a))
    }

    /// Row-wise vector-matrix product. Row `b` of `q` (length `n`) multiplies
    /// row `b` of `w` viewed as an `n x e` matrix, producing row `b` of the
    /// `B x e` output.
    pub fn row_bmm(&mut self, q: Var, w: Var) -> Var {
        let (qv, wv) = (self.value(q), self.value(w));
        let (batch, n) = (qv.rows(), qv.cols());
        assert_eq!(wv.rows(), batch, "row_bmm: batch mismatch");
        assert_eq!(wv.cols() % n, 0, "row_bmm: weight width not a multiple of {n}");
        let e = wv.cols() / n;
        let mut out = vec![0.0; batch * e];
        for b in 0..batch {
            let qr = qv.row_slice(b);
            let wr = wv.row_slice(b);
            let dst = &mut out[b * e..(b + 1) * e];
            for (i, &qi) in qr.iter().enumerate() {
                for (d, &wij) in dst.iter_mut().zip(&wr[i * e..(i + 1) * e]) {
                    *d += qi * wij;
                }
            }
        }
        self.push(Tensor::matrix(batch, e, out), Op::RowBmm(q, w))
    }

    /// Fused GRU gate update from the input projection `gi` and hidden
    /// projection `gh` (both `[rows, 3H]` in `r, z, n` order) and the
    /// previous hidden state `h` (`[rows, H]`):
    ///
    /// ```text
    /// r = sigmoid(gi_r + gh_r), z = sigmoid(gi_z + gh_z)
    /// n = tanh(gi_n + r * gh_n), h' = (1 - z) * n + z * h
    /// ```
    pub fn gru_gates(&mut self, gi: Var, gh: Var, h: Var) -> Var {
        let (giv, ghv, hv) = (self.value(gi), self.value(gh), self.value(h));
        let (rows, hd) = (hv.rows(), hv.cols());
        assert_eq!(giv.shape(), &[rows, 3 * hd], "gru_gates: input projection shape");
        assert_eq!(ghv.shape(), &[rows, 3 * hd], "gru_gates: hidden projection shape");
        let len = rows * hd;
        let (mut r, mut z, mut n, mut out) =
            (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
        for ((a, b), hr) in giv.data().chunks(3 * hd).zip(ghv.data().chunks(3 * hd)).zip(hv.data().chunks(hd)) {
            for j in 0..hd {
                let rj = sigmoid(a[j] + b[j]);
                let zj = sigmoid(a[hd + j] + b[hd + j]);
                let nj = (a[2 * hd + j] + rj * b[2 * hd + j]).tanh();
                r.push(rj);
                z.push(zj);
                n.push(nj);
                out.push((1.0 - zj) * nj + zj * hr[j]);
            }
        }
        let cache = GruCache { gi, gh, h, r, z, n };
        self.push(Tensor::matrix(rows, hd, out), Op::GruGates(Box::new(cache)))
    }

    /// Propagates adjoints from the scalar `loss` to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(GhqError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if out.grads.len() <= id.0 {
                        out.grads.resize(id.0 + 1, None);
                    }
                    out.grads[id.0] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let mut da = Tensor::zeros(av.shape());
                    gemm(n, m, k, g.data(), Layout::Normal, bv.data(), Layout::Transposed, da.data_mut(), 0.0);
                    let mut db = Tensor::zeros(bv.shape());
                    gemm(k, n, m, av.data(), Layout::Transposed, g.data(), Layout::Normal, db.data_mut(), 0.0);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddBias(a, bias) => {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut adj, *bias, Tensor::new(bshape, db).expect("bias shape"));
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|x| -x));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |g, y| g * y);
                    let db = g.zip_map(self.value(*a), |g, x| g * x);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = g.zip_map(bv, |g, y| g / y);
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let db = Tensor::matrix(
                        1,
                        g.len(),
                        g.data()
                            .iter()
                            .zip(node.value.data())
                            .zip(bv.data())
                            .map(|((g, o), y)| -g * o / y)
                            .collect(),
                    )
                    .reshaped(bv.shape().to_vec());
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.map(|x| x * c)),
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, g.reshaped(shape));
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |g, s| g * s * (1.0 - s));
                    accumulate(&mut adj, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |g, t| g * (1.0 - t * t));
                    accumulate(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Elu(a) => {
                    // for x <= 0, elu'(x) = exp(x) = elu(x) + 1
                    let d = g.zip_map(&node.value, |g, y| if y > 0.0 { g } else { g * (y + 1.0) });
                    accumulate(&mut adj, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * y);
                    accumulate(&mut adj, *a, d);
                }
                Op::Abs(a) => {
                    let d = g.zip_map(self.value(*a), |g, x| g * sign(x));
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip_map(self.value(*a), |g, x| 2.0 * g * x);
                    accumulate(&mut adj, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let d = g.zip_map(self.value(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::SumAll(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::full(av.shape(), g.item()));
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let data: Vec<f64> =
                        g.data().iter().flat_map(|&x| std::iter::repeat_n(x, cols)).collect();
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
                }
                Op::MeanRowGroups(a, group) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let inv = 1.0 / *group as f64;
                    let mut d = Tensor::zeros(av.shape());
                    for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                        let src = g.row_slice(r / group);
                        for (x, s) in row.iter_mut().zip(src) {
                            *x = s * inv;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        accumulate(&mut adj, p, Tensor::matrix(rows, w, data));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        let data = g.data()[offset..offset + n].to_vec();
                        accumulate(&mut adj, p, Tensor::new(pv.shape().to_vec(), data).expect("shape"));
                        offset += n;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let slot = adj[a.0].get_or_insert_with(|| Tensor::zeros(av.shape()));
                    for (dst, src) in slot.data_mut().chunks_mut(cols).zip(g.data().chunks((end - start).max(1))) {
                        for (d, x) in dst[*start..*end].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let offset = start * av.cols();
                    let slot = adj[a.0].get_or_insert_with(|| Tensor::zeros(av.shape()));
                    for (d, x) in slot.data_mut()[offset..offset + g.len()].iter_mut().zip(g.data()) {
                        *d += x;
                    }
                }
                Op::GatherCols(a, idx) => {
                    let mut d = Tensor::zeros(self.value(*a).shape());
                    for (r, &c) in idx.iter().enumerate() {
                        d.set(r, c, g.data()[r]);
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::RowBmm(q, w) => {
                    let (qv, wv) = (self.value(*q), self.value(*w));
                    let (batch, n) = (qv.rows(), qv.cols());
                    let e = wv.cols() / n;
                    let mut dq = Tensor::zeros(qv.shape());
                    let mut dw = Tensor::zeros(wv.shape());
                    for b in 0..batch {
                        let gr = g.row_slice(b);
                        let qr = qv.row_slice(b);
                        let wr = wv.row_slice(b);
                        for i in 0..n {
                            let wrow = &wr[i * e..(i + 1) * e];
                            dq.data_mut()[b * n + i] = gr.iter().zip(wrow).map(|(a, b)| a * b).sum();
                            let dst = &mut dw.data_mut()[b * n * e + i * e..b * n * e + (i + 1) * e];
                            for (d, &gv) in dst.iter_mut().zip(gr) {
                                *d = qr[i] * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *q, dq);
                    accumulate(&mut adj, *w, dw);
                }
                Op::GruGates(c) => {
                    let hd = g.cols();
                    let (hv, ghv) = (self.value(c.h), self.value(c.gh));
                    let mut dgi = vec![0.0; 3 * g.len()];
                    let mut dgh = vec![0.0; 3 * g.len()];
                    let mut dh = vec![0.0; g.len()];
                    for (i, &dy) in g.data().iter().enumerate() {
                        let (row, j) = (i / hd, i % hd);
                        let (r, z, n) = (c.r[i], c.z[i], c.n[i]);
                        let base = row * 3 * hd;
                        let dn_pre = dy * (1.0 - z) * (1.0 - n * n);
                        let dz_pre = dy * (hv.data()[i] - n) * z * (1.0 - z);
                        let dr_pre = dn_pre * ghv.data()[base + 2 * hd + j] * r * (1.0 - r);
                        dh[i] = dy * z;
                        dgi[base + j] = dr_pre;
                        dgi[base + hd + j] = dz_pre;
                        dgi[base + 2 * hd + j] = dn_pre;
                        dgh[base + j] = dr_pre;
                        dgh[base + hd + j] = dz_pre;
                        dgh[base + 2 * hd + j] = dn_pre * r;
                    }
                    let rows = g.rows();
                    accumulate(&mut adj, c.gi, Tensor::matrix(rows, 3 * hd, dgi));
                    accumulate(&mut adj, c.gh, Tensor::matrix(rows, 3 * hd, dgh));
                    accumulate(&mut adj, c.h, Tensor::matrix(rows, hd, dh));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
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

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_hand_computed() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(Tensor::row(vec![1.0, 0.0]));
        let w = g.constant(Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 3.0]));
        let b = g.constant(Tensor::row(vec![1.0, 1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 1.0]);
    }

    #[test]
    fn linear_rejects_mismatched_inputs() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(g.linear(x, w, b), Err(GhqError::Config(_))));
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(GhqError::Usage(_))));
    }

    #[test]
    fn sum_of_wx_gradient_is_outer_structure_of_x() {
        let mut params = ParamSet::default();
        let w = params.add("w", Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let wv = g.param(&params, w);
        let y = g.matmul(x, wv);
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        // d/dW_ij sum_j (x W)_j = x_i for every column j
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn detached_values_carry_no_gradient() {
        let mut params = ParamSet::default();
        let a = params.add("a", Tensor::row(vec![2.0]));
        let b = params.add("b", Tensor::row(vec![3.0]));
        let mut g = Graph::new();
        let av = g.param(&params, a);
        let bv = g.param(&params, b);
        let stopped = g.detach(bv);
        let prod = g.mul(av, stopped);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get_or_zeros(b, &params).data(), &[0.0]);
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut params = ParamSet::default();
        let a = params.add("a", Tensor::row(vec![2.0]));
        let unused = params.add("unused", Tensor::row(vec![1.0]));
        let mut g = Graph::new();
        let av = g.param(&params, a);
        let _ = g.param(&params, unused);
        let loss = g.sum_all(av);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.touched(), vec![a]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut params = ParamSet::default();
        let a = params.add("a", Tensor::row(vec![3.0, 4.0]));
        let mut g = Graph::new();
        let av = g.param(&params, a);
        let sq = g.square(av);
        let loss = g.sum_all(sq);
        let mut grads = g.backward(loss).unwrap();
        // gradient (6, 8), norm 10
        let before = grads.clip_global_norm(5.0);
        assert!((before - 10.0).abs() < 1e-12);
        assert!((grads.global_norm() - 5.0).abs() < 1e-12);
    }
}
