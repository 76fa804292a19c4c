//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the handles of its inputs. [`Tape::backward`] then walks the
//! nodes in reverse insertion order, which is a topological order because an
//! operation can only reference nodes recorded before it.

use std::collections::HashMap;

use super::store::{ParamId, ParameterStore};
use super::{mismatch, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Clamp(Var, S, S),
    WeightedSum(Var, Tensor<S>),
    RowSum(Var),
    InvSqrt(Var),
    SelectLast(Var, usize),
    FactorEdges(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<'a, S> {
    nodes: Vec<Node<S>>,
    store: Option<&'a ParameterStore<S>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    /// A tape with no parameter store; inputs come from [`Tape::var`] and
    /// [`Tape::constant`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), store: None, param_nodes: HashMap::new() }
    }

    pub fn with_store(store: &'a ParameterStore<S>) -> Self {
        Self { nodes: Vec::new(), store: Some(store), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Frozen parameters are recorded as
    /// constants so no gradient is ever produced for them.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let frozen = store.is_frozen(id);
        let v = self.push(store.value(id).clone(), Op::Leaf, !frozen);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, TensorError> {
        let store = self.store.expect("tape has no parameter store");
        Ok(self.param(store.id(name)?))
    }

    /// Cuts gradient flow: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let rg = self.any_grad(inputs);
        let value = Tensor { shape, data };
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.record(shape, data, op, &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var, TensorError> {
        self.same_shape(op_name, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.record(shape, data, op, &[a, b]))
    }

    // ---- forward operations ----------------------------------------------

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 || self.nodes[a.0].value.rank() != 2 || self.nodes[b.0].value.rank() != 2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_into(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), &mut out, m, k, n);
        Ok(self.record(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 x n` row to every row of `a (m x n)`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.broadcast_row("add_row", a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    /// Multiplies every row of `a (m x n)` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.broadcast_row("mul_row", a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    fn broadcast_row(&mut self, name: &'static str, a: Var, row: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(a);
        let (r, c) = self.dims2(row);
        if r != 1 || c != n {
            return Err(mismatch(name, self.shape(a), self.shape(row)));
        }
        let ta = self.nodes[a.0].value.data();
        let tr = self.nodes[row.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(ta[i * n..(i + 1) * n].iter().zip(tr).map(|(&x, &y)| f(x, y)));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.record(shape, out, op, &[a, row]))
    }

    /// Scales row `i` of `a (m x n)` by `col[i]` where `col` is `m x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(a);
        let (r, c) = self.dims2(col);
        if r != m || c != 1 {
            return Err(mismatch("mul_col", self.shape(a), self.shape(col)));
        }
        let ta = self.nodes[a.0].value.data();
        let tc = self.nodes[col.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(ta[i * n..(i + 1) * n].iter().map(|&x| x * tc[i]));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.record(shape, out, Op::MulCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -S::one());
        self.add_scalar(neg, S::one())
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let m = self.dims2(parts[0]).0;
        for &p in parts {
            if self.dims2(p).0 != m {
                return Err(mismatch("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims2(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.record(vec![m, n], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let n = self.dims2(parts[0]).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims2(p);
            if c != n {
                return Err(mismatch("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            out.extend_from_slice(self.nodes[p.0].value.data());
            m += r;
        }
        Ok(self.record(vec![m, n], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(a);
        if len == 0 || start + len > n {
            return Err(mismatch("slice_cols", self.shape(a), &[start, len]));
        }
        let t = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t[i * n + start..i * n + start + len]);
        }
        Ok(self.record(vec![m, len], out, Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(a);
        if len == 0 || start + len > m {
            return Err(mismatch("slice_rows", self.shape(a), &[start, len]));
        }
        let out = self.nodes[a.0].value.data()[start * n..(start + len) * n].to_vec();
        Ok(self.record(vec![len, n], out, Op::SliceRows(a, start), &[a]))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, TensorError> {
        self.slice_rows(a, i, 1)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > S::zero() { x } else { S::zero() })
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims2(a);
        let t = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(softmax(&t[i * n..(i + 1) * n]));
        }
        let shape = self.shape(a).to_vec();
        self.record(shape, out, Op::SoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims2(a);
        let t = self.nodes[a.0].value.data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t[i * n + j];
            }
        }
        self.record(vec![n, m], out, Op::Transpose(a), &[a])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.record(vec![1, 1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.sum() / S::from_usize(t.len()).expect("length fits");
        self.record(vec![1, 1], vec![s], Op::Mean(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// `sum(w * a)` for a constant weight tensor `w` of the same shape.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor<S>) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.shape() != weights.shape() {
            return Err(mismatch("weighted_sum", t.shape(), weights.shape()));
        }
        let s = t.data().iter().zip(weights.data()).map(|(&x, &w)| x * w).sum();
        Ok(self.record(vec![1, 1], vec![s], Op::WeightedSum(a, weights), &[a]))
    }

    /// Per-row sums of a matrix, as an `m x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = self.dims2(a);
        let t = self.nodes[a.0].value.data();
        let out = (0..m).map(|i| t[i * n..(i + 1) * n].iter().copied().sum()).collect();
        self.record(vec![m, 1], out, Op::RowSum(a), &[a])
    }

    /// `x^(-1/2)` for positive entries and `0` elsewhere.
    pub fn inv_sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::InvSqrt(a), |x| if x > S::zero() { x.sqrt().recip() } else { S::zero() })
    }

    /// Frontal slice `a[:, :, k]` of an `n x m x e` tensor.
    pub fn select_last(&mut self, a: Var, k: usize) -> Result<Var, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.rank() != 3 || k >= t.shape()[2] {
            return Err(mismatch("select_last", t.shape(), &[k]));
        }
        let (n, m, e) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let out = (0..n * m).map(|ij| t.data()[ij * e + k]).collect();
        Ok(self.record(vec![n, m], out, Op::SelectLast(a, k), &[a]))
    }

    /// Edge-factorized probabilities: for node embeddings `s (n x p)` and
    /// factors `u (e x p)` returns the `n x n x e` tensor with entry
    /// `sigmoid(sum_a s[i,a] u[k,a] s[j,a])` off the diagonal and `0` on it.
    /// The lower triangle is a copy of the upper one, so the result is
    /// symmetric bit for bit.
    pub fn factor_edges(&mut self, s: Var, u: Var) -> Result<Var, TensorError> {
        let (n, p) = self.dims2(s);
        let (e, p2) = self.dims2(u);
        if p != p2 {
            return Err(mismatch("factor_edges", self.shape(s), self.shape(u)));
        }
        let sd = self.nodes[s.0].value.data();
        let ud = self.nodes[u.0].value.data();
        let mut out = vec![S::zero(); n * n * e];
        for i in 0..n {
            let si = &sd[i * p..(i + 1) * p];
            for j in (i + 1)..n {
                let sj = &sd[j * p..(j + 1) * p];
                for k in 0..e {
                    let uk = &ud[k * p..(k + 1) * p];
                    let logit: S = (0..p).map(|a| si[a] * uk[a] * sj[a]).sum();
                    let prob = sigmoid(logit);
                    out[(i * n + j) * e + k] = prob;
                    out[(j * n + i) * e + k] = prob;
                }
            }
        }
        Ok(self.record(vec![n, n, e], out, Op::FactorEdges(s, u), &[s, u]))
    }

    /// `x W + b` with `b` a `1 x out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    // ---- backward -------------------------------------------------------

    /// Propagates `d loss / d node` for every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, TensorError> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> =
            self.param_nodes.iter().filter(|(_, v)| self.nodes[v.0].requires_grad).map(|(&id, &v)| (id, v)).collect();
        params.sort_unstable_by_key(|&(id, _)| id);
        let grads =
            grads.into_iter().zip(&self.nodes).map(|(g, n)| g.map(|data| Tensor { shape: n.value.shape().to_vec(), data })).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                if wants(*a) {
                    let bd = val(*b);
                    let ga = acc!(*a);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            ga[i * k + kk] += dot(gi, brow);
                        }
                    }
                }
                if wants(*b) {
                    let ad = val(*a);
                    let gb = acc!(*b);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            if aik == S::zero() {
                                continue;
                            }
                            axpy(aik, gi, &mut gb[kk * n..(kk + 1) * n]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    axpy(S::one(), g, acc!(*a));
                }
                if wants(*b) {
                    axpy(S::one(), g, acc!(*b));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(S::one(), g, acc!(*a));
                }
                if wants(*b) {
                    axpy(-S::one(), g, acc!(*b));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = val(*b);
                    for ((d, &gi), &bi) in acc!(*a).iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                }
                if wants(*b) {
                    let ad = val(*a);
                    for ((d, &gi), &ai) in acc!(*b).iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddRow(a, r) => {
                let n = self.dims2(*r).1;
                if wants(*a) {
                    axpy(S::one(), g, acc!(*a));
                }
                if wants(*r) {
                    let gr = acc!(*r);
                    for gi in g.chunks_exact(n) {
                        axpy(S::one(), gi, gr);
                    }
                }
            }
            Op::MulRow(a, r) => {
                let n = self.dims2(*r).1;
                let rd = val(*r);
                if wants(*a) {
                    let ga = acc!(*a);
                    for (gai, gi) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                        for ((d, &x), &w) in gai.iter_mut().zip(gi).zip(rd) {
                            *d += x * w;
                        }
                    }
                }
                if wants(*r) {
                    let ad = val(*a);
                    let gr = acc!(*r);
                    for (ai, gi) in ad.chunks_exact(n).zip(g.chunks_exact(n)) {
                        for ((d, &x), &w) in gr.iter_mut().zip(gi).zip(ai) {
                            *d += x * w;
                        }
                    }
                }
            }
            Op::MulCol(a, c) => {
                let (m, n) = self.dims2(*a);
                let cd = val(*c);
                if wants(*a) {
                    let ga = acc!(*a);
                    for i in 0..m {
                        axpy(cd[i], &g[i * n..(i + 1) * n], &mut ga[i * n..(i + 1) * n]);
                    }
                }
                if wants(*c) {
                    let ad = val(*a);
                    let gc = acc!(*c);
                    for i in 0..m {
                        gc[i] += dot(&g[i * n..(i + 1) * n], &ad[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Scale(a, c) => axpy(*c, g, acc!(*a)),
            Op::AddScalar(a) => axpy(S::one(), g, acc!(*a)),
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims2(p).1;
                    if wants(p) {
                        let gp = acc!(p);
                        for i in 0..m {
                            axpy(S::one(), &g[i * n + off..i * n + off + w], &mut gp[i * w..(i + 1) * w]);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if wants(p) {
                        axpy(S::one(), &g[off..off + len], acc!(p));
                    }
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.dims2(*a).1;
                let (m, len) = (node.value.rows(), node.value.cols());
                let ga = acc!(*a);
                for i in 0..m {
                    axpy(S::one(), &g[i * len..(i + 1) * len], &mut ga[i * n + start..i * n + start + len]);
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.dims2(*a).1;
                let len = g.len();
                axpy(S::one(), g, &mut acc!(*a)[start * n..start * n + len]);
            }
            Op::Sigmoid(a) => {
                for ((d, &gi), &yi) in acc!(*a).iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (S::one() - yi);
                }
            }
            Op::Tanh(a) => {
                for ((d, &gi), &yi) in acc!(*a).iter_mut().zip(g).zip(y) {
                    *d += gi * (S::one() - yi * yi);
                }
            }
            Op::Relu(a) => {
                for ((d, &gi), &yi) in acc!(*a).iter_mut().zip(g).zip(y) {
                    if yi > S::zero() {
                        *d += gi;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.cols();
                let ga = acc!(*a);
                for ((gai, gi), yi) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                    let inner = dot(gi, yi);
                    for ((d, &gg), &yy) in gai.iter_mut().zip(gi).zip(yi) {
                        *d += yy * (gg - inner);
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims2(*a);
                let ga = acc!(*a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                acc!(*a).iter_mut().for_each(|d| *d += g0);
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len();
                let g0 = g[0] / S::from_usize(len).expect("length fits");
                acc!(*a).iter_mut().for_each(|d| *d += g0);
            }
            Op::Log(a) => {
                let ad = val(*a);
                for ((d, &gi), &x) in acc!(*a).iter_mut().zip(g).zip(ad) {
                    *d += gi / x;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let ad = val(*a);
                for ((d, &gi), &x) in acc!(*a).iter_mut().zip(g).zip(ad) {
                    if x >= *lo && x <= *hi {
                        *d += gi;
                    }
                }
            }
            Op::WeightedSum(a, w) => axpy(g[0], w.data(), acc!(*a)),
            Op::RowSum(a) => {
                let n = self.dims2(*a).1;
                let ga = acc!(*a);
                for (i, row) in ga.chunks_exact_mut(n).enumerate() {
                    row.iter_mut().for_each(|d| *d += g[i]);
                }
            }
            Op::InvSqrt(a) => {
                for ((d, &gi), &yi) in acc!(*a).iter_mut().zip(g).zip(y) {
                    // d/dx x^-1/2 = -1/2 x^-3/2 = -1/2 y^3
                    *d -= gi * yi * yi * yi / (S::one() + S::one());
                }
            }
            Op::SelectLast(a, k) => {
                let e = self.nodes[a.0].value.shape()[2];
                let ga = acc!(*a);
                for (ij, &gi) in g.iter().enumerate() {
                    ga[ij * e + k] += gi;
                }
            }
            Op::FactorEdges(s, u) => {
                let (n, p) = self.dims2(*s);
                let e = self.dims2(*u).0;
                let sd = val(*s);
                let ud = val(*u);
                let mut gs = vec![S::zero(); n * p];
                let mut gu = vec![S::zero(); e * p];
                for i in 0..n {
                    for j in (i + 1)..n {
                        for k in 0..e {
                            let up = (i * n + j) * e + k;
                            let lo = (j * n + i) * e + k;
                            let prob = y[up];
                            let gl = (g[up] + g[lo]) * prob * (S::one() - prob);
                            if gl == S::zero() {
                                continue;
                            }
                            let uk = &ud[k * p..(k + 1) * p];
                            for a in 0..p {
                                let si = sd[i * p + a];
                                let sj = sd[j * p + a];
                                gs[i * p + a] += gl * uk[a] * sj;
                                gs[j * p + a] += gl * uk[a] * si;
                                gu[k * p + a] += gl * si * sj;
                            }
                        }
                    }
                }
                if wants(*s) {
                    axpy(S::one(), &gs, acc!(*s));
                }
                if wants(*u) {
                    axpy(S::one(), &gu, acc!(*u));
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a node; `None` if the loss does not depend
    /// on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every non-frozen parameter referenced on the tape.
    /// Parameters the loss does not reach are skipped (their gradient is zero).
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> + '_ {
        self.params.iter().filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softmax<S: Scalar>(xs: &[S]) -> impl Iterator<Item = S> + '_ {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let z: S = xs.iter().map(|&x| (x - max).exp()).sum();
    xs.iter().map(move |&x| (x - max).exp() / z)
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut s = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == S::zero() {
                continue;
            }
            axpy(aik, &b[kk * n..(kk + 1) * n], row);
        }
    }
}
