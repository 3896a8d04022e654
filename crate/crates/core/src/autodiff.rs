//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every op in insertion order. Leaves are either
//! parameters (they receive adjoints) or constants (they never do, and no
//! adjoint storage is ever allocated for them). [`Graph::backward`] walks the
//! tape in exact reverse insertion order, so each node's adjoint is complete
//! before it is pushed to its parents.
//!
//! ```
//! use steam::autodiff::Graph;
//! use steam::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::vector(vec![1.0, 2.0]));
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{check_temperature, Tensor};

/// Norm floor below which normalisation refuses to proceed.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sum(Var),
    SumCols(Var),
    BroadcastCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    NormalizeRows(Var),
    SoftmaxRows(Var, f64),
    LogSoftmaxRows(Var, f64),
    LogSumExpRows(Var, f64),
    CrossGramSqNorm(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Adjoint of `v` after [`Graph::backward`]; `None` for constants and
    /// for nodes the loss does not reach.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of nodes holding adjoint storage.
    pub fn allocated_grads(&self) -> usize {
        self.nodes.iter().filter(|n| n.grad.is_some()).count()
    }

    /// Number of constant nodes holding adjoint storage. Zero after any
    /// backward pass.
    pub fn constant_adjoints(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !n.requires_grad && n.grad.is_some())
            .count()
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + 1 * bias` where `bias` is a single row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim("add_bias", av.shape(), bv.shape()));
        }
        let cols = av.cols();
        let mut value = av.as_matrix();
        for row in value.data_mut().chunks_mut(cols) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Contract(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Sum of every entry, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::from_rows(t.rows(), 1, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Repeats an `m x 1` column across `n` columns.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || n == 0 {
            return Err(Error::dim("broadcast_cols", t.shape(), &[t.rows(), n]));
        }
        let mut data = Vec::with_capacity(t.rows() * n);
        for &v in t.data() {
            data.extend(std::iter::repeat_n(v, n));
        }
        let value = Tensor::from_rows(t.rows(), n, data);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::BroadcastCols(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Empty("concat_cols".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::dim("concat_cols", &[rows, cols], t.shape()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_rows(rows, cols, data);
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.is_empty() {
            return Err(Error::Empty("select_rows".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::dim("select_rows", t.shape(), &[bad]));
        }
        let value = t.select_rows(idx);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// Scales each row to unit L2 norm. Errors on rows with norm `<= NORM_EPS`.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).normalize_rows(NORM_EPS)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::NormalizeRows(a), rg))
    }

    /// Cosine similarity of two vectors, as a `1 x 1` tensor.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.rows() != 1 || sb.rows() != 1 || sa.cols() != sb.cols() {
            return Err(Error::dim("cosine_similarity", sa.shape(), sb.shape()));
        }
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        self.matmul_t(na, nb)
    }

    /// Row-wise softmax of `a / temperature`.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let value = self.value(a).softmax_rows(temperature)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a, temperature), rg))
    }

    /// Row-wise log-softmax of `a / temperature`.
    pub fn log_softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let t = self.value(a);
        let cols = t.cols();
        let mut value = t.as_matrix();
        for row in value.data_mut().chunks_mut(cols) {
            let lse = logsumexp(row, temperature);
            row.iter_mut().for_each(|v| *v = *v / temperature - lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmaxRows(a, temperature), rg))
    }

    /// `log sum_j exp(a_ij / temperature)` per row: `m x n -> m x 1`.
    pub fn logsumexp_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| logsumexp(t.row(r), temperature)).collect();
        let value = Tensor::from_rows(t.rows(), 1, data);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSumExpRows(a, temperature), rg))
    }

    /// `|| a^T b ||_F^2` for row-aligned `a` and `b`.
    pub fn cross_gram_sq_norm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::dim("cross_gram_sq_norm", ta.shape(), tb.shape()));
        }
        let m = ta.t_matmul(tb)?;
        let value = Tensor::scalar(m.data().iter().map(|v| v * v).sum());
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::CrossGramSqNorm(a, b), rg))
    }

    /// Populates adjoints for every differentiable node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let seed = self.value(root).map(|_| 1.0);
        if !seed.is_scalar() {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                seed.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(seed);
        for i in (0..=root.0).rev() {
            let contributions = match &self.nodes[i].grad {
                Some(g) if self.nodes[i].requires_grad => self.adjoints(i, g)?,
                _ => continue,
            };
            for (parent, adj) in contributions {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&adj),
                    slot @ None => *slot = Some(adj),
                }
            }
        }
        Ok(())
    }

    fn adjoints(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    out.push((*a, g.matmul_t(val(*b))?));
                }
                if wants(*b) {
                    out.push((*b, val(*a).t_matmul(g)?));
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    out.push((*a, reshape_like(g.matmul(val(*b))?, val(*a))));
                }
                if wants(*b) {
                    out.push((*b, reshape_like(g.t_matmul(val(*a))?, val(*b))));
                }
            }
            Op::Transpose(a) => out.push((*a, reshape_like(g.transpose(), val(*a)))),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    out.push((*a, g.zip_map(val(*b), "mul'", |x, y| x * y)?));
                }
                if wants(*b) {
                    out.push((*b, g.zip_map(val(*a), "mul'", |x, y| x * y)?));
                }
            }
            Op::AddBias(a, bias) => {
                out.push((*a, reshape_like(g.clone(), val(*a))));
                if wants(*bias) {
                    let cols = g.cols();
                    let mut acc = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (s, v) in acc.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    out.push((*bias, reshape_like(Tensor::from_rows(1, cols, acc), val(*bias))));
                }
            }
            Op::Scale(a, k) => out.push((*a, g.map(|x| x * k))),
            Op::Relu(a) => out.push((
                *a,
                g.zip_map(val(*a), "relu'", |gi, x| if x > 0.0 { gi } else { 0.0 })?,
            )),
            Op::Exp(a) => out.push((*a, g.zip_map(&node.value, "exp'", |gi, y| gi * y)?)),
            Op::Log(a) => out.push((*a, g.zip_map(val(*a), "log'", |gi, x| gi / x)?)),
            Op::Softplus(a) => out.push((*a, g.zip_map(val(*a), "softplus'", |gi, x| gi * sigmoid(x))?)),
            Op::Sum(a) => {
                let s = g.item();
                out.push((*a, val(*a).map(|_| s)));
            }
            Op::SumCols(a) => {
                let t = val(*a);
                let cols = t.cols();
                let mut data = Vec::with_capacity(t.len());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, cols));
                }
                out.push((*a, reshape_like(Tensor::from_rows(t.rows(), cols, data), t)));
            }
            Op::BroadcastCols(a) => {
                let data = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                out.push((*a, Tensor::from_rows(g.rows(), 1, data)));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = val(p);
                    let idx: Vec<usize> = (offset..offset + t.rows()).collect();
                    offset += t.rows();
                    if wants(p) {
                        out.push((p, reshape_like(g.select_rows(&idx), t)));
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = val(p);
                    let w = t.cols();
                    if wants(p) {
                        let mut data = Vec::with_capacity(t.len());
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        out.push((p, reshape_like(Tensor::from_rows(t.rows(), w, data), t)));
                    }
                    offset += w;
                }
            }
            Op::SelectRows(a, idx) => {
                let t = val(*a);
                let mut acc = t.as_matrix().zeros_like();
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..t.cols() {
                        let v = acc.get(r, c) + g.get(k, c);
                        acc.set(r, c, v);
                    }
                }
                out.push((*a, reshape_like(acc, t)));
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let cols = y.cols();
                let mut data = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (xr, yr, gr) = (x.row(r), y.row(r), g.row(r));
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(yi, gi)| (gi - yi * dot) / n));
                }
                out.push((*a, reshape_like(Tensor::from_rows(y.rows(), cols, data), x)));
            }
            Op::SoftmaxRows(a, t) => {
                let y = &node.value;
                let mut data = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot) / t));
                }
                out.push((*a, reshape_like(Tensor::from_rows(y.rows(), y.cols(), data), val(*a))));
            }
            Op::LogSoftmaxRows(a, t) => {
                let y = &node.value;
                let mut data = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gs: f64 = gr.iter().sum();
                    data.extend(yr.iter().zip(gr).map(|(yi, gi)| (gi - yi.exp() * gs) / t));
                }
                out.push((*a, reshape_like(Tensor::from_rows(y.rows(), y.cols(), data), val(*a))));
            }
            Op::LogSumExpRows(a, t) => {
                let x = val(*a);
                let y = &node.value;
                let mut data = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let (lse, gi) = (y.data()[r], g.data()[r]);
                    data.extend(x.row(r).iter().map(|xi| gi * (xi / t - lse).exp() / t));
                }
                out.push((*a, reshape_like(Tensor::from_rows(x.rows(), x.cols(), data), x)));
            }
            Op::CrossGramSqNorm(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let m = ta.t_matmul(tb)?;
                let k = orthogonality_adjoint_sign() * 2.0 * g.item();
                if wants(*a) {
                    out.push((*a, reshape_like(tb.matmul_t(&m)?.map(|v| v * k), ta)));
                }
                if wants(*b) {
                    out.push((*b, reshape_like(ta.matmul(&m)?.map(|v| v * k), tb)));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(not(feature = "mutant-orthogonality-adjoint"))]
const fn orthogonality_adjoint_sign() -> f64 {
    1.0
}

#[cfg(feature = "mutant-orthogonality-adjoint")]
const fn orthogonality_adjoint_sign() -> f64 {
    -1.0
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        Tensor::new(like.shape(), t.into_data()).expect("adjoint size matches value")
    }
}

pub(crate) fn logsumexp(row: &[f64], temperature: f64) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let s: f64 = row.iter().map(|v| (v / temperature - mx).exp()).sum();
    mx + s.ln()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
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
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![0.3; 5]));
        let l = g.sum(w);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn diamond_accumulates() {
        // y = x*x + 3x, used twice through two paths.
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let y = g.add(sq, lin).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 2.0 * 2.0 + 3.0);
    }

    #[test]
    fn constants_get_no_storage() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.param(Tensor::from_rows(2, 1, vec![0.5, -0.5]));
        let y = g.matmul(c, w).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_kink_has_zero_adjoint() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 0.0]));
        assert!(g.log(x).is_err());
    }

    #[test]
    fn softmax_temperature_checked() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.softmax_rows(x, 0.0), Err(Error::Config(_))));
        assert!(matches!(g.softmax_rows(x, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
