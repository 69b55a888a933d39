//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! pulled in from a borrowed [`ParamStore`]; calling [`Graph::backward`] on a
//! `1 × 1` loss returns exact gradients for every parameter that was used.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Silu(Var),
    Exp(Var),
    Square(Var),
    SoftClamp(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Normalize(Var, Vec<f64>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherCols(Var, Vec<usize>),
    BroadcastRows(Var),
    SelectRows(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A differentiable leaf that is not a stored parameter. Its gradient can
    /// be read back with [`Graph::backward_full`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulBt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds the `1 × c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (n, c) = self.shape(a);
        assert_eq!(self.shape(r), (1, c), "add_row expects a 1x{c} row");
        let mut value = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..n {
            for (v, b) in value.row_slice_mut(i).iter_mut().zip(&row) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(r);
        self.push(value, Op::AddRow(a, r), rg)
    }

    /// Multiplies every row of `a` elementwise by the `1 × c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (n, c) = self.shape(a);
        assert_eq!(self.shape(r), (1, c), "mul_row expects a 1x{c} row");
        let mut value = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..n {
            for (v, b) in value.row_slice_mut(i).iter_mut().zip(&row) {
                *v *= b;
            }
        }
        let rg = self.rg(a) || self.rg(r);
        self.push(value, Op::MulRow(a, r), rg)
    }

    /// Adds the `n × 1` column `col` to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "add_col expects a {n}x1 column");
        let mut value = self.value(a).clone();
        for i in 0..n {
            let b = self.value(col).get(i, 0);
            for v in value.row_slice_mut(i) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::AddCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(value, Op::Silu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// `bound · tanh(a / bound)`: smooth, odd, saturating at `±bound`.
    pub fn soft_clamp(&mut self, a: Var, bound: f64) -> Var {
        let value = self.value(a).map(|x| bound * (x / bound).tanh());
        let rg = self.rg(a);
        self.push(value, Op::SoftClamp(a, bound), rg)
    }

    /// Hard clamp; the gradient is zero outside `(lo, hi)`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `n × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let value = Tensor::from_vec(t.rows(), 1, data);
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Column sums as a `1 × c` row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = col_sums(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Per-row standardisation `(x − mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (n, c) = t.shape();
        let mut value = t.clone();
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = value.row_slice_mut(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(value, Op::Normalize(a, inv_std), rg)
    }

    /// Row-wise softmax. Columns with `key_mask[j] == false` receive zero
    /// probability (their logits are treated as `−∞`).
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Var {
        let t = self.value(a);
        let (n, c) = t.shape();
        if let Some(m) = key_mask {
            assert_eq!(m.len(), c, "softmax mask length");
        }
        let mut value = Tensor::zeros(n, c);
        for i in 0..n {
            let row = t.row_slice(i);
            let valid = |j: usize| key_mask.is_none_or(|m| m[j]);
            let max = (0..c)
                .filter(|&j| valid(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let out = value.row_slice_mut(i);
            let mut total = 0.0;
            for j in 0..c {
                if valid(j) {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (n, c) = t.shape();
        let mut value = t.clone();
        for i in 0..n {
            let lse = log_sum_exp(t.row_slice(i));
            for v in value.row_slice_mut(i) {
                *v -= lse;
            }
        }
        let _ = c;
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Row-wise log-sum-exp as an `n × 1` column.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| log_sum_exp(t.row_slice(i))).collect();
        let value = Tensor::from_vec(t.rows(), 1, data);
        let rg = self.rg(a);
        self.push(value, Op::LogSumExpRows(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "slice_cols out of range");
        let mut value = Tensor::zeros(t.rows(), len);
        for i in 0..t.rows() {
            value
                .row_slice_mut(i)
                .copy_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let c = t.cols();
        let value = Tensor::from_vec(len, c, t.data()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Tensor::zeros(n, total);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.rows(), n, "concat_cols row mismatch");
            for i in 0..n {
                value.row_slice_mut(i)[offset..offset + t.cols()].copy_from_slice(t.row_slice(i));
            }
            offset += t.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.cols(), c, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_vec(rows, c, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshape(rows, cols);
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Picks `a[i, idx[i]]` for every row, giving an `n × 1` column.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(idx.len(), t.rows(), "gather index count");
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let value = Tensor::from_vec(t.rows(), 1, data);
        let rg = self.rg(a);
        self.push(value, Op::GatherCols(a, idx.to_vec()), rg)
    }

    /// Repeats a `1 × c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), 1, "broadcast_rows expects a single row");
        let mut data = Vec::with_capacity(n * t.cols());
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(n, t.cols(), data);
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::from_vec(idx.len(), c, data);
        let rg = self.rg(a);
        self.push(value, Op::SelectRows(a, idx.to_vec()), rg)
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let node_grads = self.backward_nodes(loss);
        let mut grads = Grads::zeros_like(self.store);
        for (i, g) in node_grads.into_iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&self.nodes[i].op, g) {
                grads.tensors[id.0] = Some(g);
            }
        }
        grads
    }

    /// Gradient of `loss` with respect to an arbitrary node (typically a
    /// [`Graph::leaf`]); zeros when the node does not influence the loss.
    pub fn backward_full(&self, loss: Var, wrt: Var) -> Tensor {
        let mut node_grads = self.backward_nodes(loss);
        let (r, c) = self.shape(wrt);
        node_grads[wrt.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(r, c))
    }

    fn backward_nodes(&self, loss: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        grads
    }

    fn propagate(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |v: Var, g: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, dy.matmul_bt(val(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, val(*a).matmul_at(dy), grads);
                }
            }
            Op::MatMulBt(a, b) => {
                if self.rg(*a) {
                    send(*a, dy.matmul(val(*b)), grads);
                }
                if self.rg(*b) {
                    send(*b, dy.matmul_at(val(*a)), grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, dy.clone(), grads);
                send(*b, dy.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, dy.clone(), grads);
                send(*b, dy.map(|g| -g), grads);
            }
            Op::Mul(a, b) => {
                send(*a, dy.zip_map(val(*b), |g, x| g * x), grads);
                send(*b, dy.zip_map(val(*a), |g, x| g * x), grads);
            }
            Op::AddRow(a, r) => {
                send(*a, dy.clone(), grads);
                if self.rg(*r) {
                    send(*r, col_sums(dy), grads);
                }
            }
            Op::MulRow(a, r) => {
                let row = val(*r);
                if self.rg(*a) {
                    let mut g = dy.clone();
                    for i in 0..g.rows() {
                        for (v, b) in g.row_slice_mut(i).iter_mut().zip(row.data()) {
                            *v *= b;
                        }
                    }
                    send(*a, g, grads);
                }
                if self.rg(*r) {
                    send(*r, col_sums(&dy.zip_map(val(*a), |g, x| g * x)), grads);
                }
            }
            Op::AddCol(a, col) => {
                send(*a, dy.clone(), grads);
                if self.rg(*col) {
                    let data = (0..dy.rows())
                        .map(|i| dy.row_slice(i).iter().sum())
                        .collect();
                    send(*col, Tensor::from_vec(dy.rows(), 1, data), grads);
                }
            }
            Op::Scale(a, c) => send(*a, dy.map(|g| g * c), grads),
            Op::AddScalar(a) => send(*a, dy.clone(), grads),
            Op::Tanh(a) => send(*a, dy.zip_map(y, |g, t| g * (1.0 - t * t)), grads),
            Op::Relu(a) => send(
                *a,
                dy.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                grads,
            ),
            Op::Silu(a) => send(
                *a,
                dy.zip_map(val(*a), |g, x| {
                    let s = sigmoid(x);
                    g * (s + x * s * (1.0 - s))
                }),
                grads,
            ),
            Op::Exp(a) => send(*a, dy.zip_map(y, |g, e| g * e), grads),
            Op::Square(a) => send(*a, dy.zip_map(val(*a), |g, x| 2.0 * g * x), grads),
            Op::SoftClamp(a, bound) => send(
                *a,
                dy.zip_map(y, |g, v| g * (1.0 - (v / bound) * (v / bound))),
                grads,
            ),
            Op::Clamp(a, lo, hi) => send(
                *a,
                dy.zip_map(val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
                grads,
            ),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::full(r, c, dy.item()), grads);
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = dy.get(i, 0);
                    for v in g.row_slice_mut(i) {
                        *v = gi;
                    }
                }
                send(*a, g, grads);
            }
            Op::SumCols(a) => {
                let (r, _) = val(*a).shape();
                let mut data = Vec::with_capacity(r * dy.len());
                for _ in 0..r {
                    data.extend_from_slice(dy.data());
                }
                send(*a, Tensor::from_vec(r, dy.cols(), data), grads);
            }
            Op::Normalize(a, inv_std) => {
                let (r, c) = y.shape();
                let mut g = Tensor::zeros(r, c);
                for (i, &is) in inv_std.iter().enumerate().take(r) {
                    let yr = y.row_slice(i);
                    let dr = dy.row_slice(i);
                    let mean_d = dr.iter().sum::<f64>() / c as f64;
                    let mean_dy = dr.iter().zip(yr).map(|(d, v)| d * v).sum::<f64>() / c as f64;
                    for (j, out) in g.row_slice_mut(i).iter_mut().enumerate() {
                        *out = is * (dr[j] - mean_d - yr[j] * mean_dy);
                    }
                }
                send(*a, g, grads);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = y.shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let yr = y.row_slice(i);
                    let dr = dy.row_slice(i);
                    let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for (j, out) in g.row_slice_mut(i).iter_mut().enumerate() {
                        *out = yr[j] * (dr[j] - dot);
                    }
                }
                send(*a, g, grads);
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = y.shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let yr = y.row_slice(i);
                    let dr = dy.row_slice(i);
                    let total: f64 = dr.iter().sum();
                    for (j, out) in g.row_slice_mut(i).iter_mut().enumerate() {
                        *out = dr[j] - yr[j].exp() * total;
                    }
                }
                send(*a, g, grads);
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let (r, c) = x.shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let lse = y.get(i, 0);
                    let gi = dy.get(i, 0);
                    for (out, xv) in g.row_slice_mut(i).iter_mut().zip(x.row_slice(i)) {
                        *out = gi * (xv - lse).exp();
                    }
                }
                send(*a, g, grads);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    g.row_slice_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row_slice(i));
                }
                send(*a, g, grads);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                g.data_mut()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.data());
                send(*a, g, grads);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if self.rg(p) {
                        let mut g = Tensor::zeros(r, c);
                        for i in 0..r {
                            g.row_slice_mut(i)
                                .copy_from_slice(&dy.row_slice(i)[offset..offset + c]);
                        }
                        send(p, g, grads);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if self.rg(p) {
                        let g = Tensor::from_vec(
                            r,
                            c,
                            dy.data()[offset * c..(offset + r) * c].to_vec(),
                        );
                        send(p, g, grads);
                    }
                    offset += r;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                send(*a, dy.clone().reshape(r, c), grads);
            }
            Op::GatherCols(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for (i, &j) in idx.iter().enumerate() {
                    g.set(i, j, dy.get(i, 0));
                }
                send(*a, g, grads);
            }
            Op::BroadcastRows(a) => send(*a, col_sums(dy), grads),
            Op::SelectRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (out, d) in g.row_slice_mut(i).iter_mut().zip(dy.row_slice(k)) {
                        *out += d;
                    }
                }
                send(*a, g, grads);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn col_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
            *o += v;
        }
    }
    Tensor::row(out)
}
