//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Every node holds a row-major `rows x cols` block of `f64`. Rows index a
//! batch, columns index features; a `1 x 1` node is a scalar. Elementwise
//! binary ops broadcast any operand whose rows or cols equal 1.
//!
//! Parameters enter the tape through [`Tape::param`], which binds a tensor of
//! one [`ParamStore`] at most once per tape. After [`Tape::backward`] the
//! returned [`Gradients`] can be accumulated into that store.

use super::params::{ParamId, ParamStore};
use crate::special;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Softplus,
    LnSoftplus,
    Abs,
    Relu,
    Square,
    Sqrt,
    Exprel,
    LnGamma,
    LnNormalSf,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `x * w^T` with `x: B x k`, `w: n x k`.
    MatMulT(Var, Var),
    Unary(Var, Unary),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    /// `ln Q(a, x)` elementwise, same shape operands.
    LnGammaQ(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
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

    /// Drops all nodes and parameter bindings, keeping allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.bound.clear();
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!((n.rows, n.cols), (1, 1), "node is not a scalar");
        n.value[0]
    }

    /// Row `r` of node `v` as a slice.
    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = &self.nodes[v.0];
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    /// A constant (non-differentiated) input.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape mismatch");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn row_vector(&mut self, value: &[f64]) -> Var {
        self.constant(1, value.len(), value.to_vec())
    }

    pub fn column(&mut self, value: &[f64]) -> Var {
        self.constant(value.len(), 1, value.to_vec())
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(1, 1, vec![x])
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(rows, cols, vec![0.0; rows * cols])
    }

    /// A value-only copy of `v`; gradients do not flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (r, c, val) = (n.rows, n.cols, n.value.clone());
        self.constant(r, c, val)
    }

    /// Binds parameter `id` of `store`, reusing the node on repeat calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if i < self.bound.len() {
            if let Some(v) = self.bound[i] {
                return v;
            }
        } else {
            self.bound.resize(i + 1, None);
        }
        let t = store.tensor(id);
        let (rows, cols) = t.matrix_shape();
        let v = self.push(rows, cols, t.values.clone(), Op::Param(id));
        self.bound[i] = Some(v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let (r, c) = broadcast_shape(sa, sb);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(r * c);
        if sa == sb {
            out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        } else {
            for i in 0..r {
                for j in 0..c {
                    out.push(f(av[bidx(sa, i, j)], bv[bidx(sb, i, j)]));
                }
            }
        }
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `x * w^T`: `(B x k) . (n x k)^T -> B x n`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (b, k) = self.shape(x);
        let (n, k2) = self.shape(w);
        assert_eq!(k, k2, "matmul_t inner dimension mismatch");
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            let xr = &xv[i * k..(i + 1) * k];
            for j in 0..n {
                let wr = &wv[j * k..(j + 1) * k];
                out[i * n + j] = xr.iter().zip(wr).map(|(p, q)| p * q).sum();
            }
        }
        self.push(b, n, out, Op::MatMulT(x, w))
    }

    /// Affine map `x * w^T + bias` with `bias: 1 x n`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let m = self.matmul_t(x, w);
        self.add(m, bias)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let n = &self.nodes[a.0];
        let (r, c) = (n.rows, n.cols);
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |x| -x,
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => special::sigmoid,
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Softplus => special::softplus,
            Unary::LnSoftplus => special::ln_softplus,
            Unary::Abs => f64::abs,
            Unary::Relu => |x| x.max(0.0),
            Unary::Square => |x| x * x,
            Unary::Sqrt => f64::sqrt,
            Unary::Exprel => special::exprel,
            Unary::LnGamma => special::ln_gamma,
            Unary::LnNormalSf => special::ln_normal_sf,
        };
        let out = n.value.iter().map(|&x| f(x)).collect();
        self.push(r, c, out, Op::Unary(a, kind))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let n = &self.nodes[a.0];
        let (r, c) = (n.rows, n.cols);
        let out = n.value.iter().map(|&x| k * x).collect();
        self.push(r, c, out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let n = &self.nodes[a.0];
        let (r, c) = (n.rows, n.cols);
        let out = n.value.iter().map(|&x| x + k).collect();
        self.push(r, c, out, Op::AddScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sum: `B x n -> B x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let n = &self.nodes[a.0];
        let (r, c) = (n.rows, n.cols);
        let out = n.value.chunks(c).map(|row| row.iter().sum()).collect();
        self.push(r, 1, out, Op::SumCols(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = parts
            .iter()
            .map(|&p| self.shape(p).0)
            .max()
            .unwrap();
        for &p in parts {
            let r = self.shape(p).0;
            assert!(r == rows || r == 1, "concat_cols row mismatch");
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let n = &self.nodes[p.0];
                let ri = if n.rows == 1 { 0 } else { i };
                out.extend_from_slice(&n.value[ri * n.cols..(ri + 1) * n.cols]);
            }
        }
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let n = &self.nodes[a.0];
        assert!(start + len <= n.cols, "slice_cols out of range");
        let (r, c) = (n.rows, n.cols);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&n.value[i * c + start..i * c + start + len]);
        }
        self.push(r, len, out, Op::SliceCols(a, start))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let n = &self.nodes[p.0];
            assert_eq!(n.cols, cols, "stack_rows column mismatch");
            rows += n.rows;
            out.extend_from_slice(&n.value);
        }
        self.push(rows, cols, out, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let n = &self.nodes[a.0];
        assert!(start + len <= n.rows, "slice_rows out of range");
        let c = n.cols;
        let out = n.value[start * c..(start + len) * c].to_vec();
        self.push(len, c, out, Op::SliceRows(a, start))
    }

    /// Elementwise `ln Q(a, x)`, the log upper regularized incomplete gamma.
    pub fn ln_gamma_q(&mut self, a: Var, x: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(x), "ln_gamma_q shape mismatch");
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[x.0].value)
            .map(|(&a, &x)| special::ln_gamma_q(a, x))
            .collect();
        self.push(r, c, out, Op::LnGammaQ(a, x))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Panics if `loss` is not `1 x 1`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let ln = &self.nodes[loss.0];
        assert_eq!((ln.rows, ln.cols), (1, 1), "backward requires a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out_shape = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accum_broadcast(&mut grads, *a, out_shape, &g, |_, _, gi| gi);
                    self.accum_broadcast(&mut grads, *b, out_shape, &g, |_, _, gi| gi);
                }
                Op::Sub(a, b) => {
                    self.accum_broadcast(&mut grads, *a, out_shape, &g, |_, _, gi| gi);
                    self.accum_broadcast(&mut grads, *b, out_shape, &g, |_, _, gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa = self.shape(a);
                    let sb = self.shape(b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    self.accum_broadcast(&mut grads, a, out_shape, &g, |i, j, gi| {
                        gi * bv[bidx(sb, i, j)]
                    });
                    self.accum_broadcast(&mut grads, b, out_shape, &g, |i, j, gi| {
                        gi * av[bidx(sa, i, j)]
                    });
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa = self.shape(a);
                    let sb = self.shape(b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    self.accum_broadcast(&mut grads, a, out_shape, &g, |i, j, gi| {
                        gi / bv[bidx(sb, i, j)]
                    });
                    self.accum_broadcast(&mut grads, b, out_shape, &g, |i, j, gi| {
                        let y = bv[bidx(sb, i, j)];
                        -gi * av[bidx(sa, i, j)] / (y * y)
                    });
                }
                Op::MatMulT(x, w) => {
                    let (x, w) = (*x, *w);
                    let (b, k) = self.shape(x);
                    let n = self.shape(w).0;
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    // dx = g * w ; dw = g^T * x
                    let mut dx = vec![0.0; b * k];
                    let mut dw = vec![0.0; n * k];
                    for i in 0..b {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let wr = &wv[j * k..(j + 1) * k];
                            let xr = &xv[i * k..(i + 1) * k];
                            let dxr = &mut dx[i * k..(i + 1) * k];
                            for t in 0..k {
                                dxr[t] += gij * wr[t];
                            }
                            let dwr = &mut dw[j * k..(j + 1) * k];
                            for t in 0..k {
                                dwr[t] += gij * xr[t];
                            }
                        }
                    }
                    add_into(&mut grads, x, dx);
                    add_into(&mut grads, w, dw);
                }
                Op::Unary(a, kind) => {
                    let a = *a;
                    let xv = &self.nodes[a.0].value;
                    let yv = &node.value;
                    let d: Vec<f64> = (0..g.len())
                        .map(|i| g[i] * unary_deriv(*kind, xv[i], yv[i]))
                        .collect();
                    add_into(&mut grads, a, d);
                }
                Op::Scale(a, k) => {
                    let d = g.iter().map(|x| x * k).collect();
                    add_into(&mut grads, *a, d);
                }
                Op::AddScalar(a) => add_into(&mut grads, *a, g),
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.len();
                    add_into(&mut grads, *a, vec![g[0]; n]);
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Vec::with_capacity(r * c);
                    for gi in g.iter().take(r) {
                        d.extend(std::iter::repeat_n(*gi, c));
                    }
                    add_into(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = node.rows;
                    let cols = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let mut d = vec![0.0; pr * pc];
                        for i in 0..rows {
                            let pi = if pr == 1 { 0 } else { i };
                            for j in 0..pc {
                                d[pi * pc + j] += g[i * cols + off + j];
                            }
                        }
                        off += pc;
                        add_into(&mut grads, p, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let len = node.cols;
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        d[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    add_into(&mut grads, *a, d);
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(&mut grads, p, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut d = vec![0.0; r * c];
                    d[start * c..start * c + g.len()].copy_from_slice(&g);
                    add_into(&mut grads, *a, d);
                }
                Op::LnGammaQ(a, x) => {
                    let av = &self.nodes[a.0].value;
                    let xv = &self.nodes[x.0].value;
                    let mut da = Vec::with_capacity(g.len());
                    let mut dx = Vec::with_capacity(g.len());
                    for i in 0..g.len() {
                        let (ga, gx) = special::ln_gamma_q_grad(av[i], xv[i]);
                        da.push(g[i] * ga);
                        dx.push(g[i] * gx);
                    }
                    add_into(&mut grads, *a, da);
                    add_into(&mut grads, *x, dx);
                }
            }
        }

        let mut params = Vec::new();
        for (idx, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Param(id)) = (g, &self.nodes[idx].op) {
                params.push((*id, g));
            }
        }
        Gradients { params }
    }

    fn accum_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Var,
        out_shape: (usize, usize),
        g: &[f64],
        f: impl Fn(usize, usize, f64) -> f64,
    ) {
        let ts = self.shape(target);
        let mut d = vec![0.0; ts.0 * ts.1];
        if ts == out_shape {
            let c = out_shape.1;
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = f(k / c, k % c, g[k]);
            }
        } else {
            for i in 0..out_shape.0 {
                for j in 0..out_shape.1 {
                    d[bidx(ts, i, j)] += f(i, j, g[i * out_shape.1 + j]);
                }
            }
        }
        add_into(grads, target, d);
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

fn unary_deriv(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Ln => 1.0 / x,
        Unary::Softplus => special::sigmoid(x),
        Unary::LnSoftplus => special::sigmoid(x) / special::softplus(x).max(f64::MIN_POSITIVE),
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::Sqrt => 0.5 / y,
        Unary::Exprel => special::exprel_deriv(x),
        Unary::LnGamma => special::digamma(x),
        Unary::LnNormalSf => special::ln_normal_sf_deriv(x),
    }
}

/// Parameter gradients produced by one backward sweep.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    /// Adds these gradients into the `grad` buffers of `store`.
    pub fn accumulate(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            let t = store.tensor_mut(*id);
            t.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, sh, v)| s.add(n, sh.clone(), v.clone()).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn sum_of_params_has_unit_grad() {
        let (mut store, ids) = store_with(&[("a", vec![2, 3], vec![0.5; 6])]);
        let mut t = Tape::new();
        let a = t.param(&store, ids[0]);
        let s = t.sum(a);
        t.backward(s).accumulate(&mut store);
        assert!(store.tensor(ids[0]).grad.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let (mut store, ids) = store_with(&[("a", vec![3], vec![1.0, 2.0, 3.0])]);
        store.zero_grad();
        let mut t = Tape::new();
        let _a = t.param(&store, ids[0]);
        let c = t.scalar_const(4.2);
        t.backward(c).accumulate(&mut store);
        assert!(store.tensor(ids[0]).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn non_scalar_loss_panics() {
        let mut t = Tape::new();
        let x = t.row_vector(&[1.0, 2.0]);
        t.backward(x);
    }

    #[test]
    fn repeated_binding_reuses_node() {
        let (store, ids) = store_with(&[("a", vec![1], vec![2.0])]);
        let mut t = Tape::new();
        let a1 = t.param(&store, ids[0]);
        let a2 = t.param(&store, ids[0]);
        assert_eq!(a1, a2);
    }

    #[test]
    fn broadcast_grads_reduce() {
        let (mut store, ids) = store_with(&[
            ("row", vec![1, 3], vec![1.0, 2.0, 3.0]),
            ("s", vec![1, 1], vec![2.0]),
        ]);
        let mut t = Tape::new();
        let x = t.constant(2, 3, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let r = t.param(&store, ids[0]);
        let s = t.param(&store, ids[1]);
        let y = t.add(x, r);
        let z = t.mul(y, s);
        let l = t.sum(z);
        t.backward(l).accumulate(&mut store);
        assert_eq!(store.tensor(ids[0]).grad, vec![4.0, 4.0, 4.0]);
        // sum(x + r) = 9 + 2 * 6 = 21
        assert_eq!(store.tensor(ids[1]).grad, vec![21.0]);
    }
}
