//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks the records in reverse, so recording order is a valid topological
//! order and every node is visited once. Gradients reaching a node through
//! several consumers are summed.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Shared row-index list used by gather/scatter operations.
pub type RowIndex = Arc<[usize]>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: RowIndex },
    AddGathered { base: Var, terms: Vec<(Var, RowIndex)> },
    ScatterAddRows { x: Var, index: RowIndex },
    BroadcastRows(Var),
    Mse(Var, Var),
    SumSquares(Var),
    Sum(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<String, Vec<f64>>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    /// Gradient of a non-parameter leaf created with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn params(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Vec<f64>> {
        self.params
    }
}

/// Operation recorder. Parameters are borrowed for the tape's lifetime.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<String, Var>,
}

// c (m×n) += op(a) (m×k) · op(b) (k×n); a is stored k×m when `at`, b is n×k when `bt`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m <= SKINNY || k <= SKINNY {
        return gemm_skinny(m, k, n, a, (rsa as usize, csa as usize), b, bt, c);
    }
    // SAFETY: slice lengths cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const SKINNY: usize = 4;

// Packing a large operand costs more than the product when one side has at
// most `SKINNY` rows or the inner dimension is that small, so stream it once.
#[allow(clippy::too_many_arguments)]
fn gemm_skinny(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], bt: bool, c: &mut [f64]) {
    let a_at = |i: usize, p: usize| a[i * rsa + p * csa];
    if bt {
        // b is n×k: every output entry is a dot product of contiguous rows.
        for i in 0..m {
            for j in 0..n {
                let row = &b[j * k..(j + 1) * k];
                let mut s = 0.0;
                for (p, &bv) in row.iter().enumerate() {
                    s += a_at(i, p) * bv;
                }
                c[i * n + j] += s;
            }
        }
    } else {
        for p in 0..k {
            let row = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let av = a_at(i, p);
                for (cv, &bv) in c[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *cv += av * bv;
                }
            }
        }
    }
}

pub(crate) fn matmul_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    gemm_acc(m, k, n, a.values(), false, b.values(), false, out.values_mut());
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

impl<'p> Tape<'p> {
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a differentiable leaf; read its gradient with [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records (once) a borrowed parameter as a differentiable leaf.
    pub fn param(&mut self, params: &'p ParameterSet, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = params.get(name)?;
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
            param: Some(name.to_string()),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let out = matmul_values(ta, tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.cols() != tw.rows() {
            return Err(Error::Shape {
                op: "affine",
                lhs: tx.shape(),
                rhs: tw.shape(),
            });
        }
        if tb.shape() != (1, tw.cols()) {
            return Err(Error::Shape {
                op: "affine bias",
                lhs: (1, tw.cols()),
                rhs: tb.shape(),
            });
        }
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        let mut out = Tensor::zeros(m, n);
        {
            let o = out.values_mut();
            for row in o.chunks_exact_mut(n) {
                row.copy_from_slice(tb.values());
            }
            gemm_acc(m, k, n, tx.values(), false, tw.values(), false, o);
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Affine { x, w, b }, ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op_name, ta, tb)?;
        let vals = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), vals)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let vals = t.values().iter().map(|v| v * s).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), vals).expect("same shape");
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        let vals = t.values().iter().map(|v| f(*v)).collect();
        Tensor::from_vec(t.rows(), t.cols(), vals).expect("same shape")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: (rows, 0),
                    rhs: t.shape(),
                });
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        {
            let o = out.values_mut();
            let mut off = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let src = self.value(*p).values();
                for r in 0..rows {
                    o[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
                }
                off += w;
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::Range(format!("slice_cols {start}..{end} of {:?}", t.shape())));
        }
        let w = end - start;
        let mut vals = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            vals.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::from_vec(t.rows(), w, vals)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(Error::Range(format!("slice_rows {start}..{end} of {:?}", t.shape())));
        }
        let c = t.cols();
        let out = Tensor::from_vec(end - start, c, t.values()[start * c..end * c].to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SliceRows { x, start }, ng))
    }

    fn check_index(&self, op: &str, index: &[usize], rows: usize) -> Result<()> {
        if let Some(bad) = index.iter().find(|i| **i >= rows) {
            return Err(Error::Range(format!("{op}: row {bad} out of {rows}")));
        }
        Ok(())
    }

    /// `out[k] = x[index[k]]`.
    pub fn gather_rows(&mut self, x: Var, index: RowIndex) -> Result<Var> {
        let t = self.value(x);
        self.check_index("gather_rows", &index, t.rows())?;
        let c = t.cols();
        let mut vals = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            vals.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(index.len(), c, vals)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::GatherRows { x, index }, ng))
    }

    /// `out[k] = base[k] + Σ_t src_t[index_t[k]]`; equal to a sum of gathers
    /// without materialising each gathered matrix.
    pub fn add_gathered(&mut self, base: Var, terms: &[(Var, RowIndex)]) -> Result<Var> {
        let tb = self.value(base);
        let (e, c) = tb.shape();
        let mut out = tb.clone();
        out.set_requires_grad(false);
        for (src, index) in terms {
            let ts = self.value(*src);
            if ts.cols() != c || index.len() != e {
                return Err(Error::Shape {
                    op: "add_gathered",
                    lhs: (e, c),
                    rhs: (index.len(), ts.cols()),
                });
            }
            self.check_index("add_gathered", index, ts.rows())?;
            let o = out.values_mut();
            for (k, &i) in index.iter().enumerate() {
                o[k * c..(k + 1) * c]
                    .iter_mut()
                    .zip(ts.row(i))
                    .for_each(|(a, b)| *a += b);
            }
        }
        let ng = self.needs(base) || terms.iter().any(|(s, _)| self.needs(*s));
        Ok(self.push(
            out,
            Op::AddGathered {
                base,
                terms: terms.to_vec(),
            },
            ng,
        ))
    }

    /// `out[index[k]] += x[k]` into a `rows × cols` zero matrix.
    pub fn scatter_add_rows(&mut self, x: Var, index: RowIndex, rows: usize) -> Result<Var> {
        let t = self.value(x);
        if index.len() != t.rows() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: t.shape(),
                rhs: (index.len(), 1),
            });
        }
        self.check_index("scatter_add_rows", &index, rows)?;
        let c = t.cols();
        let mut out = Tensor::zeros(rows, c);
        {
            let o = out.values_mut();
            for (k, &i) in index.iter().enumerate() {
                o[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(t.row(k))
                    .for_each(|(a, b)| *a += b);
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::ScatterAddRows { x, index }, ng))
    }

    /// Repeats a single row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: (1, t.cols()),
                rhs: t.shape(),
            });
        }
        let vals = t.values().repeat(rows);
        let out = Tensor::from_vec(rows, t.cols(), vals)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::BroadcastRows(x), ng))
    }

    /// Mean of squared elementwise differences, as a 1×1 value.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        same_shape("mse", tp, tt)?;
        if tp.is_empty() {
            return Err(Error::Contract("mse of empty tensors".into()));
        }
        let n = tp.len() as f64;
        let s: f64 = tp.values().iter().zip(tt.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target), ng))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).values().iter().map(|v| v * v).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).values().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Backpropagates from a scalar (1×1) value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let t = self.value(loss);
        if t.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: (1, 1),
                rhs: t.shape(),
            });
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Backpropagates arbitrary upstream gradients into the recorded graph.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        for (v, seed) in seeds {
            same_shape("backward seed", self.value(*v), seed)?;
            acc(&mut grads, &self.nodes, *v, |g| {
                g.iter_mut().zip(seed.values()).for_each(|(a, b)| *a += b)
            });
        }
        let mut out = Gradients::default();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = &node.value;
            let nodes = &self.nodes;
            let val = |v: &Var| -> &Tensor { &nodes[v.0].value };
            match &node.op {
                Op::Leaf => {
                    match &node.param {
                        Some(name) => {
                            out.params.insert(name.clone(), g);
                        }
                        None => {
                            out.leaves.insert(Var(i), g);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                    acc(&mut grads, nodes, *a, |da| gemm_acc(m, nn, k, &g, false, tb.values(), true, da));
                    acc(&mut grads, nodes, *b, |db| gemm_acc(k, m, nn, ta.values(), true, &g, false, db));
                }
                Op::Affine { x, w, b } => {
                    let (tx, tw) = (val(x), val(w));
                    let (m, k, nn) = (tx.rows(), tx.cols(), tw.cols());
                    acc(&mut grads, nodes, *x, |dx| gemm_acc(m, nn, k, &g, false, tw.values(), true, dx));
                    acc(&mut grads, nodes, *w, |dw| gemm_acc(k, m, nn, tx.values(), true, &g, false, dw));
                    acc(&mut grads, nodes, *b, |db| {
                        for row in g.chunks_exact(nn) {
                            db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(&mut grads, nodes, *a, |d| add_into(d, &g));
                    acc(&mut grads, nodes, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, nodes, *a, |d| add_into(d, &g));
                    acc(&mut grads, nodes, *b, |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    acc(&mut grads, nodes, *a, |d| {
                        for ((x, gg), bv) in d.iter_mut().zip(&g).zip(tb.values()) {
                            *x += gg * bv;
                        }
                    });
                    acc(&mut grads, nodes, *b, |d| {
                        for ((x, gg), av) in d.iter_mut().zip(&g).zip(ta.values()) {
                            *x += gg * av;
                        }
                    });
                }
                Op::Scale(x, s) => {
                    acc(&mut grads, nodes, *x, |d| d.iter_mut().zip(&g).for_each(|(a, b)| *a += s * b));
                }
                Op::Tanh(x) => {
                    acc(&mut grads, nodes, *x, |d| {
                        for ((a, gg), yv) in d.iter_mut().zip(&g).zip(y.values()) {
                            *a += gg * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    acc(&mut grads, nodes, *x, |d| {
                        for ((a, gg), yv) in d.iter_mut().zip(&g).zip(y.values()) {
                            *a += gg * yv * (1.0 - yv);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = y.cols();
                    let mut off = 0;
                    for p in parts {
                        let w = val(p).cols();
                        acc(&mut grads, nodes, *p, |d| {
                            for r in 0..y.rows() {
                                add_into(&mut d[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                            }
                        });
                        off += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let c = val(x).cols();
                    let w = y.cols();
                    acc(&mut grads, nodes, *x, |d| {
                        for r in 0..y.rows() {
                            add_into(&mut d[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w]);
                        }
                    });
                }
                Op::SliceRows { x, start } => {
                    let c = y.cols();
                    acc(&mut grads, nodes, *x, |d| add_into(&mut d[start * c..start * c + g.len()], &g));
                }
                Op::GatherRows { x, index } => {
                    let c = y.cols();
                    acc(&mut grads, nodes, *x, |d| scatter_into(d, &g, index, c));
                }
                Op::AddGathered { base, terms } => {
                    let c = y.cols();
                    acc(&mut grads, nodes, *base, |d| add_into(d, &g));
                    for (src, index) in terms {
                        acc(&mut grads, nodes, *src, |d| scatter_into(d, &g, index, c));
                    }
                }
                Op::ScatterAddRows { x, index } => {
                    let c = y.cols();
                    acc(&mut grads, nodes, *x, |d| {
                        for (k, &i) in index.iter().enumerate() {
                            add_into(&mut d[k * c..(k + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    });
                }
                Op::BroadcastRows(x) => {
                    let c = y.cols();
                    acc(&mut grads, nodes, *x, |d| {
                        for row in g.chunks_exact(c) {
                            add_into(d, row);
                        }
                    });
                }
                Op::Mse(p, t) => {
                    let (tp, tt) = (val(p), val(t));
                    let k = 2.0 * g[0] / tp.len() as f64;
                    acc(&mut grads, nodes, *p, |d| {
                        for ((a, pv), tv) in d.iter_mut().zip(tp.values()).zip(tt.values()) {
                            *a += k * (pv - tv);
                        }
                    });
                    acc(&mut grads, nodes, *t, |d| {
                        for ((a, pv), tv) in d.iter_mut().zip(tp.values()).zip(tt.values()) {
                            *a -= k * (pv - tv);
                        }
                    });
                }
                Op::SumSquares(x) => {
                    let tx = val(x);
                    acc(&mut grads, nodes, *x, |d| {
                        for (a, v) in d.iter_mut().zip(tx.values()) {
                            *a += 2.0 * g[0] * v;
                        }
                    });
                }
                Op::Sum(x) => {
                    acc(&mut grads, nodes, *x, |d| d.iter_mut().for_each(|a| *a += g[0]));
                }
            }
        }
        Ok(out)
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

fn scatter_into(d: &mut [f64], g: &[f64], index: &[usize], c: usize) {
    for (k, &i) in index.iter().enumerate() {
        add_into(&mut d[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(g);
}
