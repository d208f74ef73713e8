//! Dynamic reverse-mode tape over a closed set of tensor primitives.
//!
//! Every forward op evaluates eagerly and records a node. [`Tape::backward`]
//! walks the nodes in reverse and returns gradients for every node; it does not
//! mutate the tape, so calling it twice yields identical results.

mod gradcheck;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ssm::kernel::{self as scan_kernel, ScanKernel};
use crate::tensor::kernels;
use crate::tensor::Tensor;

/// Row selector for [`Var::gather_rows`]; `None` yields a zero row.
pub type RowIndex = Option<u32>;

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Sigmoid,
    Silu,
    Softplus,
    Rsqrt,
    Tanh,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum MatMode {
    /// `[.., m, k] x [k, n]`
    Shared,
    /// `[b, m, k] x [b, k, n]`
    Batched,
    /// `[b, m, k] x [b, n, k]^T`
    BatchedBt,
}

enum Op {
    Leaf,
    Binary {
        kind: Binary,
        a: usize,
        b: usize,
        map_a: Option<Arc<Vec<u32>>>,
        map_b: Option<Arc<Vec<u32>>>,
    },
    Scale(usize, f64),
    AddScalar(usize),
    Unary(usize, Unary),
    MatMul {
        a: usize,
        b: usize,
        mode: MatMode,
        dims: [usize; 4],
    },
    Softmax(usize),
    SumLast(usize),
    SumAll(usize),
    Reshape(usize),
    TransposeLast2 {
        a: usize,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Gather {
        a: usize,
        idx: Arc<Vec<RowIndex>>,
        row_len: usize,
    },
    Concat0(Vec<usize>),
    Pool {
        a: usize,
        stride: usize,
    },
    Upsample {
        a: usize,
        factor: usize,
    },
    Scan {
        x: usize,
        delta: usize,
        b: usize,
        c: usize,
        a: usize,
        dims: [usize; 3],
        states: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn with<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[out.id].value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got {:?}",
                nodes[out.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[out.id] = Some(vec![1.0]);
        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn scatter_mapped(g: &[f64], map: &Option<Arc<Vec<u32>>>, len: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    match map {
        None => g.iter().enumerate().map(|(i, &gv)| gv * f(i)).collect(),
        Some(m) => {
            let mut out = vec![0.0; len];
            for (i, (&gv, &j)) in g.iter().zip(m.iter()).enumerate() {
                out[j as usize] += gv * f(i);
            }
            out
        }
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let val = |i: usize| nodes[i].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Binary {
            kind,
            a,
            b,
            map_a,
            map_b,
        } => {
            let (va, vb) = (val(*a), val(*b));
            let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i] as usize);
            let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i] as usize);
            let (ga, gb) = match kind {
                Binary::Add => (
                    scatter_mapped(g, map_a, va.len(), |_| 1.0),
                    scatter_mapped(g, map_b, vb.len(), |_| 1.0),
                ),
                Binary::Sub => (
                    scatter_mapped(g, map_a, va.len(), |_| 1.0),
                    scatter_mapped(g, map_b, vb.len(), |_| -1.0),
                ),
                Binary::Mul => (
                    scatter_mapped(g, map_a, va.len(), |i| vb[ib(i)]),
                    scatter_mapped(g, map_b, vb.len(), |i| va[ia(i)]),
                ),
            };
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Scale(a, c) => accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
        Op::AddScalar(a) => accumulate(grads, *a, g.to_vec()),
        Op::Unary(a, kind) => {
            let (x, y) = (val(*a), node.value.data());
            let d: Vec<f64> = match kind {
                Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                Unary::Silu => g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect(),
                Unary::Softplus => g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect(),
                Unary::Rsqrt => g.iter().zip(y).map(|(g, y)| -0.5 * g * y * y * y).collect(),
                Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            };
            accumulate(grads, *a, d);
        }
        Op::MatMul { a, b, mode, dims } => {
            let (va, vb) = (val(*a), val(*b));
            let [batch, m, k, n] = *dims;
            let mut ga = vec![0.0; va.len()];
            let mut gb = vec![0.0; vb.len()];
            match mode {
                MatMode::Shared => {
                    let rows = batch * m;
                    kernels::matmul_a_bt_acc(g, vb, &mut ga, rows, n, k);
                    kernels::matmul_at_b_acc(va, g, &mut gb, rows, k, n);
                }
                MatMode::Batched | MatMode::BatchedBt => {
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &va[bi * m * k..(bi + 1) * m * k];
                        let bs = &vb[bi * k * n..(bi + 1) * k * n];
                        let gas = &mut ga[bi * m * k..(bi + 1) * m * k];
                        let gbs = &mut gb[bi * k * n..(bi + 1) * k * n];
                        if let MatMode::Batched = mode {
                            kernels::matmul_a_bt_acc(gs, bs, gas, m, n, k);
                            kernels::matmul_at_b_acc(as_, gs, gbs, m, k, n);
                        } else {
                            // out = a b^T with b [n, k]: ga = g b, gb = g^T a
                            kernels::matmul_acc(gs, bs, gas, m, n, k);
                            kernels::matmul_at_b_acc(gs, as_, gbs, m, n, k);
                        }
                    }
                }
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let len = *node.value.shape().last().expect("rank >= 1");
            let mut d = vec![0.0; y.len()];
            for ((dr, yr), gr) in d.chunks_mut(len).zip(y.chunks(len)).zip(g.chunks(len)) {
                let s = kernels::dot(yr, gr);
                for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = yv * (gv - s);
                }
            }
            accumulate(grads, *a, d);
        }
        Op::SumLast(a) => {
            let len = *nodes[*a].value.shape().last().expect("rank >= 1");
            let d = g.iter().flat_map(|&gv| std::iter::repeat_n(gv, len)).collect();
            accumulate(grads, *a, d);
        }
        Op::SumAll(a) => accumulate(grads, *a, vec![g[0]; val(*a).len()]),
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::TransposeLast2 {
            a,
            batch,
            rows,
            cols,
        } => {
            // forward mapped [rows, cols] -> [cols, rows]; reverse it
            accumulate(grads, *a, transpose_blocks(g, *batch, *cols, *rows));
        }
        Op::Gather { a, idx, row_len } => {
            let mut d = vec![0.0; val(*a).len()];
            for (r, src) in idx.iter().enumerate() {
                if let Some(s) = src {
                    let s = *s as usize;
                    let gr = &g[r * row_len..(r + 1) * row_len];
                    d[s * row_len..(s + 1) * row_len]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(dv, gv)| *dv += gv);
                }
            }
            accumulate(grads, *a, d);
        }
        Op::Concat0(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = val(p).len();
                accumulate(grads, p, g[off..off + n].to_vec());
                off += n;
            }
        }
        Op::Pool { a, stride } => {
            let shape = nodes[*a].value.shape();
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let outer = val(*a).len() / (h * w);
            accumulate(
                grads,
                *a,
                kernels::avg_pool2d_backward(g, outer, h, w, *stride),
            );
        }
        Op::Upsample { a, factor } => {
            let shape = nodes[*a].value.shape();
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let outer = val(*a).len() / (h * w);
            accumulate(
                grads,
                *a,
                kernels::upsample2d_backward(g, outer, h, w, *factor),
            );
        }
        Op::Scan {
            x,
            delta,
            b,
            c,
            a,
            dims,
            states,
        } => {
            let [l, d, n] = *dims;
            let sg = scan_kernel::scan_backward(
                val(*x),
                val(*delta),
                val(*b),
                val(*c),
                val(*a),
                states,
                g,
                l,
                d,
                n,
            );
            accumulate(grads, *x, sg.x);
            accumulate(grads, *delta, sg.delta);
            accumulate(grads, *b, sg.b);
            accumulate(grads, *c, sg.c);
            accumulate(grads, *a, sg.a);
        }
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

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn transpose_blocks(x: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..batch {
        let src = &x[bi * rows * cols..(bi + 1) * rows * cols];
        let dst = &mut out[bi * rows * cols..(bi + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

/// Output shape and per-operand index maps for a broadcast binary op.
fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Option<Vec<u32>>, Option<Vec<u32>>)> {
    if a == b {
        return Ok((a.to_vec(), None, None));
    }
    let nd = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; nd - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = Vec::with_capacity(nd);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x != y && x != 1 && y != 1 {
            return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
        }
        out.push(x.max(y));
    }
    let map = |p: &[usize]| -> Option<Vec<u32>> {
        if p == out.as_slice() {
            return None;
        }
        let total: usize = out.iter().product();
        let mut strides = vec![0usize; nd];
        let mut s = 1;
        for i in (0..nd).rev() {
            strides[i] = if p[i] == 1 { 0 } else { s };
            s *= p[i];
        }
        let mut m = Vec::with_capacity(total);
        let mut idx = vec![0usize; nd];
        for _ in 0..total {
            m.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>() as u32);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                if idx[ax] < out[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Some(m)
    };
    let (ma, mb) = (map(&pa), map(&pb));
    Ok((out, ma, mb))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with(self.id, |t| t.shape().to_vec())
    }

    pub fn value(&self) -> Tensor {
        self.tape.with(self.id, Tensor::clone)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.tape.with(self.id, |t| t.data()[0])
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn binary(self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let (shape, ma, mb) = broadcast(a.shape(), b.shape())?;
        let total: usize = shape.iter().product();
        let (da, db) = (a.data(), b.data());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<f64> = match (&ma, &mb) {
            (None, None) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (None, Some(m)) => (0..total).map(|i| f(da[i], db[m[i] as usize])).collect(),
            (Some(m), None) => (0..total).map(|i| f(da[m[i] as usize], db[i])).collect(),
            (Some(m1), Some(m2)) => (0..total)
                .map(|i| f(da[m1[i] as usize], db[m2[i] as usize]))
                .collect(),
        };
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
                map_a: ma.map(Arc::new),
                map_b: mb.map(Arc::new),
            },
        ))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.tape.with(self.id, |t| t.map(|x| x * c));
        self.tape.push(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.tape.with(self.id, |t| t.map(|x| x + c));
        self.tape.push(v, Op::AddScalar(self.id))
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let f = match kind {
            Unary::Exp => f64::exp,
            Unary::Sigmoid => sigmoid,
            Unary::Silu => |x| x * sigmoid(x),
            Unary::Softplus => softplus,
            Unary::Rsqrt => |x: f64| 1.0 / x.sqrt(),
            Unary::Tanh => f64::tanh,
        };
        let v = self.tape.with(self.id, |t| t.map(f));
        self.tape.push(v, Op::Unary(self.id, kind))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(Unary::Silu)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    pub fn rsqrt(self) -> Var<'t> {
        self.unary(Unary::Rsqrt)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self).expect("same shape")
    }

    /// `[.., m, k] x [k, n] -> [.., m, n]`
    pub fn matmul(self, w: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&w);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[w.id].value);
        let (&[k2, n], Some(&k)) = (b.shape(), a.shape().last()) else {
            return Err(Error::dim(format!(
                "matmul rhs must be 2-d, got {:?}",
                b.shape()
            )));
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dims differ: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let rows = a.numel() / k;
        let mut out = vec![0.0; rows * n];
        kernels::matmul_acc(a.data(), b.data(), &mut out, rows, k, n);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            Op::MatMul {
                a: self.id,
                b: w.id,
                mode: MatMode::Shared,
                dims: [rows, 1, k, n],
            },
        ))
    }

    fn batched(self, other: Var<'t>, transpose_rhs: bool) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let (&[ba, m, k], &[bb, r1, r2]) = (a.shape(), b.shape()) else {
            return Err(Error::dim(format!(
                "batched matmul expects 3-d operands, got {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        };
        let (kb, n) = if transpose_rhs { (r2, r1) } else { (r1, r2) };
        if ba != bb || k != kb {
            return Err(Error::dim(format!(
                "batched matmul mismatch: {:?} x {:?} (transpose_rhs={transpose_rhs})",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = vec![0.0; ba * m * n];
        for bi in 0..ba {
            let as_ = &a.data()[bi * m * k..(bi + 1) * m * k];
            let bs = &b.data()[bi * k * n..(bi + 1) * k * n];
            let os = &mut out[bi * m * n..(bi + 1) * m * n];
            if transpose_rhs {
                kernels::matmul_a_bt_acc(as_, bs, os, m, k, n);
            } else {
                kernels::matmul_acc(as_, bs, os, m, k, n);
            }
        }
        drop(nodes);
        let mode = if transpose_rhs {
            MatMode::BatchedBt
        } else {
            MatMode::Batched
        };
        Ok(self.tape.push(
            Tensor::from_parts(vec![ba, m, n], out),
            Op::MatMul {
                a: self.id,
                b: other.id,
                mode,
                dims: [ba, m, k, n],
            },
        ))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`
    pub fn bmm(self, other: Var<'t>) -> Result<Var<'t>> {
        self.batched(other, false)
    }

    /// `[b, m, k] x [b, n, k]^T -> [b, m, n]`
    pub fn bmm_bt(self, other: Var<'t>) -> Result<Var<'t>> {
        self.batched(other, true)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let v = self.tape.with(self.id, |t| {
            let len = *t.shape().last().expect("rank >= 1");
            let mut d = t.data().to_vec();
            kernels::softmax_rows(&mut d, len);
            Tensor::from_parts(t.shape().to_vec(), d)
        });
        self.tape.push(v, Op::Softmax(self.id))
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(self) -> Var<'t> {
        let v = self.tape.with(self.id, |t| {
            let len = *t.shape().last().expect("rank >= 1");
            let mut shape = t.shape().to_vec();
            *shape.last_mut().expect("rank >= 1") = 1;
            Tensor::from_parts(shape, t.data().chunks(len).map(|c| c.iter().sum()).collect())
        });
        self.tape.push(v, Op::SumLast(self.id))
    }

    pub fn mean_last(self) -> Var<'t> {
        let len = *self.shape().last().expect("rank >= 1");
        self.sum_last().scale(1.0 / len as f64)
    }

    pub fn sum(self) -> Var<'t> {
        let v = self
            .tape
            .with(self.id, |t| Tensor::scalar(t.data().iter().sum()));
        self.tape.push(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.tape.with(self.id, Tensor::numel);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.tape.with(self.id, |t| t.reshape(shape))?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(Error::dim(format!("transpose needs rank >= 2, got {shape:?}")));
        }
        let nd = shape.len();
        let (rows, cols) = (shape[nd - 2], shape[nd - 1]);
        let batch = shape.iter().product::<usize>() / (rows * cols);
        let data = self
            .tape
            .with(self.id, |t| transpose_blocks(t.data(), batch, rows, cols));
        let mut out_shape = shape.clone();
        out_shape.swap(nd - 2, nd - 1);
        Ok(self.tape.push(
            Tensor::from_parts(out_shape, data),
            Op::TransposeLast2 {
                a: self.id,
                batch,
                rows,
                cols,
            },
        ))
    }

    /// Treats `self` as rows of `row_len` values and builds
    /// `out[r] = self[idx[r]]` (zeros for `None`), reshaped to `out_shape`.
    pub fn gather_rows(
        self,
        idx: Arc<Vec<RowIndex>>,
        row_len: usize,
        out_shape: &[usize],
    ) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let src = nodes[self.id].value.data();
        if row_len == 0 || src.len() % row_len != 0 {
            return Err(Error::dim(format!(
                "row length {row_len} does not divide {} values",
                src.len()
            )));
        }
        let nrows = src.len() / row_len;
        if out_shape.iter().product::<usize>() != idx.len() * row_len {
            return Err(Error::dim(format!(
                "gather output shape {out_shape:?} does not hold {} rows of {row_len}",
                idx.len()
            )));
        }
        let mut out = vec![0.0; idx.len() * row_len];
        for (r, s) in idx.iter().enumerate() {
            if let Some(s) = *s {
                let s = s as usize;
                if s >= nrows {
                    return Err(Error::dim(format!("gather index {s} >= {nrows} rows")));
                }
                out[r * row_len..(r + 1) * row_len]
                    .copy_from_slice(&src[s * row_len..(s + 1) * row_len]);
            }
        }
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(out_shape.to_vec(), out),
            Op::Gather {
                a: self.id,
                idx,
                row_len,
            },
        ))
    }

    /// Concatenation along the first axis.
    pub fn concat0(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let tape = first.tape;
        let nodes = tape.nodes.borrow();
        let tail = nodes[first.id].value.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            first.same_tape(p);
            let t = &nodes[p.id].value;
            if t.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat trailing dims differ: {:?} vs {tail:?}",
                    t.shape()
                )));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        drop(nodes);
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(tape.push(
            Tensor::from_parts(shape, data),
            Op::Concat0(parts.iter().map(|p| p.id).collect()),
        ))
    }

    /// Average pooling over the last two axes.
    pub fn avg_pool2d(self, stride: usize) -> Result<Var<'t>> {
        let v = self.tape.with(self.id, |t| t.avg_pool2d(stride))?;
        Ok(self.tape.push(v, Op::Pool { a: self.id, stride }))
    }

    /// Half-pixel bilinear upsampling of the last two axes.
    pub fn upsample2d(self, factor: usize) -> Result<Var<'t>> {
        let v = self.tape.with(self.id, |t| t.bilinear_upsample2d(factor))?;
        Ok(self.tape.push(v, Op::Upsample { a: self.id, factor }))
    }

    /// Selective scan over `self = x [L, D]` with per-token `delta [L, D]`,
    /// `b, c [L, N]` and state matrix `a [D, N]`.
    pub fn selective_scan(
        self,
        delta: Var<'t>,
        b: Var<'t>,
        c: Var<'t>,
        a: Var<'t>,
        kernel: ScanKernel,
    ) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let xs = &nodes[self.id].value;
        let &[l, d] = xs.shape() else {
            return Err(Error::dim(format!("scan input must be [L, D], got {:?}", xs.shape())));
        };
        let n = nodes[a.id].value.shape().get(1).copied().unwrap_or(0);
        let check = |v: &Var<'t>, want: [usize; 2], what: &str| -> Result<()> {
            let s = nodes[v.id].value.shape();
            if s != want {
                return Err(Error::ShapeMismatch {
                    what: what.into(),
                    expected: want.to_vec(),
                    found: s.to_vec(),
                });
            }
            Ok(())
        };
        check(&delta, [l, d], "scan delta")?;
        check(&b, [l, n], "scan B")?;
        check(&c, [l, n], "scan C")?;
        check(&a, [d, n], "scan A")?;
        let (y, states) = scan_kernel::scan_forward(
            xs.data(),
            nodes[delta.id].value.data(),
            nodes[b.id].value.data(),
            nodes[c.id].value.data(),
            nodes[a.id].value.data(),
            l,
            d,
            n,
            kernel,
        );
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(vec![l, d], y),
            Op::Scan {
                x: self.id,
                delta: delta.id,
                b: b.id,
                c: c.id,
                a: a.id,
                dims: [l, d, n],
                states,
            },
        ))
    }
}
