//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Each
//! node keeps its value; [`Graph::backward`] walks the nodes in reverse
//! creation order and accumulates adjoints. Leaves created from frozen
//! parameters or constants do not require a gradient, and the backward pass
//! skips any node whose inputs are all gradient-free.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Gelu,
    Silu,
    Relu,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Square,
    Softplus,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample2x(Var),
    AvgPool2d(Var, usize, usize),
    MeanLast(Var, usize),
    MeanRows(Var),
    L2NormalizeRows(Var),
    GatherRows(Var, Vec<usize>),
    PickRows(Var, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, Var>>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self { nodes: RefCell::default(), params: RefCell::default(), check_finite: cfg!(debug_assertions) }
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var, bool)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient per trainable parameter reached from the loss.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .filter_map(|(name, v, _)| self.get(*v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [m, n] => (*m, *n),
        s => panic!("expected a 2-D tensor, got {s:?}"),
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        [c, h, w] => (*c, *h, *w),
        s => panic!("expected a 3-D tensor, got {s:?}"),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that never asserts finiteness, for probing functions that may
    /// leave their domain.
    pub fn lenient() -> Self {
        Self { check_finite: false, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.check_finite {
            assert!(value.is_finite(), "non-finite value produced by {op:?}");
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter; created once per graph.
    pub fn param(&self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.borrow().get(name) {
            return v;
        }
        let p = store.get(name).unwrap_or_else(|| panic!("no parameter named `{name}`"));
        let v = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.borrow_mut().insert(name.to_string(), v);
        v
    }

    fn binary_same(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(va.shape(), data), op, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), self.rg(a))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Shift(a), self.rg(a))
    }

    /// `[m, n] + [n]`, expanding the bias over rows.
    pub fn add_row_bias(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (_, n) = dims2(&va);
        assert_eq!(vb.len(), n, "row bias length mismatch");
        let mut out = va.as_ref().clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(vb.data()).for_each(|(x, y)| *x += y);
        }
        self.push(out, Op::AddRowBias(a, b), self.rg(a) || self.rg(b))
    }

    /// `[c, ...] + [c]`, expanding the bias over trailing dimensions.
    pub fn add_channel_bias(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let c = va.shape()[0];
        assert_eq!(vb.len(), c, "channel bias length mismatch");
        let inner = va.len() / c;
        let mut out = va.as_ref().clone();
        for (ch, plane) in out.data_mut().chunks_mut(inner).enumerate() {
            let bias = vb.data()[ch];
            plane.iter_mut().for_each(|x| *x += bias);
        }
        self.push(out, Op::AddChannelBias(a, b), self.rg(a) || self.rg(b))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = dims2(&va);
        let (k2, n) = dims2(&vb);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, va.data(), false, vb.data(), false, 0.0, &mut c);
        self.push(Tensor::new(&[m, n], c), Op::MatMul(a, b), self.rg(a) || self.rg(b))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = dims2(&va);
        let (n, k2) = dims2(&vb);
        assert_eq!(k, k2, "matmul_nt inner dimension mismatch");
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, va.data(), false, vb.data(), true, 0.0, &mut c);
        self.push(Tensor::new(&[m, n], c), Op::MatMulNT(a, b), self.rg(a) || self.rg(b))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = dims2(&va);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va.data()[i * n + j];
            }
        }
        self.push(Tensor::new(&[n, m], out), Op::Transpose(a), self.rg(a))
    }

    fn unary(&self, a: Var, u: Unary) -> Var {
        let f: fn(f64) -> f64 = match u {
            Unary::Gelu => kernels::gelu,
            Unary::Silu => |x| x * kernels::sigmoid(x),
            Unary::Relu => |x| x.max(0.0),
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Square => |x| x * x,
            Unary::Softplus => kernels::softplus,
        };
        let v = self.value(a).map(f);
        self.push(v, Op::Unary(a, u), self.rg(a))
    }

    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn silu(&self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = dims2(&va);
        let out = kernels::softmax_rows(va.data(), n);
        self.push(Tensor::new(&[m, n], out), Op::SoftmaxRows(a), self.rg(a))
    }

    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = dims2(&va);
        let mut out = va.as_ref().clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        debug_assert_eq!(out.shape(), &[m, n]);
        self.push(out, Op::LogSoftmaxRows(a), self.rg(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.rg(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).as_ref().clone().reshaped(shape);
        self.push(v, Op::Reshape(a), self.rg(a))
    }

    /// Concatenate along the leading axis; trailing dims must agree.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]);
        let mut lead = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(&v.shape()[1..], &first[1..], "concat trailing shape mismatch");
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
            rg |= self.rg(p);
        }
        let mut shape = first.clone();
        shape[0] = lead;
        self.push(Tensor::new(&shape, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// 2-D convolution of `x: [c_in, h, w]` with `w: [c_out, c_in, k, k]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (c_in, h, wd) = dims3(&vx);
        let [c_out, c_in2, k, k2] = vw.shape() else {
            panic!("conv weight must be 4-D, got {:?}", vw.shape())
        };
        assert_eq!(c_in, *c_in2, "conv input channel mismatch");
        assert_eq!(k, k2);
        let geom = ConvGeom { c_in, h, w: wd, k: *k, stride, pad };
        let p = geom.positions();
        let mut out = vec![0.0; c_out * p];
        if *k == 1 && stride == 1 && pad == 0 {
            kernels::gemm(*c_out, c_in, p, vw.data(), false, vx.data(), false, 0.0, &mut out);
        } else {
            let cols = kernels::im2col(vx.data(), &geom);
            kernels::gemm(*c_out, geom.patch(), p, vw.data(), false, &cols, false, 0.0, &mut out);
        }
        let mut rg = self.rg(x) || self.rg(w);
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.len(), *c_out);
            for (plane, bias) in out.chunks_mut(p).zip(vb.data()) {
                plane.iter_mut().for_each(|v| *v += bias);
            }
            rg |= self.rg(b);
        }
        let t = Tensor::new(&[*c_out, geom.h_out(), geom.w_out()], out);
        self.push(t, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn upsample2x(&self, a: Var) -> Var {
        let va = self.value(a);
        let (c, h, w) = dims3(&va);
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(ch * 2 * h + i) * 2 * w + j] = va.data()[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        self.push(Tensor::new(&[c, 2 * h, 2 * w], out), Op::Upsample2x(a), self.rg(a))
    }

    pub fn avg_pool2d(&self, a: Var, kh: usize, kw: usize) -> Var {
        let va = self.value(a);
        let (c, h, w) = dims3(&va);
        assert!(h % kh == 0 && w % kw == 0, "pool window must tile the input");
        let (ho, wo) = (h / kh, w / kw);
        let mut out = vec![0.0; c * ho * wo];
        let norm = 1.0 / (kh * kw) as f64;
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[(ch * ho + i / kh) * wo + j / kw] += va.data()[(ch * h + i) * w + j] * norm;
                }
            }
        }
        self.push(Tensor::new(&[c, ho, wo], out), Op::AvgPool2d(a, kh, kw), self.rg(a))
    }

    /// Mean over the last axis: `[.., k] -> [..]` (a 1-D input becomes `[1]`).
    pub fn mean_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let k = *va.shape().last().unwrap();
        let outer = va.len() / k;
        let out: Vec<f64> = va.data().chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect();
        let shape = if va.shape().len() > 1 { va.shape()[..va.shape().len() - 1].to_vec() } else { vec![1] };
        debug_assert_eq!(out.len(), outer);
        self.push(Tensor::new(&shape, out), Op::MeanLast(a, k), self.rg(a))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = dims2(&va);
        let mut out = vec![0.0; n];
        for row in va.data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x / m as f64);
        }
        self.push(Tensor::new(&[1, n], out), Op::MeanRows(a), self.rg(a))
    }

    pub fn l2_normalize_rows(&self, a: Var) -> Var {
        let va = self.value(a);
        let (_, n) = dims2(&va);
        let mut out = va.as_ref().clone();
        for row in out.data_mut().chunks_mut(n) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        self.push(out, Op::L2NormalizeRows(a), self.rg(a))
    }

    /// Select rows of `table: [v, d]` by index, giving `[idx.len(), d]`.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Var {
        let vt = self.value(table);
        let (v, d) = dims2(&vt);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < v, "row index {i} out of range {v}");
            out.extend_from_slice(vt.row(i));
        }
        self.push(Tensor::new(&[idx.len(), d], out), Op::GatherRows(table, idx.to_vec()), self.rg(table))
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick_rows(&self, a: Var, idx: &[usize]) -> Var {
        let va = self.value(a);
        let (m, n) = dims2(&va);
        assert_eq!(idx.len(), m);
        let out = idx.iter().enumerate().map(|(i, &j)| {
            assert!(j < n);
            va.data()[i * n + j]
        });
        let out: Vec<f64> = out.collect();
        self.push(Tensor::new(&[m], out), Op::PickRows(a, idx.to_vec()), self.rg(a))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(k, &v)| (k.clone(), v, nodes[v.0].requires_grad))
            .collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(nodes[i].value.shape(), g)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

fn with_acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.iter().map(|x| -x).collect());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if rg(*a) {
                accumulate(nodes, grads, *a, g.iter().zip(vb.data()).map(|(x, y)| x * y).collect());
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, g.iter().zip(va.data()).map(|(x, y)| x * y).collect());
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.iter().map(|x| x * c).collect()),
        Op::Shift(a) | Op::Reshape(a) => accumulate(nodes, grads, *a, g.to_vec()),
        Op::AddRowBias(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            let n = val(*b).len();
            with_acc(nodes, grads, *b, |acc| {
                for row in g.chunks(n) {
                    acc.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                }
            });
        }
        Op::AddChannelBias(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            let c = val(*b).len();
            let inner = g.len() / c;
            with_acc(nodes, grads, *b, |acc| {
                for (ch, plane) in g.chunks(inner).enumerate() {
                    acc[ch] += plane.iter().sum::<f64>();
                }
            });
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = dims2(va);
            let n = vb.shape()[1];
            with_acc(nodes, grads, *a, |acc| kernels::gemm(m, n, k, g, false, vb.data(), true, 1.0, acc));
            with_acc(nodes, grads, *b, |acc| kernels::gemm(k, m, n, va.data(), true, g, false, 1.0, acc));
        }
        Op::MatMulNT(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = dims2(va);
            let n = vb.shape()[0];
            with_acc(nodes, grads, *a, |acc| kernels::gemm(m, n, k, g, false, vb.data(), false, 1.0, acc));
            with_acc(nodes, grads, *b, |acc| kernels::gemm(n, m, k, g, true, va.data(), false, 1.0, acc));
        }
        Op::Transpose(a) => {
            let (m, n) = dims2(val(*a));
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    d[i * n + j] = g[j * m + i];
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Unary(a, u) => {
            let x = val(*a).data();
            let y = node.value.data();
            let d: Vec<f64> = match u {
                Unary::Gelu => g.iter().zip(x).map(|(g, &x)| g * kernels::gelu_grad(x)).collect(),
                Unary::Silu => g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = kernels::sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect(),
                Unary::Relu => g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                Unary::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Unary::Square => g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                Unary::Softplus => g.iter().zip(x).map(|(g, &x)| g * kernels::sigmoid(x)).collect(),
            };
            accumulate(nodes, grads, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let n = node.value.shape()[1];
            let mut d = vec![0.0; g.len()];
            for ((y, gr), dr) in node.value.data().chunks(n).zip(g.chunks(n)).zip(d.chunks_mut(n)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dr[j] = y[j] * (gr[j] - dot);
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::LogSoftmaxRows(a) => {
            let n = node.value.shape()[1];
            let mut d = vec![0.0; g.len()];
            for ((y, gr), dr) in node.value.data().chunks(n).zip(g.chunks(n)).zip(d.chunks_mut(n)) {
                let total: f64 = gr.iter().sum();
                for j in 0..n {
                    dr[j] = gr[j] - y[j].exp() * total;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(nodes, grads, *a, vec![g[0]; n]);
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = val(p).len();
                accumulate(nodes, grads, p, g[off..off + n].to_vec());
                off += n;
            }
        }
        Op::Conv2d { x, w, b, geom } => {
            let (vx, vw) = (val(*x), val(*w));
            let c_out = vw.shape()[0];
            let p = geom.positions();
            let k = geom.patch();
            let pointwise = geom.k == 1 && geom.stride == 1 && geom.pad == 0;
            if rg(*w) {
                let cols_owned;
                let cols: &[f64] = if pointwise {
                    vx.data()
                } else {
                    cols_owned = kernels::im2col(vx.data(), geom);
                    &cols_owned
                };
                with_acc(nodes, grads, *w, |acc| kernels::gemm(c_out, p, k, g, false, cols, true, 1.0, acc));
            }
            if let Some(b) = b {
                with_acc(nodes, grads, *b, |acc| {
                    for (a, plane) in acc.iter_mut().zip(g.chunks(p)) {
                        *a += plane.iter().sum::<f64>();
                    }
                });
            }
            if rg(*x) {
                let mut dcols = vec![0.0; k * p];
                kernels::gemm(k, c_out, p, vw.data(), true, g, false, 0.0, &mut dcols);
                let dx = if pointwise { dcols } else { kernels::col2im(&dcols, geom) };
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::Upsample2x(a) => {
            let (c, h, w) = dims3(val(*a));
            let mut d = vec![0.0; c * h * w];
            for ch in 0..c {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        d[(ch * h + i / 2) * w + j / 2] += g[(ch * 2 * h + i) * 2 * w + j];
                    }
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::AvgPool2d(a, kh, kw) => {
            let (c, h, w) = dims3(val(*a));
            let (ho, wo) = (h / kh, w / kw);
            let norm = 1.0 / (kh * kw) as f64;
            let mut d = vec![0.0; c * h * w];
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        d[(ch * h + i) * w + j] = g[(ch * ho + i / kh) * wo + j / kw] * norm;
                    }
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::MeanLast(a, k) => {
            let d = g.iter().flat_map(|&x| std::iter::repeat_n(x / *k as f64, *k)).collect();
            accumulate(nodes, grads, *a, d);
        }
        Op::MeanRows(a) => {
            let (m, n) = dims2(val(*a));
            let mut d = Vec::with_capacity(m * n);
            for _ in 0..m {
                d.extend(g.iter().map(|x| x / m as f64));
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::L2NormalizeRows(a) => {
            let va = val(*a);
            let n = va.shape()[1];
            let mut d = vec![0.0; g.len()];
            for (((x, y), gr), dr) in
                va.data().chunks(n).zip(node.value.data().chunks(n)).zip(g.chunks(n)).zip(d.chunks_mut(n))
            {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dr[j] = (gr[j] - y[j] * dot) / norm;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::GatherRows(table, idx) => {
            let d = val(*table).shape()[1];
            with_acc(nodes, grads, *table, |acc| {
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        acc[i * d + j] += g[r * d + j];
                    }
                }
            });
        }
        Op::PickRows(a, idx) => {
            let n = val(*a).shape()[1];
            with_acc(nodes, grads, *a, |acc| {
                for (i, &j) in idx.iter().enumerate() {
                    acc[i * n + j] += g[i];
                }
            });
        }
    }
}
