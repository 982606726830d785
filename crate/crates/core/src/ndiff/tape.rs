use std::collections::HashMap;

use rand::Rng;

use super::kernels::{self, axis_split, gemm_nn, gemm_nt, gemm_tn};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Layer normalization stabilizer added to the variance.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    SubBcast(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    FlipLast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so gradients can be pulled back through it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn suffix_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::shape(op, format!("cannot broadcast {sb:?} onto {sa:?}")));
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; gradients are still computed for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Loads a named parameter; repeated loads return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        suffix_shape("add_bcast", ta, tb)?;
        let n = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % n])
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::AddBcast(a, b)))
    }

    /// `a - b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn sub_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        suffix_shape("sub_bcast", ta, tb)?;
        let n = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x - tb.data()[i % n])
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::SubBcast(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |v| v * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |v| v + c);
        self.push(t, Op::Shift(a))
    }

    /// Elementwise product with a constant array (masks, dropout).
    pub fn mul_const(&mut self, a: Var, m: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != m.len() {
            return Err(Error::shape("mul_const", format!("{} vs {}", ta.len(), m.len())));
        }
        let data = ta.data().iter().zip(&m).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::MulConst(a, m)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |v| v * v);
        self.push(t, Op::Square(a))
    }

    /// Inverted dropout: train mode scales kept units by `1/(1-p)`,
    /// eval mode (`rng = None`) is the identity.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 - p;
                let mask = (0..self.value(a).len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                self.mul_const(a, mask)
            }
            _ => Ok(a),
        }
    }

    /// Affine map over the last axis: `x · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.rank() != 2 || tx.shape().last() != Some(&tw.shape()[1]) {
            return Err(Error::shape(
                "linear",
                format!("input {:?}, weight {:?}", tx.shape(), tw.shape()),
            ));
        }
        let (out_f, in_f) = (tw.shape()[0], tw.shape()[1]);
        let rows = tx.len() / in_f;
        let mut out = vec![0.0; rows * out_f];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.shape() != [out_f] {
                return Err(Error::shape("linear", format!("bias {:?}", tb.shape())));
            }
            for r in out.chunks_mut(out_f) {
                r.copy_from_slice(tb.data());
            }
        }
        gemm_nt(tx.data(), tw.data(), &mut out, rows, in_f, out_f);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Valid stride-1 cross-correlation, `x: [B,Cin,L]`, `w: [Cout,Cin,k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let t = super::ops::conv1d_valid(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(t, Op::Conv1d { x, w, b }))
    }

    pub fn maxpool1d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let (t, argmax) = super::ops::maxpool1d_with_argmax(self.value(x), k, s)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }))
    }

    /// Per-row normalization over the last axis with learned gain and bias.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let w = *tx.shape().last().unwrap();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [w] || tb.shape() != [w] {
            return Err(Error::shape(
                "layernorm",
                format!("input {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let rows = tx.len() / w;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let src = &tx.data()[r * w..(r + 1) * w];
            let mean = src.iter().sum::<f64>() / w as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..w {
                let h = (src[j] - mean) * is;
                xhat[r * w + j] = h;
                out[r * w + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let w = *tx.shape().last().unwrap();
        let t = Tensor::new(tx.shape(), kernels::softmax_rows(tx.data(), w)).unwrap();
        self.push(t, Op::Softmax(x))
    }

    /// Batched matmul: `a: [B,M,K]`, `b: [B,K,N]` (or `[B,N,K]` with `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bad = || Error::shape("bmm", format!("{:?} x {:?} (trans_b={trans_b})", ta.shape(), tb.shape()));
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(bad());
        }
        let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (kb, n) = if trans_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            let sa = &ta.data()[i * m * k..(i + 1) * m * k];
            let sb = &tb.data()[i * k * n..(i + 1) * k * n];
            let so = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(sa, sb, so, m, k, n);
            } else {
                gemm_nn(sa, sb, so, m, k, n);
            }
        }
        let t = Tensor::new(&[bs, m, n], out)?;
        Ok(self.push(t, Op::Bmm { a, b, trans_b }))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..tx.rank()).collect::<Vec<_>>() {
            return Err(Error::shape("permute", format!("axes {axes:?} for {:?}", tx.shape())));
        }
        let (data, shape) = kernels::permute(tx.data(), tx.shape(), axes);
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Permute { x, axes: axes.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    fn reduce_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<Tensor> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::shape(op, format!("axis {axis} of {:?}", tx.shape())));
        }
        let (outer, n, inner) = axis_split(tx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &tx.data()[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape: Vec<usize> = tx.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::new(&shape, out)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.reduce_axis(x, axis, "sum_axis")?;
        Ok(self.push(t, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x).get(axis).copied().unwrap_or(1) as f64;
        let mut t = self.reduce_axis(x, axis, "mean_axis")?;
        t.data_mut().iter_mut().for_each(|v| *v /= n);
        Ok(self.push(t, Op::MeanAxis { x, axis }))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= tx.rows()) {
            return Err(Error::shape("select_rows", format!("indices out of range for {:?}", tx.shape())));
        }
        let t = tx.select_rows(idx);
        Ok(self.push(t, Op::SelectRows { x, idx: idx.to_vec() }))
    }

    /// Reverses the order of the last axis.
    pub fn flip_last(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let w = *tx.shape().last().unwrap();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(w) {
            row.reverse();
        }
        let t = Tensor::new(tx.shape(), data).unwrap();
        self.push(t, Op::FlipLast(x))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.pull_back(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (name, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate(name, g);
            }
        }
        Ok(grads)
    }

    fn pull_back(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        macro_rules! acc {
            ($v:expr, |$ga:ident| $body:block) => {{
                let len = self.nodes[$v.0].value.len();
                let $ga: &mut Vec<f64> = grads[$v.0].get_or_insert_with(|| vec![0.0; len]);
                $body
            }};
        }

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc!(*a, |ga| { ga.iter_mut().zip(g).for_each(|(x, y)| *x += y) });
                acc!(*b, |gb| { gb.iter_mut().zip(g).for_each(|(x, y)| *x += y) });
            }
            Op::Sub(a, b) => {
                acc!(*a, |ga| { ga.iter_mut().zip(g).for_each(|(x, y)| *x += y) });
                acc!(*b, |gb| { gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y) });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                });
                acc!(*b, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddBcast(a, b) | Op::SubBcast(a, b) => {
                let sign = if matches!(node.op, Op::AddBcast(..)) { 1.0 } else { -1.0 };
                acc!(*a, |ga| { ga.iter_mut().zip(g).for_each(|(x, y)| *x += y) });
                acc!(*b, |gb| {
                    let n = gb.len();
                    for (i, y) in g.iter().enumerate() {
                        gb[i % n] += sign * y;
                    }
                });
            }
            Op::Scale(a, c) => {
                acc!(*a, |ga| { ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y) });
            }
            Op::Shift(a) => {
                acc!(*a, |ga| { ga.iter_mut().zip(g).for_each(|(x, y)| *x += y) });
            }
            Op::MulConst(a, m) => {
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * m[i];
                    }
                });
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i];
                    }
                });
            }
            Op::Square(a) => {
                let va = val(*a);
                acc!(*a, |ga| {
                    for i in 0..g.len() {
                        ga[i] += 2.0 * va[i] * g[i];
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (out_f, in_f) = (shape(*w)[0], shape(*w)[1]);
                let rows = g.len() / out_f;
                acc!(*x, |gx| { gemm_nn(g, val(*w), gx, rows, out_f, in_f) });
                acc!(*w, |gw| { gemm_tn(g, val(*x), gw, out_f, rows, in_f) });
                if let Some(b) = b {
                    acc!(*b, |gb| {
                        for r in g.chunks(out_f) {
                            gb.iter_mut().zip(r).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b } => {
                let (bs, cin, len) = (shape(*x)[0], shape(*x)[1], shape(*x)[2]);
                let (cout, k) = (shape(*w)[0], shape(*w)[2]);
                let lo = len - k + 1;
                let (vx, vw) = (val(*x), val(*w));
                acc!(*x, |gx| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            for c in 0..cin {
                                for j in 0..k {
                                    let wv = vw[(o * cin + c) * k + j];
                                    let grow = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                                    let xoff = (bi * cin + c) * len + j;
                                    for (l, gv) in grow.iter().enumerate() {
                                        gx[xoff + l] += gv * wv;
                                    }
                                }
                            }
                        }
                    }
                });
                acc!(*w, |gw| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo];
                            for c in 0..cin {
                                for j in 0..k {
                                    let xoff = (bi * cin + c) * len + j;
                                    let xs = &vx[xoff..xoff + lo];
                                    gw[(o * cin + c) * k + j] +=
                                        grow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc!(*b, |gb| {
                    for bi in 0..bs {
                        for o in 0..cout {
                            gb[o] += g[(bi * cout + o) * lo..(bi * cout + o + 1) * lo].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                acc!(*x, |gx| {
                    for (i, &src) in argmax.iter().enumerate() {
                        gx[src] += g[i];
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let w = shape(*gain)[0];
                let vg = val(*gain);
                acc!(*gain, |gg| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for j in 0..w {
                            gg[j] += gr[j] * xhat[r * w + j];
                        }
                    }
                });
                acc!(*bias, |gb| {
                    for gr in g.chunks(w) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                });
                acc!(*x, |gx| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        let h = &xhat[r * w..(r + 1) * w];
                        let dh: Vec<f64> = gr.iter().zip(vg).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / w as f64;
                        let mean_dhh = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for j in 0..w {
                            gx[r * w + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap();
                acc!(*x, |gx| {
                    for r in 0..y.len() / w {
                        let (yr, gr) = (&y[r * w..(r + 1) * w], &g[r * w..(r + 1) * w]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..w {
                            gx[r * w + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let (bs, m, k) = (shape(*a)[0], shape(*a)[1], shape(*a)[2]);
                let n = node.value.shape()[2];
                let (va, vb) = (val(*a), val(*b));
                acc!(*a, |ga| {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &vb[i * k * n..(i + 1) * k * n];
                        let out = &mut ga[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            gemm_nn(gi, bi, out, m, n, k);
                        } else {
                            gemm_nt(gi, bi, out, m, n, k);
                        }
                    }
                });
                acc!(*b, |gb| {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gi, ai, out, n, m, k);
                        } else {
                            gemm_tn(ai, gi, out, k, m, n);
                        }
                    }
                });
            }
            Op::Permute { x, axes } => {
                let inv = kernels::inverse_axes(axes);
                let (back, _) = kernels::permute(g, node.value.shape(), &inv);
                acc!(*x, |gx| { gx.iter_mut().zip(&back).for_each(|(a, b)| *a += b) });
            }
            Op::Reshape(x) => {
                acc!(*x, |gx| { gx.iter_mut().zip(g).for_each(|(a, b)| *a += b) });
            }
            Op::Sum(x) => {
                acc!(*x, |gx| { gx.iter_mut().for_each(|a| *a += g[0]) });
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc!(*x, |gx| { gx.iter_mut().for_each(|a| *a += g[0] / n) });
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = axis_split(shape(*x), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) { 1.0 / n as f64 } else { 1.0 };
                acc!(*x, |gx| {
                    for o in 0..outer {
                        let gs = &g[o * inner..(o + 1) * inner];
                        for i in 0..n {
                            let dst = &mut gx[(o * n + i) * inner..(o * n + i + 1) * inner];
                            dst.iter_mut().zip(gs).for_each(|(a, b)| *a += scale * b);
                        }
                    }
                });
            }
            Op::SelectRows { x, idx } => {
                let inner = node.value.len() / idx.len();
                acc!(*x, |gx| {
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut gx[src * inner..(src + 1) * inner];
                        dst.iter_mut()
                            .zip(&g[r * inner..(r + 1) * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::FlipLast(x) => {
                let w = *node.value.shape().last().unwrap();
                acc!(*x, |gx| {
                    for (dst, src) in gx.chunks_mut(w).zip(g.chunks(w)) {
                        for j in 0..w {
                            dst[j] += src[w - 1 - j];
                        }
                    }
                });
            }
        }
    }
}
