//! Tape-free forward evaluation of the primitives.
//!
//! These are the same computations the [`Tape`](super::Tape) records, exposed
//! as plain functions for inference and for tests that check them against
//! naive references.

use super::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};

/// Names of every differentiable primitive recorded by the tape.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "add_bcast",
    "sub_bcast",
    "scale",
    "add_scalar",
    "mul_const",
    "relu",
    "tanh",
    "exp",
    "square",
    "dropout",
    "linear",
    "conv1d",
    "maxpool1d",
    "layernorm",
    "softmax",
    "bmm",
    "permute",
    "reshape",
    "sum",
    "mean",
    "sum_axis",
    "mean_axis",
    "global_average_pool",
    "select_rows",
    "flip_last",
];

pub fn conv1d_valid(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let bad = || {
        Error::shape(
            "conv1d_valid",
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                input.shape(),
                weight.shape(),
                bias.shape()
            ),
        )
    };
    if input.rank() != 3 || weight.rank() != 3 {
        return Err(bad());
    }
    let (bs, cin, len) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, wcin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if wcin != cin || bias.shape() != [cout] || len < k {
        return Err(bad());
    }
    let lo = len - k + 1;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![0.0; bs * cout * lo];
    for b in 0..bs {
        for o in 0..cout {
            let dst = &mut out[(b * cout + o) * lo..(b * cout + o + 1) * lo];
            dst.iter_mut().for_each(|v| *v = bias.data()[o]);
            for c in 0..cin {
                for j in 0..k {
                    let wv = w[(o * cin + c) * k + j];
                    let src = &x[(b * cin + c) * len + j..(b * cin + c) * len + j + lo];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Tensor::new(&[bs, cout, lo], out)
}

/// Window maxima plus the flat input index each came from (lowest index on ties).
pub fn maxpool1d_with_argmax(input: &Tensor, k: usize, s: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 3 || k == 0 || s == 0 || input.shape()[2] < k {
        return Err(Error::shape(
            "maxpool1d",
            format!("input {:?}, k={k}, s={s}", input.shape()),
        ));
    }
    let (bs, c, len) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let lo = (len - k) / s + 1;
    let mut out = Vec::with_capacity(bs * c * lo);
    let mut argmax = Vec::with_capacity(bs * c * lo);
    for row in 0..bs * c {
        for i in 0..lo {
            let start = row * len + i * s;
            let mut best = start;
            for j in start + 1..start + k {
                if input.data()[j] > input.data()[best] {
                    best = j;
                }
            }
            out.push(input.data()[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(&[bs, c, lo], out)?, argmax))
}

pub fn maxpool1d(input: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    maxpool1d_with_argmax(input, k, s).map(|(t, _)| t)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

pub fn softmax(x: &Tensor) -> Tensor {
    let w = *x.shape().last().unwrap();
    Tensor::new(x.shape(), super::kernels::softmax_rows(x.data(), w)).unwrap()
}

/// Weights of one multi-head attention block; all projections are `[d_model, d_model]`.
///
/// The key projection has no bias: a key bias adds the same logit to every
/// key of a query, which softmax cancels.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionWeights {
    /// Stores the weights under `prefix.{wq,bq,...}`.
    pub fn into_store(self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, t) in [
            ("wq", self.wq),
            ("bq", self.bq),
            ("wk", self.wk),
            ("wv", self.wv),
            ("bv", self.bv),
            ("wo", self.wo),
            ("bo", self.bo),
        ] {
            store.insert(format!("{prefix}.{name}"), t, false)?;
        }
        Ok(store)
    }
}

/// Scaled dot-product attention over `x: [B,T,d_model]`.
pub fn multihead_attention(x: &Tensor, weights: &AttentionWeights, heads: usize) -> Result<Tensor> {
    let store = weights.clone().into_store("attn")?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = tape.multihead_attention(xv, &store, "attn", heads)?;
    Ok(tape.value(out).clone())
}

impl Tape {
    /// Records multi-head attention with parameters `prefix.{wq,bq,wk,wv,bv,wo,bo}`.
    pub fn multihead_attention(
        &mut self,
        x: super::Var,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
    ) -> Result<super::Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || heads == 0 || shape[2] % heads != 0 {
            return Err(Error::shape(
                "multihead_attention",
                format!("input {shape:?} with {heads} heads"),
            ));
        }
        let (b, t, dm) = (shape[0], shape[1], shape[2]);
        let dk = dm / heads;
        let split = |tape: &mut Tape, w: &str, bias: Option<&str>| -> Result<super::Var> {
            let w = tape.param(store, &format!("{prefix}.{w}"))?;
            let bias = match bias {
                Some(b) => Some(tape.param(store, &format!("{prefix}.{b}"))?),
                None => None,
            };
            let p = tape.linear(x, w, bias)?;
            let p = tape.reshape(p, &[b, t, heads, dk])?;
            let p = tape.permute(p, &[0, 2, 1, 3])?;
            tape.reshape(p, &[b * heads, t, dk])
        };
        let q = split(self, "wq", Some("bq"))?;
        let k = split(self, "wk", None)?;
        let v = split(self, "wv", Some("bv"))?;
        let scores = self.bmm(q, k, true)?;
        let scores = self.scale(scores, 1.0 / (dk as f64).sqrt());
        let attn = self.softmax(scores);
        let ctx = self.bmm(attn, v, false)?;
        let ctx = self.reshape(ctx, &[b, heads, t, dk])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &[b, t, dm])?;
        let wo = self.param(store, &format!("{prefix}.wo"))?;
        let bo = self.param(store, &format!("{prefix}.bo"))?;
        self.linear(ctx, wo, Some(bo))
    }

    /// Mean over the sequence axis of `[B,T,C]`.
    pub fn global_average_pool(&mut self, x: super::Var) -> Result<super::Var> {
        self.mean_axis(x, 1)
    }
}
