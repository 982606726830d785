//! Masked autoregressive flow over encoder latents.
//!
//! Each layer runs a MADE network on its input `z` to get `(s, t)` and emits
//! `u = z ⊙ exp(tanh(s)) + t`, contributing `Σ tanh(s)` to the log-determinant.
//! Coordinates are reversed between consecutive layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::kernels::gemm_nt;
use crate::ndiff::{ParamStore, Tape, Tensor, Var};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MafConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub made_hidden_layers: usize,
}

impl Default for MafConfig {
    fn default() -> Self {
        MafConfig {
            dim: 32,
            n_layers: 16,
            hidden: 512,
            made_hidden_layers: 2,
        }
    }
}

impl MafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_layers == 0 || self.made_hidden_layers == 0 {
            return Err(Error::Config("flow needs dim, layers and MADE depth ≥ 1".into()));
        }
        if self.hidden < self.dim {
            return Err(Error::Config(format!(
                "MADE hidden width {} smaller than dim {}",
                self.hidden, self.dim
            )));
        }
        Ok(())
    }
}

/// Connectivity masks shared by every flow layer. Rows index outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MadeMasks {
    pub hidden_degrees: Vec<usize>,
    /// `[hidden, dim]`
    pub input: Vec<f64>,
    /// `[hidden, hidden]`
    pub hidden: Vec<f64>,
    /// `[dim, hidden]`, used by both the `s` and `t` heads.
    pub output: Vec<f64>,
}

pub fn build_made_masks(dim: usize, hidden: usize) -> MadeMasks {
    let cycle = dim.saturating_sub(1).max(1);
    let hidden_degrees: Vec<usize> = (0..hidden).map(|k| k % cycle + 1).collect();
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    let mut input = Vec::with_capacity(hidden * dim);
    for &b in &hidden_degrees {
        input.extend((1..=dim).map(|a| bit(b >= a)));
    }
    let mut hid = Vec::with_capacity(hidden * hidden);
    for &b in &hidden_degrees {
        hid.extend(hidden_degrees.iter().map(|&a| bit(b >= a)));
    }
    let mut output = Vec::with_capacity(dim * hidden);
    for d in 1..=dim {
        output.extend(hidden_degrees.iter().map(|&a| bit(d > a)));
    }
    MadeMasks {
        hidden_degrees,
        input,
        hidden: hid,
        output,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MafParams {
    pub config: MafConfig,
    pub store: ParamStore,
    masks: MadeMasks,
}

/// Per-sample flow output.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutput {
    pub u: Tensor,
    pub log_det: Vec<f64>,
}

fn pname(layer: usize, part: &str, what: &str) -> String {
    format!("flow{layer}.{part}.{what}")
}

fn hidden_parts(n: usize) -> Vec<String> {
    std::iter::once("in".to_string())
        .chain((1..n).map(|j| format!("h{j}")))
        .collect()
}

impl MafParams {
    /// Fan-in uniform MADE weights; the `s`/`t` heads start at zero so the
    /// untrained flow is a pure coordinate reversal.
    pub fn init(config: MafConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.dim, config.hidden);
        let mut store = ParamStore::new();
        for l in 0..config.n_layers {
            for (j, part) in hidden_parts(config.made_hidden_layers).iter().enumerate() {
                let fan_in = if j == 0 { d } else { h };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..h * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
                store.insert(pname(l, part, "weight"), Tensor::new(&[h, fan_in], w)?, true)?;
                store.insert(pname(l, part, "bias"), Tensor::zeros(&[h]), false)?;
            }
            for head in ["s", "t"] {
                store.insert(pname(l, head, "weight"), Tensor::zeros(&[d, h]), true)?;
                store.insert(pname(l, head, "bias"), Tensor::zeros(&[d]), false)?;
            }
        }
        Self::from_store(config, store)
    }

    /// Wraps an existing store, checking that every tensor is present and shaped.
    pub fn from_store(config: MafConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.hidden);
        for l in 0..config.n_layers {
            for (j, part) in hidden_parts(config.made_hidden_layers).iter().enumerate() {
                let fan_in = if j == 0 { d } else { h };
                expect_shape(&store, &pname(l, part, "weight"), &[h, fan_in])?;
                expect_shape(&store, &pname(l, part, "bias"), &[h])?;
            }
            for head in ["s", "t"] {
                expect_shape(&store, &pname(l, head, "weight"), &[d, h])?;
                expect_shape(&store, &pname(l, head, "bias"), &[d])?;
            }
        }
        let masks = build_made_masks(d, h);
        Ok(MafParams { config, store, masks })
    }

    pub fn masks(&self) -> &MadeMasks {
        &self.masks
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

fn expect_shape(store: &ParamStore, name: &str, shape: &[usize]) -> Result<()> {
    let t = store.value(name)?;
    if t.shape() != shape {
        return Err(Error::shape(
            "maf",
            format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
        ));
    }
    Ok(())
}

fn masked_linear(tape: &mut Tape, p: &MafParams, x: Var, l: usize, part: &str, mask: &[f64]) -> Result<Var> {
    let w = tape.param(&p.store, &pname(l, part, "weight"))?;
    let b = tape.param(&p.store, &pname(l, part, "bias"))?;
    let w = tape.mul_const(w, mask.to_vec())?;
    tape.linear(x, w, Some(b))
}

/// MADE outputs `(s, t)` for one layer on a tape.
pub fn made_on(tape: &mut Tape, p: &MafParams, l: usize, x: Var) -> Result<(Var, Var)> {
    let parts = hidden_parts(p.config.made_hidden_layers);
    let mut h = x;
    for (j, part) in parts.iter().enumerate() {
        let mask = if j == 0 { &p.masks.input } else { &p.masks.hidden };
        h = masked_linear(tape, p, h, l, part, mask)?;
        h = tape.relu(h);
    }
    let s = masked_linear(tape, p, h, l, "s", &p.masks.output)?;
    let t = masked_linear(tape, p, h, l, "t", &p.masks.output)?;
    Ok((s, t))
}

/// Flow on a tape: returns `(u [B,dim], log_det [B])`.
pub fn flow_on(tape: &mut Tape, p: &MafParams, z: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[1] != p.config.dim {
        return Err(Error::shape("flow", format!("expected [B, {}], got {shape:?}", p.config.dim)));
    }
    let mut x = z;
    let mut log_det: Option<Var> = None;
    for l in 0..p.config.n_layers {
        let (s, t) = made_on(tape, p, l, x)?;
        let ts = tape.tanh(s);
        let e = tape.exp(ts);
        let scaled = tape.mul(x, e)?;
        let u = tape.add(scaled, t)?;
        if !tape.value(u).all_finite() {
            return Err(Error::NonFinite(format!("flow layer {l} produced a non-finite value")));
        }
        let ld = tape.sum_axis(ts, 1)?;
        log_det = Some(match log_det {
            Some(acc) => tape.add(acc, ld)?,
            None => ld,
        });
        x = if l + 1 < p.config.n_layers { tape.flip_last(u) } else { u };
    }
    Ok((x, log_det.expect("at least one layer")))
}

/// Per-sample NLL on a tape, shape `[B]`.
pub fn nll_on(tape: &mut Tape, p: &MafParams, z: Var) -> Result<Var> {
    let (u, log_det) = flow_on(tape, p, z)?;
    let sq = tape.square(u);
    let half = tape.sum_axis(sq, 1)?;
    let half = tape.scale(half, 0.5);
    let base = tape.add_scalar(half, p.config.dim as f64 * HALF_LN_2PI);
    tape.sub(base, log_det)
}

/// Masked weights with the graph stripped away, for fast scoring.
struct Frozen<'a> {
    layers: Vec<Vec<(Vec<f64>, &'a [f64])>>,
}

impl<'a> Frozen<'a> {
    fn new(p: &'a MafParams) -> Self {
        let parts = hidden_parts(p.config.made_hidden_layers);
        let layers = (0..p.config.n_layers)
            .map(|l| {
                let mut v: Vec<(Vec<f64>, &[f64])> = Vec::new();
                for (j, part) in parts.iter().enumerate() {
                    let mask = if j == 0 { &p.masks.input } else { &p.masks.hidden };
                    v.push(Self::masked(p, l, part, mask));
                }
                v.push(Self::masked(p, l, "s", &p.masks.output));
                v.push(Self::masked(p, l, "t", &p.masks.output));
                v
            })
            .collect();
        Frozen { layers }
    }

    fn masked(p: &'a MafParams, l: usize, part: &str, mask: &[f64]) -> (Vec<f64>, &'a [f64]) {
        let w = p.store.value(&pname(l, part, "weight")).unwrap();
        let b = p.store.value(&pname(l, part, "bias")).unwrap();
        (w.data().iter().zip(mask).map(|(a, m)| a * m).collect(), b.data())
    }

    fn apply(x: &[f64], (w, b): &(Vec<f64>, &[f64]), rows: usize, relu: bool) -> Vec<f64> {
        let n = b.len();
        let k = w.len() / n;
        let mut out: Vec<f64> = b.iter().copied().cycle().take(rows * n).collect();
        gemm_nt(x, w, &mut out, rows, k, n);
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    /// `(s, t)` of layer `l` for `rows` inputs.
    fn made(&self, l: usize, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let ws = &self.layers[l];
        let nh = ws.len() - 2;
        let mut h = x.to_vec();
        for w in &ws[..nh] {
            h = Self::apply(&h, w, rows, true);
        }
        (Self::apply(&h, &ws[nh], rows, false), Self::apply(&h, &ws[nh + 1], rows, false))
    }
}

fn flip_rows(x: &mut [f64], d: usize) {
    x.chunks_mut(d).for_each(|r| r.reverse());
}

fn check_input(z: &Tensor, p: &MafParams, op: &'static str) -> Result<()> {
    if z.rank() != 2 || z.shape()[1] != p.config.dim {
        return Err(Error::shape(op, format!("expected [B, {}], got {:?}", p.config.dim, z.shape())));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite(format!("{op} input contains a non-finite value")));
    }
    Ok(())
}

pub fn flow_forward(z: &Tensor, p: &MafParams) -> Result<FlowOutput> {
    check_input(z, p, "flow_forward")?;
    let (rows, d) = (z.rows(), p.config.dim);
    let frozen = Frozen::new(p);
    let mut x = z.data().to_vec();
    let mut log_det = vec![0.0; rows];
    for l in 0..p.config.n_layers {
        let (s, t) = frozen.made(l, &x, rows);
        for i in 0..rows * d {
            let ts = s[i].tanh();
            x[i] = x[i] * ts.exp() + t[i];
            log_det[i / d] += ts;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flow layer {l} produced a non-finite value")));
        }
        if l + 1 < p.config.n_layers {
            flip_rows(&mut x, d);
        }
    }
    Ok(FlowOutput {
        u: Tensor::new(&[rows, d], x)?,
        log_det,
    })
}

/// Per-sample negative log-likelihood and its batch mean.
pub fn nll(z: &Tensor, p: &MafParams) -> Result<(Vec<f64>, f64)> {
    let out = flow_forward(z, p)?;
    let d = p.config.dim;
    let per: Vec<f64> = (0..out.u.rows())
        .map(|i| {
            let sq: f64 = out.u.row(i).iter().map(|v| v * v).sum();
            0.5 * sq + d as f64 * HALF_LN_2PI - out.log_det[i]
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((per, mean))
}

/// Inverts the flow one coordinate at a time.
pub fn flow_inverse(u: &Tensor, p: &MafParams) -> Result<Tensor> {
    check_input(u, p, "flow_inverse")?;
    let (rows, d) = (u.rows(), p.config.dim);
    let frozen = Frozen::new(p);
    let mut y = u.data().to_vec();
    for l in (0..p.config.n_layers).rev() {
        if l + 1 < p.config.n_layers {
            flip_rows(&mut y, d);
        }
        let mut z = vec![0.0; rows * d];
        for k in 0..d {
            let (s, t) = frozen.made(l, &z, rows);
            for r in 0..rows {
                let i = r * d + k;
                z[i] = (y[i] - t[i]) * (-s[i].tanh()).exp();
            }
        }
        y = z;
    }
    Tensor::new(&[rows, d], y)
}
