//! Hybrid 1D-CNN + Transformer encoder mapping preprocessed rows to latents.
//!
//! Pipeline for an input `[B, D]`:
//!
//! ```text
//! [B,D] -> [B,1,D] -> 5 × (conv k=2 valid, relu, dropout) -> maxpool(2,2)
//!       -> [B,C,T] -> permute [B,T,C] -> linear C→d_model + positional embedding
//!       -> N × post-norm Transformer layer -> mean over T -> MLP head -> [B,latent]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dccl::CentroidPair;
use crate::error::{Error, Result};
use crate::ndiff::{ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub cnn_channels: Vec<usize>,
    pub kernel: usize,
    pub pool_k: usize,
    pub pool_s: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub head_hidden: usize,
    pub latent_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 71,
            cnn_channels: vec![32, 32, 32, 16, 16],
            kernel: 2,
            pool_k: 2,
            pool_s: 2,
            d_model: 64,
            layers: 3,
            heads: 4,
            ffn_dim: 128,
            head_hidden: 512,
            latent_dim: 32,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Sequence length after the convolution stack.
    pub fn conv_len(&self) -> usize {
        self.input_dim
            .saturating_sub(self.cnn_channels.len() * (self.kernel.saturating_sub(1)))
    }

    /// Number of tokens entering the Transformer.
    pub fn tokens(&self) -> usize {
        (self.conv_len() - self.pool_k) / self.pool_s + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cnn_channels.is_empty() || self.kernel == 0 || self.pool_k == 0 || self.pool_s == 0 {
            return bad("encoder needs at least one conv layer and positive kernel/pool sizes".into());
        }
        if self.input_dim < self.cnn_channels.len() * (self.kernel - 1) + self.pool_k {
            return bad(format!(
                "input_dim {} too small for {} convolutions of kernel {} and pool {}",
                self.input_dim,
                self.cnn_channels.len(),
                self.kernel,
                self.pool_k
            ));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.latent_dim == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return bad("encoder widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0,1)".into());
        }
        Ok(())
    }
}

/// Dropout behaviour for a forward pass.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Mode::Train(r) => Some(&mut **r),
            Mode::Eval => None,
        }
    }
}

/// Encoder weights plus, once Stage 1 has finished, the frozen centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub centroids: Option<CentroidPair>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

impl EncoderParams {
    /// Fan-in uniform weights, zero biases, unit layer-norm gains and
    /// `N(0, 0.02²)` positional embeddings.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &config;

        let mut cin = 1;
        for (i, &cout) in c.cnn_channels.iter().enumerate() {
            s.insert(format!("cnn.conv{i}.weight"), uniform(&mut rng, &[cout, cin, c.kernel], cin * c.kernel), true)?;
            s.insert(format!("cnn.conv{i}.bias"), Tensor::zeros(&[cout]), false)?;
            cin = cout;
        }
        let dm = c.d_model;
        s.insert("proj.weight", uniform(&mut rng, &[dm, cin], cin), true)?;
        s.insert("proj.bias", Tensor::zeros(&[dm]), false)?;
        let normal = Normal::new(0.0, 0.02).unwrap();
        let t = c.tokens();
        let pos = (0..t * dm).map(|_| normal.sample(&mut rng)).collect();
        s.insert("pos_embedding", Tensor::new(&[t, dm], pos)?, false)?;

        for l in 0..c.layers {
            let p = format!("layer{l}");
            for w in ["wq", "wk", "wv", "wo"] {
                s.insert(format!("{p}.attn.{w}"), uniform(&mut rng, &[dm, dm], dm), true)?;
            }
            for b in ["bq", "bv", "bo"] {
                s.insert(format!("{p}.attn.{b}"), Tensor::zeros(&[dm]), false)?;
            }
            s.insert(format!("{p}.ffn1.weight"), uniform(&mut rng, &[c.ffn_dim, dm], dm), true)?;
            s.insert(format!("{p}.ffn1.bias"), Tensor::zeros(&[c.ffn_dim]), false)?;
            s.insert(format!("{p}.ffn2.weight"), uniform(&mut rng, &[dm, c.ffn_dim], c.ffn_dim), true)?;
            s.insert(format!("{p}.ffn2.bias"), Tensor::zeros(&[dm]), false)?;
            for ln in ["ln1", "ln2"] {
                s.insert(format!("{p}.{ln}.gain"), Tensor::full(&[dm], 1.0), false)?;
                s.insert(format!("{p}.{ln}.bias"), Tensor::zeros(&[dm]), false)?;
            }
        }
        s.insert("head.fc1.weight", uniform(&mut rng, &[c.head_hidden, dm], dm), true)?;
        s.insert("head.fc1.bias", Tensor::zeros(&[c.head_hidden]), false)?;
        s.insert("head.fc2.weight", uniform(&mut rng, &[c.latent_dim, c.head_hidden], c.head_hidden), true)?;
        s.insert("head.fc2.bias", Tensor::zeros(&[c.latent_dim]), false)?;

        Ok(EncoderParams {
            config,
            store: s,
            centroids: None,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

fn affine(tape: &mut Tape, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.weight"))?;
    let b = tape.param(store, &format!("{name}.bias"))?;
    tape.linear(x, w, Some(b))
}

/// Convolution stack and the single max-pool: `[B,D]` to `[B,C_last,T]`.
pub fn cnn_frontend(tape: &mut Tape, params: &EncoderParams, x: Var, mode: &mut Mode) -> Result<Var> {
    let c = &params.config;
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != c.input_dim {
        return Err(Error::shape(
            "cnn_frontend",
            format!("expected [B, {}], got {shape:?}", c.input_dim),
        ));
    }
    let mut h = tape.reshape(x, &[shape[0], 1, c.input_dim])?;
    for i in 0..c.cnn_channels.len() {
        let w = tape.param(&params.store, &format!("cnn.conv{i}.weight"))?;
        let b = tape.param(&params.store, &format!("cnn.conv{i}.bias"))?;
        h = tape.conv1d(h, w, b)?;
        h = tape.relu(h);
        h = tape.dropout(h, c.dropout, mode.rng())?;
    }
    tape.maxpool1d(h, c.pool_k, c.pool_s)
}

/// Token projection, positional embedding and the Transformer stack:
/// `[B,C,T]` to `[B,T,d_model]`.
pub fn transformer_backend(tape: &mut Tape, params: &EncoderParams, feat: Var, mode: &mut Mode) -> Result<Var> {
    let c = &params.config;
    let s = &params.store;
    let t = c.tokens();
    let shape = tape.shape(feat).to_vec();
    if shape.len() != 3 || shape[2] != t {
        return Err(Error::shape(
            "transformer_backend",
            format!("expected {t} tokens, got {shape:?}"),
        ));
    }
    let tokens = tape.permute(feat, &[0, 2, 1])?;
    let mut h = affine(tape, s, tokens, "proj")?;
    let pos = tape.param(s, "pos_embedding")?;
    h = tape.add_bcast(h, pos)?;

    for l in 0..c.layers {
        let p = format!("layer{l}");
        let a = tape.multihead_attention(h, s, &format!("{p}.attn"), c.heads)?;
        let a = tape.dropout(a, c.dropout, mode.rng())?;
        h = tape.add(h, a)?;
        let (g, b) = (tape.param(s, &format!("{p}.ln1.gain"))?, tape.param(s, &format!("{p}.ln1.bias"))?);
        h = tape.layernorm(h, g, b)?;

        let f = affine(tape, s, h, &format!("{p}.ffn1"))?;
        let f = tape.relu(f);
        let f = affine(tape, s, f, &format!("{p}.ffn2"))?;
        let f = tape.dropout(f, c.dropout, mode.rng())?;
        h = tape.add(h, f)?;
        let (g, b) = (tape.param(s, &format!("{p}.ln2.gain"))?, tape.param(s, &format!("{p}.ln2.bias"))?);
        h = tape.layernorm(h, g, b)?;
    }
    Ok(h)
}

/// Full encoder on a tape: `[B,D]` to `[B,latent_dim]`.
pub fn encode_on(tape: &mut Tape, params: &EncoderParams, x: Var, mode: &mut Mode) -> Result<Var> {
    let feat = cnn_frontend(tape, params, x, mode)?;
    let h = transformer_backend(tape, params, feat, mode)?;
    let pooled = tape.global_average_pool(h)?;
    let z = affine(tape, &params.store, pooled, "head.fc1")?;
    let z = tape.relu(z);
    affine(tape, &params.store, z, "head.fc2")
}

/// Encodes `x: [B,D]` without keeping the graph.
pub fn encode(x: &Tensor, params: &EncoderParams, mut mode: Mode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let z = encode_on(&mut tape, params, xv, &mut mode)?;
    let z = tape.value(z).clone();
    if !z.all_finite() {
        return Err(Error::NonFinite("encoder produced a non-finite latent".into()));
    }
    Ok(z)
}

/// Eval-mode encoding in chunks of `chunk` rows.
pub fn encode_rows(x: &Tensor, params: &EncoderParams, chunk: usize) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.shape()[1]);
    let mut out = Vec::with_capacity(n * params.config.latent_dim);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let part = Tensor::new(&[end - start, d], x.data()[start * d..end * d].to_vec())?;
        out.extend(encode(&part, params, Mode::Eval)?.into_data());
        start = end;
    }
    Tensor::new(&[n, params.config.latent_dim], out)
}
