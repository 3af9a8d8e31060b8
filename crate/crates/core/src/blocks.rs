//! Bidirectional transformer encoder layers: multi-head self-attention with
//! padding masks, post-norm residuals and a GELU feed-forward sublayer.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, FreezeClass, Params};
use crate::tensor::{Graph, Tensor, Var};

pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::ConfigMismatch("encoder dims must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::ConfigMismatch(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::ConfigMismatch("dropout_rate must be in [0,1)".into()));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::ConfigMismatch("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-example padding mask; true marks a real token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask(Vec<bool>);

impl AttentionMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyInput("attention mask with no real positions".into()));
        }
        Ok(AttentionMask(bits))
    }

    pub fn all_true(len: usize) -> Result<Self> {
        Self::new(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Extend with `n` padding positions.
    pub fn padded(&self, n: usize) -> Self {
        let mut bits = self.0.clone();
        bits.extend(std::iter::repeat(false).take(n));
        AttentionMask(bits)
    }

    /// Additive pre-softmax bias over key positions: 0 for real, large
    /// negative for padding.
    pub fn bias_tensor(&self) -> Tensor<f64> {
        let data = self.0.iter().map(|&b| if b { 0.0 } else { MASK_NEG }).collect();
        Tensor::from_vec(vec![self.0.len()], data).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub type ChaRng = rand_chacha::ChaCha8Rng;

/// N(0, std²) initializer.
pub fn init_normal(rng: &mut ChaRng, shape: Vec<usize>, std: f64) -> Tensor<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Inverted dropout on a graph node; identity in eval mode.
pub fn dropout(
    g: &mut Graph<f64>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut ChaRng,
) -> Result<Var> {
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = g.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = g.constant(Tensor::from_vec(shape, data)?);
    g.mul(x, mask)
}

/// Registers parameters for one encoder stack under `prefix`.
pub fn init_encoder_params(
    cfg: &EncoderConfig,
    rng: &mut ChaRng,
    params: &mut Params,
    prefix: &str,
    class: FreezeClass,
) {
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    for l in 0..cfg.num_layers {
        let p = format!("{prefix}.l{l}");
        for name in ["wq", "wk", "wv", "wo"] {
            params.insert(&format!("{p}.attn.{name}"), init_normal(rng, vec![d, d], 0.02), class);
        }
        for name in ["bq", "bk", "bv", "bo"] {
            params.insert(&format!("{p}.attn.{name}"), Tensor::zeros(vec![d]), class);
        }
        params.insert(&format!("{p}.ln1.gain"), Tensor::ones(vec![d]), class);
        params.insert(&format!("{p}.ln1.bias"), Tensor::zeros(vec![d]), class);
        params.insert(&format!("{p}.ln2.gain"), Tensor::ones(vec![d]), class);
        params.insert(&format!("{p}.ln2.bias"), Tensor::zeros(vec![d]), class);
        params.insert(&format!("{p}.ffn.w1"), init_normal(rng, vec![d, f], 0.02), class);
        params.insert(&format!("{p}.ffn.b1"), Tensor::zeros(vec![f]), class);
        params.insert(&format!("{p}.ffn.w2"), init_normal(rng, vec![f, d], 0.02), class);
        params.insert(&format!("{p}.ffn.b2"), Tensor::zeros(vec![d]), class);
    }
}

fn linear(
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    ps: &Params,
    x: Var,
    w: &str,
    b: &str,
) -> Result<Var> {
    let wv = bind.var(g, ps, w)?;
    let bv = bind.var(g, ps, b)?;
    let h = g.matmul(x, wv)?;
    g.add(h, bv)
}

/// Multi-head self-attention over the full (bidirectional) sequence.
/// Returns the projected output and the per-head attention probability
/// matrices ([T×T] each).
#[allow(clippy::too_many_arguments)]
pub fn mha_forward(
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    ps: &Params,
    prefix: &str,
    cfg: &EncoderConfig,
    x: Var,
    mask: &AttentionMask,
    mode: Mode,
    rng: &mut ChaRng,
) -> Result<(Var, Vec<Var>)> {
    let t = g.value(x).rows();
    if mask.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} vs sequence length {t}",
            mask.len()
        )));
    }
    let d = cfg.model_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let q = linear(g, bind, ps, x, &format!("{prefix}.attn.wq"), &format!("{prefix}.attn.bq"))?;
    let k = linear(g, bind, ps, x, &format!("{prefix}.attn.wk"), &format!("{prefix}.attn.bk"))?;
    let v = linear(g, bind, ps, x, &format!("{prefix}.attn.wv"), &format!("{prefix}.attn.bv"))?;
    let bias = g.constant(mask.bias_tensor());
    let mut ctxs = Vec::with_capacity(heads);
    let mut probs_all = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let scores = g.add(scores, bias)?;
        let probs = g.softmax_last(scores)?;
        probs_all.push(probs);
        let probs_d = dropout(g, probs, cfg.dropout_rate, mode, rng)?;
        ctxs.push(g.matmul(probs_d, vh)?);
    }
    let ctx = g.concat_cols(&ctxs)?;
    let out = linear(g, bind, ps, ctx, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))?;
    Ok((out, probs_all))
}

/// Post-norm residual layer: ln(x + MHA(x)) then ln(x' + FFN(x')).
#[allow(clippy::too_many_arguments)]
pub fn transformer_layer_forward(
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    ps: &Params,
    prefix: &str,
    cfg: &EncoderConfig,
    x: Var,
    mask: &AttentionMask,
    mode: Mode,
    rng: &mut ChaRng,
) -> Result<Var> {
    let (attn, _) = mha_forward(g, bind, ps, prefix, cfg, x, mask, mode, rng)?;
    let sum = g.add(x, attn)?;
    let g1 = bind.var(g, ps, &format!("{prefix}.ln1.gain"))?;
    let b1 = bind.var(g, ps, &format!("{prefix}.ln1.bias"))?;
    let x1 = g.layer_norm(sum, g1, b1, cfg.layer_norm_eps)?;
    let h = linear(g, bind, ps, x1, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let h = g.gelu(h)?;
    let h = dropout(g, h, cfg.dropout_rate, mode, rng)?;
    let o = linear(g, bind, ps, h, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
    let sum2 = g.add(x1, o)?;
    let g2 = bind.var(g, ps, &format!("{prefix}.ln2.gain"))?;
    let b2 = bind.var(g, ps, &format!("{prefix}.ln2.bias"))?;
    g.layer_norm(sum2, g2, b2, cfg.layer_norm_eps)
}

/// Applies the full stack; returns the final-layer sequence (the caller
/// extracts position 0 for classification).
#[allow(clippy::too_many_arguments)]
pub fn encoder_forward(
    g: &mut Graph<f64>,
    bind: &mut Bindings,
    ps: &Params,
    prefix: &str,
    cfg: &EncoderConfig,
    x: Var,
    mask: &AttentionMask,
    mode: Mode,
    rng: &mut ChaRng,
) -> Result<Var> {
    if g.value(x).rows() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "input rows {} vs mask length {}",
            g.value(x).rows(),
            mask.len()
        )));
    }
    let mut cur = x;
    for l in 0..cfg.num_layers {
        cur = transformer_layer_forward(
            g,
            bind,
            ps,
            &format!("{prefix}.l{l}"),
            cfg,
            cur,
            mask,
            mode,
            rng,
        )?;
    }
    Ok(cur)
}
