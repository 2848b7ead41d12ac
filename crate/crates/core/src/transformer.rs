//! Multi-head self-attention, pre-norm encoder layers and patch tokenization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init, Binder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Per-head projections `C×(C/h)` plus the `C×C` output projection.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub dim: usize,
}

impl AttentionParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide token dim {dim}")));
        }
        let d = dim / heads;
        let heads = (0..heads)
            .map(|l| HeadParams {
                w_q: store.insert(format!("{prefix}.head{l}.w_q"), init::fan_in_uniform(rng, dim, d)),
                w_k: store.insert(format!("{prefix}.head{l}.w_k"), init::fan_in_uniform(rng, dim, d)),
                w_v: store.insert(format!("{prefix}.head{l}.w_v"), init::fan_in_uniform(rng, dim, d)),
            })
            .collect();
        let w_o = store.insert(format!("{prefix}.w_o"), init::fan_in_uniform(rng, dim, dim));
        Ok(Self { heads, w_o, dim })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.len()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        Self {
            gain: store.insert(format!("{prefix}.gain"), Tensor::full(vec![dim], T::one())),
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, x: Var) -> Result<Var> {
        let g = binder.get(tape, self.gain);
        let b = binder.get(tape, self.bias);
        tape.layer_norm(x, g, b, T::lit(LAYER_NORM_EPS))
    }
}

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Self {
            weight: store.insert(format!("{prefix}.weight"), init::fan_in_uniform(rng, fan_in, fan_out)),
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, binder: &mut Binder<T>, x: Var) -> Result<Var> {
        let w = binder.get(tape, self.weight);
        let b = binder.get(tape, self.bias);
        tape.linear(x, w, b)
    }
}

/// Pre-norm encoder layer: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub norm2: LayerNormParams,
    pub mlp_in: LinearParams,
    pub mlp_out: LinearParams,
}

impl EncoderLayerParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Result<Self> {
        let norm1 = LayerNormParams::register(store, &format!("{prefix}.ln1"), dim);
        let attention = AttentionParams::register(store, rng, &format!("{prefix}.attn"), dim, heads)?;
        let norm2 = LayerNormParams::register(store, &format!("{prefix}.ln2"), dim);
        let mlp_in = LinearParams::register(store, rng, &format!("{prefix}.mlp_in"), dim, ff_dim);
        let mlp_out = LinearParams::register(store, rng, &format!("{prefix}.mlp_out"), ff_dim, dim);
        Ok(Self {
            attention,
            norm1,
            norm2,
            mlp_in,
            mlp_out,
        })
    }
}

/// Returns `(softmax(Q·Kᵀ/√d)·V, weights)`.
pub fn scaled_dot_product_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let d = *tape.shape(q).last().unwrap_or(&0);
    if d == 0 || tape.shape(q).len() != 2 {
        return Err(Error::Shape(format!("attention query shape {:?}", tape.shape(q))));
    }
    if tape.shape(k)[0] != tape.shape(v)[0] {
        return Err(Error::Dimension {
            op: "attention",
            lhs: tape.shape(k).to_vec(),
            rhs: tape.shape(v).to_vec(),
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, T::one() / T::lit(d as f64).sqrt())?;
    let weights = tape.softmax(scaled, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// `Concat(head_1..head_h)·W_O` with per-head weight matrices.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<(Var, Vec<Var>)> {
    let cols = *tape.shape(x).last().unwrap_or(&0);
    if cols != p.dim {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            lhs: tape.shape(x).to_vec(),
            rhs: vec![p.dim],
        });
    }
    let mut outputs = Vec::with_capacity(p.heads.len());
    let mut weights = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let wq = binder.get(tape, head.w_q);
        let wk = binder.get(tape, head.w_k);
        let wv = binder.get(tape, head.w_v);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let (o, w) = scaled_dot_product_attention(tape, q, k, v)?;
        outputs.push(o);
        weights.push(w);
    }
    let concat = if outputs.len() == 1 { outputs[0] } else { tape.concat_last(&outputs)? };
    let wo = binder.get(tape, p.w_o);
    Ok((tape.matmul(concat, wo)?, weights))
}

pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<T>,
    x: Var,
    p: &EncoderLayerParams,
) -> Result<(Var, Vec<Var>)> {
    let normed = p.norm1.apply(tape, binder, x)?;
    let (attn, weights) = multi_head_attention(tape, binder, normed, &p.attention)?;
    let x = tape.add(x, attn)?;
    let normed = p.norm2.apply(tape, binder, x)?;
    let hidden = p.mlp_in.apply(tape, binder, normed)?;
    let hidden = tape.gelu(hidden)?;
    let mlp = p.mlp_out.apply(tape, binder, hidden)?;
    Ok((tape.add(x, mlp)?, weights))
}

/// Attention matrices captured from one encoder: `layers[l][head]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub encoder: String,
    /// Each matrix is `tokens × tokens`, row-major.
    pub layers: Vec<Vec<Vec<f64>>>,
    pub tokens: usize,
}

impl AttentionRecord {
    pub fn capture<T: Scalar>(encoder: &str, tape: &Tape<T>, layers: &[Vec<Var>]) -> Self {
        let tokens = layers
            .first()
            .and_then(|l| l.first())
            .map_or(0, |&w| tape.shape(w)[0]);
        Self {
            encoder: encoder.to_string(),
            layers: layers
                .iter()
                .map(|heads| {
                    heads
                        .iter()
                        .map(|&w| tape.value(w).data().iter().map(|v| v.as_f64()).collect())
                        .collect()
                })
                .collect(),
            tokens,
        }
    }

    pub fn weights(&self, layer: usize, head: usize) -> &[f64] {
        &self.layers[layer][head]
    }

    pub fn row(&self, layer: usize, head: usize, row: usize) -> &[f64] {
        &self.layers[layer][head][row * self.tokens..(row + 1) * self.tokens]
    }
}

/// Splits a `channels×H×W` map into `(H/P)·(W/P)` tokens of length
/// `P²·channels`. Patches run row-major over the patch grid; inside a
/// patch values are channel-major, then row-major.
pub fn patchify<T: Scalar>(map: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let [channels, height, width] = *map.shape() else {
        return Err(Error::Shape(format!("patchify expects channels×H×W, got {:?}", map.shape())));
    };
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Config(format!("patch size {patch} does not divide {height}×{width}")));
    }
    let (gy, gx) = (height / patch, width / patch);
    let token_len = patch * patch * channels;
    let src = map.data();
    let mut out = Vec::with_capacity(gy * gx * token_len);
    for py in 0..gy {
        for px in 0..gx {
            for c in 0..channels {
                for dy in 0..patch {
                    let row = (c * height + py * patch + dy) * width + px * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gy * gx, token_len], out)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    tokens: &Tensor<T>,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<T>> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Config(format!("patch size {patch} does not divide {height}×{width}")));
    }
    let (gy, gx) = (height / patch, width / patch);
    let token_len = patch * patch * channels;
    if tokens.shape() != [gy * gx, token_len] {
        return Err(Error::Dimension {
            op: "unpatchify",
            lhs: tokens.shape().to_vec(),
            rhs: vec![gy * gx, token_len],
        });
    }
    let mut out = vec![T::zero(); channels * height * width];
    let src = tokens.data();
    let mut i = 0;
    for py in 0..gy {
        for px in 0..gx {
            for c in 0..channels {
                for dy in 0..patch {
                    let row = (c * height + py * patch + dy) * width + px * patch;
                    out[row..row + patch].copy_from_slice(&src[i..i + patch]);
                    i += patch;
                }
            }
        }
    }
    Tensor::new(vec![channels, height, width], out)
}

/// Patch-grid cell `(row, col)` covered by token `index`.
pub fn token_cell(index: usize, width: usize, patch: usize) -> (usize, usize) {
    let gx = width / patch;
    (index / gx, index % gx)
}
