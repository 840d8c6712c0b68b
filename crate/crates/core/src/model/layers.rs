//! Parameter handles for affine maps and Transformer blocks, plus their
//! forward passes on a [`Forward`] context.

use rand::Rng;

use super::forward::Forward;
use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Tensor, Var};

/// Registers parameters during model construction.
pub(crate) struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let t = Tensor::uniform_fan_in(shape, fan_in, self.rng);
        self.store.register(name, t).expect("parameter names are unique")
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store
            .register(name, Tensor::full(shape, value))
            .expect("parameter names are unique")
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: self.uniform(&format!("{name}.weight"), &[d_in, d_out], d_in),
            bias: self.constant(&format!("{name}.bias"), &[d_out], 0.0),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: self.constant(&format!("{name}.gamma"), &[d], 1.0),
            beta: self.constant(&format!("{name}.beta"), &[d], 0.0),
        }
    }

    pub fn block(&mut self, name: &str, d: usize, d_ff: usize) -> Block {
        Block {
            query: self.linear(&format!("{name}.attn.query"), d, d),
            key: self.linear(&format!("{name}.attn.key"), d, d),
            value: self.linear(&format!("{name}.attn.value"), d, d),
            output: self.linear(&format!("{name}.attn.output"), d, d),
            norm1: self.layer_norm(&format!("{name}.norm1"), d),
            ff_in: self.linear(&format!("{name}.ff.input"), d, d_ff),
            ff_out: self.linear(&format!("{name}.ff.output"), d_ff, d),
            norm2: self.layer_norm(&format!("{name}.norm2"), d),
        }
    }
}

/// `y = x W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<R: Rng>(&self, f: &mut Forward<'_, R>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = f.param(self.bias);
        let h = f.tape.matmul(x, w)?;
        f.tape.add_bias(h, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn forward<R: Rng>(&self, f: &mut Forward<'_, R>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        let eps = f.model.config.layer_norm_eps;
        f.tape.layer_norm(x, g, b, eps)
    }
}

/// Post-norm Transformer block: self-attention then a ReLU feed-forward,
/// each followed by dropout, a residual add and layer normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl Block {
    /// `x: [T, d]`. `key_mask[j]` false hides position `j` from every query;
    /// `causal` additionally hides positions after the query.
    pub fn forward<R: Rng>(&self, f: &mut Forward<'_, R>, x: Var, key_mask: &[bool], causal: bool) -> Result<Var> {
        let attn = self.attention(f, x, key_mask, causal)?;
        let attn = f.dropout(attn, f.model.config.dropout_transformer)?;
        let res = f.tape.add(x, attn)?;
        let x = self.norm1.forward(f, res)?;

        let h = self.ff_in.forward(f, x)?;
        let h = f.tape.relu(h);
        let h = self.ff_out.forward(f, h)?;
        let h = f.dropout(h, f.model.config.dropout_transformer)?;
        let res = f.tape.add(x, h)?;
        self.norm2.forward(f, res)
    }

    fn attention<R: Rng>(&self, f: &mut Forward<'_, R>, x: Var, key_mask: &[bool], causal: bool) -> Result<Var> {
        let t = f.tape.shape(x)[0];
        let d = f.tape.shape(x)[1];
        let heads = f.model.config.heads;
        let dh = d / heads;
        let q = self.query.forward(f, x)?;
        let k = self.key.forward(f, x)?;
        let v = self.value.forward(f, x)?;
        let mask: Vec<bool> = (0..t * t)
            .map(|idx| {
                let (i, j) = (idx / t, idx % t);
                key_mask[j] && (!causal || j <= i)
            })
            .collect();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = f.tape.slice_cols(q, h * dh, dh)?;
            let kh = f.tape.slice_cols(k, h * dh, dh)?;
            let vh = f.tape.slice_cols(v, h * dh, dh)?;
            let scores = f.tape.matmul_bt(qh, kh)?;
            let scores = f.tape.scale(scores, scale);
            let p = f.tape.softmax_masked(scores, 1, Some(&mask))?;
            outs.push(f.tape.matmul(p, vh)?);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            f.tape.concat_cols(&outs)?
        };
        self.output.forward(f, cat)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for l in [
            &self.query,
            &self.key,
            &self.value,
            &self.output,
            &self.ff_in,
            &self.ff_out,
        ] {
            v.extend(l.ids());
        }
        for n in [&self.norm1, &self.norm2] {
            v.extend([n.gamma, n.beta]);
        }
        v
    }
}

/// Sinusoidal position encodings for `len` positions of width `d`.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}
