//! Forward passes of the unified model on one tape.
//!
//! The two encoders meet the two decoders only at the shared layer: the word
//! side is `L_in` then `L_share`, the definition side is `T_in`, masked mean
//! pooling and a projection, then `L_share`. The decoder `T_out` sees the
//! shared vector only as its position-0 input; there is no cross-attention.

use rand::Rng;

use super::config::{LossKind, LossSet};
use super::layers::positional_encoding;
use super::unified::UnifiedModel;
use crate::data::{BOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

pub struct Forward<'m, R: Rng> {
    pub model: &'m UnifiedModel,
    pub store: &'m ParamStore,
    pub tape: Tape,
    /// Dropout source; `None` runs in evaluation mode.
    pub rng: Option<R>,
}

/// Scale factors turning per-example losses into their share of a batch mean.
#[derive(Debug, Clone, Copy)]
pub struct ExampleWeights {
    /// Applied to the embedding-distance losses (`1 / B`).
    pub embedding: f64,
    /// Applied to the token losses (`n_i / N` over target tokens).
    pub token: f64,
}

impl ExampleWeights {
    pub const UNIT: ExampleWeights = ExampleWeights {
        embedding: 1.0,
        token: 1.0,
    };
}

impl<'m, R: Rng> Forward<'m, R> {
    pub fn new(model: &'m UnifiedModel, store: &'m ParamStore, tape: Tape, rng: Option<R>) -> Self {
        Forward {
            model,
            store,
            tape,
            rng,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.tape.dropout(x, rate, self.rng.as_mut())
    }

    pub fn vector(&mut self, v: &[f64], expected: usize, what: &'static str) -> Result<Var> {
        if v.len() != expected {
            return Err(Error::shape(what, &[expected], &[v.len()]));
        }
        Ok(self.tape.constant(vec![1, v.len()], v.to_vec()))
    }

    /// `L_share(x) = x + x W + b`.
    pub fn shared_layer(&mut self, x: Var) -> Result<Var> {
        let affine = self.model.shared.forward(self, x)?;
        self.tape.add(x, affine)
    }

    /// `L_share(L_in(w))` for `w: [1, d_w]`.
    pub fn encode_word(&mut self, w: Var) -> Result<Var> {
        let h = self.model.word_in.forward(self, w)?;
        let h = self.dropout(h, self.model.config.dropout_linear)?;
        self.shared_layer(h)
    }

    /// Contextualized token states `[T, d_tok]` from `T_in`; `PAD` positions
    /// are masked out of attention.
    pub fn encode_tokens(&mut self, ids: &[usize]) -> Result<(Var, Vec<bool>)> {
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("encode_definition", "empty token sequence"));
        }
        let cfg = &self.model.config;
        let (d, p_tok) = (cfg.d_tok, cfg.dropout_token);
        let table = self.param(self.model.enc_embed);
        let x = self.tape.gather(table, ids)?;
        let x = self.tape.row_dropout(x, p_tok, self.rng.as_mut())?;
        let x = self.tape.add_const(x, &positional_encoding(ids.len(), d))?;
        let mut x = self.dropout(x, self.model.config.dropout_transformer)?;
        for block in &self.model.enc_blocks {
            x = block.forward(self, x, &mask, false)?;
        }
        Ok((x, mask))
    }

    /// Masked mean pooling of the encoder states, projected to `d_share`.
    pub fn pool(&mut self, states: Var, mask: &[bool]) -> Result<Var> {
        let pooled = self.tape.masked_mean_rows(states, mask)?;
        self.model.enc_pool.forward(self, pooled)
    }

    /// `L_share(T_in(D))` as `[1, d_share]`.
    pub fn encode_definition(&mut self, ids: &[usize]) -> Result<Var> {
        let (states, mask) = self.encode_tokens(ids)?;
        let pooled = self.pool(states, &mask)?;
        self.shared_layer(pooled)
    }

    /// `L_out(s)` as `[1, d_w]`.
    pub fn decode_word(&mut self, s: Var) -> Result<Var> {
        let s = self.dropout(s, self.model.config.dropout_linear)?;
        self.model.word_out.forward(self, s)
    }

    /// Next-token logits `[len(prefix), V]`. Position 0 carries the projected
    /// shared vector in place of the `BOS` embedding.
    pub fn decode_logits(&mut self, s: Var, prefix: &[usize]) -> Result<Var> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::invalid("decode_definition_logits", "prefix must start with BOS"));
        }
        let d = self.model.config.d_tok;
        let first = self.model.dec_inject.forward(self, s)?;
        let x = if prefix.len() > 1 {
            let table = self.param(self.model.dec_embed);
            let rest = self.tape.gather(table, &prefix[1..])?;
            self.tape.concat_rows(&[first, rest])?
        } else {
            first
        };
        let x = self.tape.add_const(x, &positional_encoding(prefix.len(), d))?;
        let mut x = self.dropout(x, self.model.config.dropout_transformer)?;
        let mask = vec![true; prefix.len()];
        for block in &self.model.dec_blocks {
            x = block.forward(self, x, &mask, true)?;
        }
        let proj = self.param(self.model.out_proj);
        let bias = self.param(self.model.out_bias);
        let logits = self.tape.matmul_bt(x, proj)?;
        self.tape.add_bias(logits, bias)
    }

    fn token_loss(&mut self, s: Var, ids: &[usize]) -> Result<Var> {
        let logits = self.decode_logits(s, &ids[..ids.len() - 1])?;
        self.tape.cross_entropy(logits, &ids[1..], PAD)
    }

    /// The active losses of one example, each scaled by `weights`, indexed
    /// like [`LossKind::ALL`]. `ids` is the framed definition.
    pub fn example_losses(
        &mut self,
        active: LossSet,
        word_vector: &[f64],
        ids: &[usize],
        weights: ExampleWeights,
    ) -> Result<[Option<Var>; 5]> {
        if ids.len() < 2 {
            return Err(Error::invalid("forward_losses", "definition must be framed BOS .. EOS"));
        }
        let d_w = self.model.config.d_w;
        let target = self.vector(word_vector, d_w, "forward_losses")?;
        let word_s = if active.needs_word_encoding() {
            Some(self.encode_word(target)?)
        } else {
            None
        };
        let def_s = if active.needs_definition_encoding() {
            Some(self.encode_definition(ids)?)
        } else {
            None
        };
        let mut out = [None; 5];
        for (slot, kind) in LossKind::ALL.into_iter().enumerate() {
            if !active.contains(kind) {
                continue;
            }
            let (raw, scale) = match kind {
                LossKind::Revdic => {
                    let pred = self.decode_word(def_s.expect("definition branch"))?;
                    (self.tape.mse(pred, target)?, weights.embedding)
                }
                LossKind::WordAe => {
                    let pred = self.decode_word(word_s.expect("word branch"))?;
                    (self.tape.mse(pred, target)?, weights.embedding)
                }
                LossKind::Defmod => (self.token_loss(word_s.expect("word branch"), ids)?, weights.token),
                LossKind::DefAe => (self.token_loss(def_s.expect("definition branch"), ids)?, weights.token),
                LossKind::Sim => {
                    let (d, w) = (def_s.expect("definition branch"), word_s.expect("word branch"));
                    (self.tape.mse(d, w)?, weights.embedding)
                }
            };
            out[slot] = Some(if scale == 1.0 { raw } else { self.tape.scale(raw, scale) });
        }
        Ok(out)
    }

    /// Sum of the present losses.
    pub fn total(&mut self, losses: &[Option<Var>; 5]) -> Result<Var> {
        let mut present = losses.iter().flatten().copied();
        let mut acc = present
            .next()
            .ok_or_else(|| Error::invalid("forward_losses", "no active losses"))?;
        for v in present {
            acc = self.tape.add(acc, v)?;
        }
        Ok(acc)
    }
}
