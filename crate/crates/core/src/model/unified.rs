use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, LossSet, ModelConfig};
use super::forward::{ExampleWeights, Forward};
use super::layers::{Block, Builder, Linear};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{ParamGrads, ParamId, ParamStore, Tape, Tensor};

/// Which part of the architecture a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// `L_in`: word vector into the shared space.
    WordIn,
    /// `L_share`: the residual shared layer.
    Shared,
    /// `L_out`: shared space back to a word vector.
    WordOut,
    /// `T_in`: definition encoder, its embeddings and pooling projection.
    DefEncoder,
    /// `T_out`: definition decoder, its injection, embeddings and output layer.
    DefDecoder,
    /// One matrix serving both token embeddings and the output projection.
    TiedEmbedding,
}

impl Component {
    /// Components on the computation path of a loss. The tied matrix is on
    /// every path that touches either Transformer.
    pub fn on_path(k: LossKind) -> &'static [Component] {
        use Component::*;
        match k {
            LossKind::Revdic => &[DefEncoder, Shared, WordOut, TiedEmbedding],
            LossKind::Defmod => &[WordIn, Shared, DefDecoder, TiedEmbedding],
            LossKind::WordAe => &[WordIn, Shared, WordOut],
            LossKind::DefAe => &[DefEncoder, Shared, DefDecoder, TiedEmbedding],
            LossKind::Sim => &[WordIn, DefEncoder, Shared, TiedEmbedding],
        }
    }

    fn of_name(name: &str) -> Component {
        match name.split('.').next().unwrap_or_default() {
            "word_in" => Component::WordIn,
            "shared" => Component::Shared,
            "word_out" => Component::WordOut,
            "def_enc" => Component::DefEncoder,
            "def_dec" => Component::DefDecoder,
            "tied_embedding" => Component::TiedEmbedding,
            other => unreachable!("unknown parameter prefix `{other}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedModel {
    pub config: ModelConfig,
    params: ParamStore,
    pub(crate) word_in: Linear,
    pub(crate) shared: Linear,
    pub(crate) word_out: Linear,
    pub(crate) enc_embed: ParamId,
    pub(crate) enc_blocks: Vec<Block>,
    pub(crate) enc_pool: Linear,
    pub(crate) dec_inject: Linear,
    pub(crate) dec_embed: ParamId,
    pub(crate) dec_blocks: Vec<Block>,
    pub(crate) out_proj: ParamId,
    pub(crate) out_bias: ParamId,
}

/// Loss values of one batch; absent entries were not active.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    values: [Option<f64>; 5],
    pub total: f64,
}

impl LossBundle {
    pub fn get(&self, k: LossKind) -> Option<f64> {
        self.values[k as usize]
    }

    pub fn revdic(&self) -> Option<f64> {
        self.get(LossKind::Revdic)
    }

    pub fn defmod(&self) -> Option<f64> {
        self.get(LossKind::Defmod)
    }

    pub fn word_ae(&self) -> Option<f64> {
        self.get(LossKind::WordAe)
    }

    pub fn def_ae(&self) -> Option<f64> {
        self.get(LossKind::DefAe)
    }

    pub fn sim(&self) -> Option<f64> {
        self.get(LossKind::Sim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LossKind, f64)> + '_ {
        LossKind::ALL.into_iter().filter_map(|k| self.get(k).map(|v| (k, v)))
    }

    pub fn from_values(values: [Option<f64>; 5]) -> Self {
        let total = values.iter().flatten().sum();
        LossBundle { values, total }
    }

    fn add_assign(&mut self, other: &[Option<f64>; 5]) {
        for (slot, v) in self.values.iter_mut().zip(other) {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v);
            }
        }
        self.total = self.values.iter().flatten().sum();
    }
}

/// How a batch is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub active: LossSet,
    /// Dropout seed; `None` evaluates with dropout disabled.
    pub dropout_seed: Option<u64>,
    pub with_grad: bool,
    pub execution: Execution,
}

pub struct BatchOutput {
    pub losses: LossBundle,
    pub grads: Option<ParamGrads>,
}

/// SplitMix64 finalizer, used to derive independent per-example seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl UnifiedModel {
    /// Builds a model with seeded fan-in-scaled uniform initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let word_in = b.linear("word_in", c.d_w, c.d_share);
        let shared = b.linear("shared", c.d_share, c.d_share);
        let word_out = b.linear("word_out", c.d_share, c.d_w);
        let tied = c
            .tie_embeddings
            .then(|| b.uniform("tied_embedding", &[c.vocab_size, c.d_tok], c.d_tok));
        let enc_embed = tied.unwrap_or_else(|| b.uniform("def_enc.embed", &[c.vocab_size, c.d_tok], c.d_tok));
        let enc_blocks = (0..c.depth)
            .map(|i| b.block(&format!("def_enc.block{i}"), c.d_tok, c.d_ff))
            .collect();
        let enc_pool = b.linear("def_enc.pool", c.d_tok, c.d_share);
        let dec_inject = b.linear("def_dec.inject", c.d_share, c.d_tok);
        let dec_embed = tied.unwrap_or_else(|| b.uniform("def_dec.embed", &[c.vocab_size, c.d_tok], c.d_tok));
        let dec_blocks = (0..c.depth)
            .map(|i| b.block(&format!("def_dec.block{i}"), c.d_tok, c.d_ff))
            .collect();
        let out_proj = tied.unwrap_or_else(|| b.uniform("def_dec.output.weight", &[c.vocab_size, c.d_tok], c.d_tok));
        let out_bias = b.constant("def_dec.output.bias", &[c.vocab_size], 0.0);
        Ok(UnifiedModel {
            config,
            params,
            word_in,
            shared,
            word_out,
            enc_embed,
            enc_blocks,
            enc_pool,
            dec_inject,
            dec_embed,
            dec_blocks,
            out_proj,
            out_bias,
        })
    }

    /// Rebuilds a model around previously trained parameters; every name and
    /// shape must match the architecture implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids() {
            let name = model.params.name(id);
            let other = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if other != id || params.tensor(other).shape() != model.params.tensor(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` does not match the architecture"
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Trainable scalars; a tied matrix counts once.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn component(&self, id: ParamId) -> Component {
        Component::of_name(self.params.name(id))
    }

    pub fn component_params(&self, c: Component) -> Vec<ParamId> {
        self.params.ids().filter(|&id| self.component(id) == c).collect()
    }

    /// Parameters that no active loss can reach; their gradients must be
    /// exactly zero.
    pub fn excluded_params(&self, active: LossSet) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| {
                let c = self.component(id);
                !active.iter().any(|k| Component::on_path(k).contains(&c))
            })
            .collect()
    }

    /// The three token-matrix sites: encoder input, decoder input, output.
    pub fn embedding_sites(&self) -> [ParamId; 3] {
        [self.enc_embed, self.dec_embed, self.out_proj]
    }

    pub fn forward_eval(&self) -> Forward<'_, ChaCha8Rng> {
        Forward::new(self, &self.params, Tape::inference(), None)
    }

    pub fn encode_word(&self, word_vector: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.forward_eval();
        let w = f.vector(word_vector, self.config.d_w, "encode_word")?;
        let s = f.encode_word(w)?;
        Ok(f.tape.value(s).to_vec())
    }

    pub fn encode_definition(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut f = self.forward_eval();
        let s = f.encode_definition(ids)?;
        Ok(f.tape.value(s).to_vec())
    }

    pub fn decode_word(&self, shared: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.forward_eval();
        let s = f.vector(shared, self.config.d_share, "decode_word")?;
        let w = f.decode_word(s)?;
        Ok(f.tape.value(w).to_vec())
    }

    /// `L_out(L_share(T_in(ids)))`: the reverse-dictionary prediction.
    pub fn predict_word_vector(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut f = self.forward_eval();
        let s = f.encode_definition(ids)?;
        let w = f.decode_word(s)?;
        Ok(f.tape.value(w).to_vec())
    }

    /// Logits `[len(prefix), V]` of the decoder conditioned on `shared`.
    pub fn decode_definition_logits(&self, shared: &[f64], prefix: &[usize]) -> Result<Tensor> {
        let mut f = self.forward_eval();
        let s = f.vector(shared, self.config.d_share, "decode_definition_logits")?;
        let logits = f.decode_logits(s, prefix)?;
        Ok(f.tape.to_tensor(logits))
    }

    /// Log-softmax of the logits at the last prefix position.
    pub fn next_token_log_probs(&self, shared: &[f64], prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.decode_definition_logits(shared, prefix)?;
        let last = logits.row(logits.rows() - 1);
        let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + last.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok(last.iter().map(|v| v - log_z).collect())
    }

    /// Evaluation-mode losses of a batch, computed sequentially.
    pub fn forward_losses(&self, batch: &Batch, active: LossSet) -> Result<LossBundle> {
        let out = self.run_batch(
            batch,
            &BatchOptions {
                active,
                dropout_seed: None,
                with_grad: false,
                execution: Execution::Sequential,
            },
        )?;
        Ok(out.losses)
    }

    /// Batch-mean losses, optionally with parameter gradients of their sum.
    ///
    /// Each example is run on its own tape with weights that make the sum
    /// over examples equal the batch means (embedding losses averaged over
    /// rows, token losses over target tokens). Per-example results are
    /// reduced in batch order, so the execution mode never changes numbers.
    pub fn run_batch(&self, batch: &Batch, opts: &BatchOptions) -> Result<BatchOutput> {
        if opts.active.is_empty() {
            return Err(Error::invalid("forward_losses", "active loss set is empty"));
        }
        if batch.word_vectors.cols() != self.config.d_w {
            return Err(Error::shape(
                "forward_losses",
                &[self.config.d_w],
                batch.word_vectors.shape(),
            ));
        }
        let n_tokens = batch.target_tokens().max(1) as f64;
        let rows: Vec<usize> = (0..batch.len()).collect();
        let per_example = opts
            .execution
            .map(&rows, |_, &r| -> Result<([Option<f64>; 5], Option<ParamGrads>)> {
                let ids = batch.definition(r);
                let weights = ExampleWeights {
                    embedding: 1.0 / batch.len() as f64,
                    token: (ids.len() - 1) as f64 / n_tokens,
                };
                let tape = if opts.with_grad { Tape::new() } else { Tape::inference() };
                let rng = opts
                    .dropout_seed
                    .map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, r as u64)));
                let mut f = Forward::new(self, &self.params, tape, rng);
                let losses = f.example_losses(opts.active, batch.word_vector(r), ids, weights)?;
                let values = losses.map(|v| v.map(|v| f.tape.item(v)));
                let grads = if opts.with_grad {
                    let total = f.total(&losses)?;
                    let g = f.tape.backward(total)?;
                    Some(f.tape.param_grads(&g))
                } else {
                    None
                };
                Ok((values, grads))
            });
        let mut losses = LossBundle::default();
        let mut grads = Vec::new();
        for item in per_example {
            let (values, g) = item?;
            losses.add_assign(&values);
            grads.extend(g);
        }
        let grads = opts.with_grad.then(|| ParamGrads::sum_ordered(&grads));
        Ok(BatchOutput { losses, grads })
    }
}
