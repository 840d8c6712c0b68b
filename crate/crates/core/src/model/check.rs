//! Finite-difference cases for the model's composite forward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LossSet, ModelConfig};
use super::forward::{ExampleWeights, Forward};
use super::layers::Builder;
use super::unified::UnifiedModel;
use crate::data::{BOS, EOS, PAD};
use crate::error::Result;
use crate::numerics::{GradCheckCase, ParamStore, Tape, Tensor, Var};

/// Small enough for exhaustive central differences, large enough that every
/// code path (multiple heads, padding, several tokens) is exercised.
pub fn grad_check_config(tie_embeddings: bool) -> ModelConfig {
    ModelConfig {
        d_tok: 4,
        d_share: 4,
        d_ff: 6,
        depth: 1,
        heads: 2,
        dropout_transformer: 0.0,
        dropout_linear: 0.0,
        dropout_token: 0.0,
        tie_embeddings,
        ..ModelConfig::new(9, 3)
    }
}

fn run_forward<F>(model: &UnifiedModel, tape: &mut Tape, store: &ParamStore, body: F) -> Result<Var>
where
    F: FnOnce(&mut Forward<'_, ChaCha8Rng>) -> Result<Var>,
{
    let owned = std::mem::replace(tape, Tape::inference());
    let mut f = Forward::new(model, store, owned, None);
    let out = body(&mut f);
    *tape = f.tape;
    out
}

fn block_case(name: &str, causal: bool, seed: u64) -> GradCheckCase {
    let config = grad_check_config(false);
    let model = UnifiedModel::new(config.clone(), seed).expect("valid config");
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = store
        .register("x", Tensor::uniform(&[4, config.d_tok], 1.0, &mut rng))
        .expect("fresh store");
    let mut b = Builder {
        store: &mut store,
        rng: &mut rng,
    };
    let block = b.block("block", config.d_tok, config.d_ff);
    for id in block.ids() {
        let t = store.tensor_mut(id);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ id.index() as u64);
        let noise = Tensor::uniform(t.shape(), 0.5, &mut r);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let mask = if causal {
        vec![true; 4]
    } else {
        vec![true, true, true, false]
    };
    GradCheckCase {
        name: name.to_string(),
        store,
        forward: Box::new(move |tape, store| {
            run_forward(&model, tape, store, |f| {
                let xv = f.param(x);
                block.forward(f, xv, &mask, causal)
            })
        }),
    }
}

fn model_case(name: &str, tie: bool, active: LossSet, seed: u64) -> GradCheckCase {
    let model = UnifiedModel::new(grad_check_config(tie), seed).expect("valid config");
    let mut store = model.params().clone();
    // Biases and norm parameters start at constants; perturb everything so
    // no gradient is checked only at a symmetric point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.tensor_mut(id);
        let noise = Tensor::uniform(t.shape(), 0.3, &mut rng);
        for (v, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
    let word = [0.4, -0.7, 0.2];
    let ids = [BOS, 5, 7, 4, EOS, PAD];
    GradCheckCase {
        name: name.to_string(),
        store,
        forward: Box::new(move |tape, store| {
            run_forward(&model, tape, store, |f| {
                let losses = f.example_losses(active, &word, &ids, ExampleWeights::UNIT)?;
                f.total(&losses)
            })
        }),
    }
}

/// Transformer blocks and the complete multi-task forward pass.
pub fn model_cases(seed: u64) -> Vec<GradCheckCase> {
    vec![
        block_case("encoder_block", false, seed),
        block_case("decoder_block_causal", true, seed),
        model_case("five_task_forward", false, LossSet::ALL, seed),
        model_case("five_task_forward_tied", true, LossSet::ALL, seed),
    ]
}
