#![allow(dead_code)]

use dictnet_core::data::{build_whitespace_vocab, encode_entries, EncodedEntry, Vocabulary};
use dictnet_core::model::{ModelConfig, UnifiedModel};
use dictnet_core::synth::{generate, SynthCorpus, SynthSpec};
use dictnet_core::training::TrainConfig;

pub struct Fixture {
    pub corpus: SynthCorpus,
    pub vocab: Vocabulary,
    pub encoded: Vec<EncodedEntry>,
}

pub fn fixture(spec: &SynthSpec) -> Fixture {
    let corpus = generate(spec).unwrap();
    let texts: Vec<String> = corpus.entries.iter().map(|e| e.definition_text()).collect();
    let vocab = build_whitespace_vocab(texts.iter().map(String::as_str));
    let encoded = encode_entries(&corpus.entries, &vocab, false);
    Fixture { corpus, vocab, encoded }
}

pub fn small_fixture(words: usize, seed: u64) -> Fixture {
    fixture(&SynthSpec {
        words,
        dim: 6,
        tokens: 20,
        min_len: 2,
        max_len: 5,
        seed,
    })
}

/// A model small enough for many short training runs.
pub fn tiny_config(vocab_size: usize, d_w: usize) -> ModelConfig {
    ModelConfig {
        d_tok: 8,
        d_share: 8,
        d_ff: 16,
        depth: 1,
        heads: 2,
        dropout_transformer: 0.1,
        dropout_linear: 0.1,
        dropout_token: 0.05,
        ..ModelConfig::new(vocab_size, d_w)
    }
}

pub fn quick_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        max_epochs: 6,
        patience: 100,
        seed,
        ..TrainConfig::default()
    }
}

pub fn tiny_model(f: &Fixture, seed: u64) -> UnifiedModel {
    UnifiedModel::new(tiny_config(f.vocab.len(), f.corpus.table.dim()), seed).unwrap()
}
