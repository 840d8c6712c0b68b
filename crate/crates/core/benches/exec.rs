use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dictnet_core::data::{build_whitespace_vocab, encode_entries, make_batches, EncodedEntry, Vocabulary};
use dictnet_core::evalmetrics::evaluate_revdic;
use dictnet_core::exec::Execution;
use dictnet_core::inference::rank_candidates;
use dictnet_core::model::{BatchOptions, LossSet, ModelConfig, UnifiedModel};
use dictnet_core::synth::{generate, SynthCorpus, SynthSpec};
use dictnet_core::training::validate;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

struct Setup {
    corpus: SynthCorpus,
    vocab: Vocabulary,
    encoded: Vec<EncodedEntry>,
    model: UnifiedModel,
}

fn setup(words: usize) -> Setup {
    let corpus = generate(&SynthSpec {
        words,
        dim: 32,
        tokens: 200,
        ..SynthSpec::default()
    })
    .unwrap();
    let texts: Vec<String> = corpus.entries.iter().map(|e| e.definition_text()).collect();
    let vocab = build_whitespace_vocab(texts.iter().map(String::as_str));
    let encoded = encode_entries(&corpus.entries, &vocab, false);
    let cfg = ModelConfig {
        d_tok: 32,
        d_share: 32,
        d_ff: 64,
        depth: 2,
        heads: 4,
        ..ModelConfig::new(vocab.len(), 32)
    };
    let model = UnifiedModel::new(cfg, 0).unwrap();
    Setup {
        corpus,
        vocab,
        encoded,
        model,
    }
}

fn batch_gradients(c: &mut Criterion) {
    let s = setup(64);
    let batch = &make_batches(&s.encoded, 64, None).unwrap()[0];
    let mut g = c.benchmark_group("run_batch_grad");
    for execution in MODES {
        let opts = BatchOptions {
            active: LossSet::ALL,
            dropout_seed: Some(1),
            with_grad: true,
            execution,
        };
        g.bench_function(BenchmarkId::from_parameter(format!("{execution:?}")), |b| {
            b.iter(|| s.model.run_batch(batch, &opts).unwrap())
        });
    }
    g.finish();
}

fn validation(c: &mut Criterion) {
    let s = setup(128);
    let mut g = c.benchmark_group("validate");
    g.sample_size(20);
    for execution in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{execution:?}")), |b| {
            b.iter(|| validate(&s.model, &s.encoded, LossSet::ALL, execution).unwrap())
        });
    }
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let s = setup(2000);
    let query = s.corpus.entries[0].word_vector.clone();
    let mut g = c.benchmark_group("rank_candidates");
    for execution in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{execution:?}")), |b| {
            b.iter(|| rank_candidates(&query, &s.corpus.table, Some("w000"), execution).unwrap())
        });
    }
    g.finish();

    let entries = &s.corpus.entries[..64];
    let mut g = c.benchmark_group("evaluate_revdic");
    g.sample_size(10);
    for execution in MODES {
        g.bench_function(BenchmarkId::from_parameter(format!("{execution:?}")), |b| {
            b.iter(|| evaluate_revdic(&s.model, &s.vocab, entries, &s.corpus.table, false, execution).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, batch_gradients, validation, retrieval);
criterion_main!(benches);
