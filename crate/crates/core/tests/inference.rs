mod common;

use common::*;
use dictnet_core::data::{EmbeddingTable, BOS, EOS, PAD};
use dictnet_core::exec::Execution;
use dictnet_core::inference::*;
use dictnet_core::model::{ModelConfig, UnifiedModel};
use dictnet_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = EmbeddingTable::new(dim);
    for i in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        t.insert(format!("c{i:03}"), &v).unwrap();
    }
    t
}

#[test]
fn single_candidate_is_rank_one() {
    let mut t = EmbeddingTable::new(3);
    t.insert("only", &[0.5, -1.0, 2.0]).unwrap();
    let r = rank_candidates(&[0.5, -1.0, 2.0], &t, Some("only"), Execution::Sequential).unwrap();
    assert_eq!(r.gold_rank, Some(1));
    assert_eq!(r.ranking[0].distance, 0.0);
    assert!(r.hit_at(1));
}

#[test]
fn ranking_matches_brute_force() {
    let t = random_table(100, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gold = t.word(rng.random_range(0..100)).to_string();
        let r = rank_candidates(&q, &t, Some(&gold), Execution::Parallel).unwrap();

        let gd = t.get(&gold).unwrap();
        let d = |v: &[f64]| -> f64 { v.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum() };
        let closer = t.iter().filter(|(_, v)| d(v) < d(gd)).count();
        assert_eq!(r.gold_rank, Some(closer + 1));
        assert_eq!(r.ranking.len(), 100);
        assert!(r.ranking.windows(2).all(|w| w[0].distance <= w[1].distance));
        let seq = rank_candidates(&q, &t, Some(&gold), Execution::Sequential).unwrap();
        assert_eq!(seq, r);
    }
}

#[test]
fn ranking_ignores_table_order() {
    let t = random_table(40, 4, 3);
    let mut rev = EmbeddingTable::new(4);
    for (w, v) in t.iter().collect::<Vec<_>>().into_iter().rev() {
        rev.insert(w, v).unwrap();
    }
    let q = [0.1, 0.2, -0.3, 0.0];
    let a = rank_candidates(&q, &t, Some("c007"), Execution::Sequential).unwrap();
    let b = rank_candidates(&q, &rev, Some("c007"), Execution::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn absent_gold_and_bad_queries() {
    let t = random_table(5, 2, 4);
    let r = rank_candidates(&[0.0, 0.0], &t, Some("missing"), Execution::Sequential).unwrap();
    assert_eq!(r.gold_rank, Some(6));
    assert!(rank_candidates(&[0.0], &t, None, Execution::Sequential).is_err());
    assert!(rank_candidates(&[0.0, 0.0], &EmbeddingTable::new(2), None, Execution::Sequential).is_err());
}

#[test]
fn reverse_lookup_uses_the_model_prediction() {
    let f = small_fixture(6, 5);
    let m = tiny_model(&f, 1);
    let e = &f.encoded[0];
    let r = reverse_lookup(&m, &e.ids, &f.corpus.table, Some(&e.word), Execution::Sequential).unwrap();
    let pred = m.predict_word_vector(&e.ids).unwrap();
    let best = f
        .corpus
        .table
        .iter()
        .map(|(_, v)| squared_distance(&pred, v))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.ranking[0].distance, best);
    assert!(reverse_lookup(&m, &[], &f.corpus.table, None, Execution::Sequential).is_err());
}

/// A 7-token vocabulary (5 generatable) with sharpened random weights.
fn toy_model(seed: u64) -> UnifiedModel {
    let cfg = ModelConfig {
        d_tok: 6,
        d_share: 6,
        d_ff: 8,
        depth: 1,
        heads: 2,
        dropout_transformer: 0.0,
        dropout_linear: 0.0,
        dropout_token: 0.0,
        ..ModelConfig::new(7, 3)
    };
    let mut m = UnifiedModel::new(cfg, seed).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for x in m.params_mut().tensor_mut(id).data_mut() {
            *x *= 3.0;
        }
    }
    m
}

/// Every admissible sequence: EOS-terminated of length <= max_len, or
/// EOS-free of length exactly max_len.
fn exhaustive_best(m: &UnifiedModel, shared: &[f64], max_len: usize) -> (Vec<usize>, f64) {
    let mut best: (Vec<usize>, f64) = (vec![], f64::NEG_INFINITY);
    let mut stack = vec![(vec![BOS], 0.0)];
    while let Some((ids, lp)) = stack.pop() {
        let next = m.next_token_log_probs(shared, &ids).unwrap();
        for t in generatable(next.len()) {
            let mut ext = ids.clone();
            ext.push(t);
            let l = lp + next[t];
            let n = ext.len() - 1;
            if t == EOS || n == max_len {
                let score = l / n as f64;
                if score > best.1 {
                    best = (ext, score);
                }
            } else {
                stack.push((ext, l));
            }
        }
    }
    best
}

#[test]
fn wide_beam_finds_the_exhaustive_optimum() {
    let max_len = 4;
    for seed in 0..4 {
        let m = toy_model(seed);
        assert_eq!(generatable(7).count(), 5);
        let shared = m.encode_word(&[0.3, -0.7, 1.1]).unwrap();
        let (ids, score) = exhaustive_best(&m, &shared, max_len);
        let got = beam_search_shared(
            &m,
            &shared,
            DecodeParams {
                beam_size: 625,
                max_len,
            },
        )
        .unwrap();
        assert!((got.score() - score).abs() < 1e-12, "seed {seed}");
        assert_eq!(got.ids, ids, "seed {seed}");
    }
}

#[test]
fn beam_of_one_is_greedy() {
    for seed in 0..3 {
        let m = toy_model(seed);
        let shared = m.encode_word(&[1.0, 0.0, -1.0]).unwrap();
        let g = greedy_decode(&m, &shared, 6).unwrap();
        let b = beam_search_shared(
            &m,
            &shared,
            DecodeParams {
                beam_size: 1,
                max_len: 6,
            },
        )
        .unwrap();
        assert_eq!(b.ids, g.ids);
    }
}

#[test]
fn beam_score_never_below_greedy() {
    let m = toy_model(9);
    let shared = m.encode_word(&[0.2, 0.2, 0.2]).unwrap();
    let g = greedy_decode(&m, &shared, 5).unwrap();
    for beam_size in [2, 3, 6] {
        let b = beam_search_shared(&m, &shared, DecodeParams { beam_size, max_len: 5 }).unwrap();
        assert!(b.score() >= g.score());
    }
}

#[test]
fn outputs_are_well_formed() {
    let f = small_fixture(8, 6);
    let m = tiny_model(&f, 2);
    for max_len in [1, 3, 7] {
        for e in &f.encoded {
            let ids = beam_search(&m, &e.word_vector, DecodeParams { beam_size: 3, max_len }).unwrap();
            assert_eq!(ids[0], BOS);
            assert!(ids.len() - 1 <= max_len);
            assert!(*ids.last().unwrap() == EOS || ids.len() - 1 == max_len);
            assert!(ids[1..].iter().all(|&t| t != PAD && t != BOS));
            assert!(ids[1..ids.len() - 1].iter().all(|&t| t != EOS));
        }
    }
    let bad = DecodeParams {
        beam_size: 0,
        max_len: 3,
    };
    assert!(beam_search(&m, &f.encoded[0].word_vector, bad).is_err());
}

#[test]
fn generate_definition_resolves_words() {
    let f = small_fixture(6, 7);
    let m = tiny_model(&f, 3);
    let params = DecodeParams {
        beam_size: 4,
        max_len: 8,
    };
    let source = WordSource {
        table: Some(&f.corpus.table),
        subword_vectors: None,
    };
    let word = &f.corpus.entries[0].word;
    let a = generate_definition(&m, &f.vocab, word, source, params).unwrap();
    let b = generate_definition(&m, &f.vocab, word, source, params).unwrap();
    assert_eq!(a, b);
    let ids = beam_search(&m, f.corpus.table.get(word).unwrap(), params).unwrap();
    assert_eq!(a, f.vocab.decode(&ids));

    let e = generate_definition(&m, &f.vocab, "nope", source, params).unwrap_err();
    assert!(matches!(e, Error::Miss(w) if w == "nope"));
    assert!(generate_definition(&m, &f.vocab, "nope", WordSource::default(), params).is_err());

    // Sub-word vectors summing to the table vector give the same output.
    let v = f.corpus.table.get(word).unwrap();
    let half: Vec<f64> = v.iter().map(|x| x / 2.0).collect();
    let parts = [half.clone(), half];
    let sub = WordSource {
        table: None,
        subword_vectors: Some(&parts),
    };
    assert_eq!(generate_definition(&m, &f.vocab, "unseen", sub, params).unwrap(), a);
}
