use serde::{Deserialize, Serialize};

use crate::data::{aggregate_subword_vectors, EmbeddingTable, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::UnifiedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam_size: usize,
    /// Maximum number of generated tokens after `BOS`, `EOS` included.
    pub max_len: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam_size: 6,
            max_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// `BOS` followed by the generated tokens.
    pub ids: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Cumulative log-probability divided by the generated-token count.
    pub fn score(&self) -> f64 {
        let n = self.ids.len().saturating_sub(1).max(1);
        self.log_prob / n as f64
    }

    fn extend(&self, token: usize, lp: f64, max_len: usize) -> Self {
        let mut ids = self.ids.clone();
        ids.push(token);
        let finished = token == EOS || ids.len() > max_len;
        BeamHypothesis {
            ids,
            log_prob: self.log_prob + lp,
            finished,
        }
    }
}

/// Tokens the decoder may emit: everything but `PAD` and `BOS`.
pub fn generatable(vocab_size: usize) -> impl Iterator<Item = usize> {
    (0..vocab_size).filter(|&t| t != PAD && t != BOS)
}

fn check(model: &UnifiedModel, shared: &[f64], max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::invalid("beam_search", "max_len must be at least 1"));
    }
    if shared.len() != model.config.d_share {
        return Err(Error::shape("beam_search", &[model.config.d_share], &[shared.len()]));
    }
    Ok(())
}

fn argmax(lp: &[f64]) -> usize {
    generatable(lp.len())
        .fold(None, |best: Option<usize>, t| match best {
            Some(b) if lp[b] >= lp[t] => Some(b),
            _ => Some(t),
        })
        .expect("vocabulary has regular tokens")
}

/// Repeatedly takes the most probable next token (lowest id on ties).
pub fn greedy_decode(model: &UnifiedModel, shared: &[f64], max_len: usize) -> Result<BeamHypothesis> {
    check(model, shared, max_len)?;
    let mut h = BeamHypothesis {
        ids: vec![BOS],
        log_prob: 0.0,
        finished: false,
    };
    while !h.finished {
        let lp = model.next_token_log_probs(shared, &h.ids)?;
        let t = argmax(&lp);
        h = h.extend(t, lp[t], max_len);
    }
    Ok(h)
}

/// Beam search over the decoder conditioned on a shared-space vector.
///
/// Each step expands every running hypothesis by every generatable token
/// and keeps the `beam_size` most probable; finished ones move to a pool.
/// The result is the pooled hypothesis with the best length-normalized
/// score. The greedy sequence is always a pool member.
pub fn beam_search_shared(model: &UnifiedModel, shared: &[f64], params: DecodeParams) -> Result<BeamHypothesis> {
    check(model, shared, params.max_len)?;
    if params.beam_size == 0 {
        return Err(Error::invalid("beam_search", "beam_size must be at least 1"));
    }
    let mut pool = vec![greedy_decode(model, shared, params.max_len)?];
    let mut running = vec![BeamHypothesis {
        ids: vec![BOS],
        log_prob: 0.0,
        finished: false,
    }];
    while !running.is_empty() {
        let mut candidates = Vec::new();
        for h in &running {
            let lp = model.next_token_log_probs(shared, &h.ids)?;
            candidates.extend(generatable(lp.len()).map(|t| h.extend(t, lp[t], params.max_len)));
        }
        // Stable sort: equal scores keep parent order, then token order.
        candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        candidates.truncate(params.beam_size);
        running.clear();
        for c in candidates {
            if c.finished {
                if !pool.iter().any(|p| p.ids == c.ids) {
                    pool.push(c);
                }
            } else {
                running.push(c);
            }
        }
    }
    let best = pool
        .into_iter()
        .reduce(|best, h| if h.score() > best.score() { h } else { best })
        .expect("pool holds the greedy sequence");
    Ok(best)
}

/// `beam_search_shared` conditioned on `encode_word(word_vector)`.
pub fn beam_search(model: &UnifiedModel, word_vector: &[f64], params: DecodeParams) -> Result<Vec<usize>> {
    let shared = model.encode_word(word_vector)?;
    Ok(beam_search_shared(model, &shared, params)?.ids)
}

/// Where a word's vector comes from.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordSource<'a> {
    pub table: Option<&'a EmbeddingTable>,
    /// Sub-word vectors to sum; take precedence over the table.
    pub subword_vectors: Option<&'a [Vec<f64>]>,
}

impl WordSource<'_> {
    pub fn resolve(&self, word: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.subword_vectors {
            return aggregate_subword_vectors(v);
        }
        match self.table {
            Some(t) => t.lookup(word).map(<[f64]>::to_vec),
            None => Err(Error::Miss(word.to_string())),
        }
    }
}

/// The definition-modelling half of the model, from a word to text.
pub fn generate_definition(
    model: &UnifiedModel,
    vocab: &Vocabulary,
    word: &str,
    source: WordSource<'_>,
    params: DecodeParams,
) -> Result<String> {
    let vector = source.resolve(word)?;
    let ids = beam_search(model, &vector, params)?;
    Ok(vocab.decode(&ids))
}
