//! Retrieval accuracies and rank statistics, corpus BLEU and ROUGE-L.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{encode_entries, DictEntry, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{beam_search, reverse_lookup, DecodeParams};
use crate::model::UnifiedModel;

/// Ranks above this are replaced by [`FORCED_RANK`] for the forced std.
pub const FORCE_THRESHOLD: usize = 100;
pub const FORCED_RANK: usize = 1000;
/// F-measure weight of recall relative to precision in ROUGE-L.
pub const ROUGE_BETA: f64 = 1.0;
pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub acc_at_1: f64,
    pub acc_at_10: f64,
    pub acc_at_100: f64,
    pub median_rank: f64,
    pub rank_std_forced: f64,
    pub rank_std_real: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub corpus_bleu: f64,
    pub rouge_l_f1: f64,
    pub n: usize,
}

/// Population standard deviation of integers, from exact integer sums so
/// the only rounding is in the final division and square root.
fn population_std(xs: &[usize]) -> f64 {
    let n = xs.len() as u128;
    let sum: u128 = xs.iter().map(|&x| x as u128).sum();
    let sq: u128 = xs.iter().map(|&x| (x as u128) * (x as u128)).sum();
    let num = n * sq - sum * sum;
    (num as f64 / (n * n) as f64).sqrt()
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

pub fn retrieval_report(ranks: &[usize]) -> Result<RetrievalReport> {
    if ranks.is_empty() {
        return Err(Error::invalid("retrieval_report", "no ranks"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("retrieval_report", "ranks are 1-based"));
    }
    let n = ranks.len();
    let acc = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let forced: Vec<usize> = ranks
        .iter()
        .map(|&r| if r > FORCE_THRESHOLD { FORCED_RANK } else { r })
        .collect();
    Ok(RetrievalReport {
        acc_at_1: acc(1),
        acc_at_10: acc(10),
        acc_at_100: acc(100),
        median_rank: median(&sorted),
        rank_std_forced: population_std(&forced),
        rank_std_real: population_std(ranks),
        n,
    })
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Pooled corpus statistics behind BLEU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches, `n = 1..=4`.
    pub matches: [usize; BLEU_MAX_N],
    /// Hypothesis n-gram counts; each instance contributes at least 1.
    pub totals: [usize; BLEU_MAX_N],
    pub hyp_len: usize,
    /// Sum of per-instance closest reference lengths (shorter on ties).
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> f64 {
        self.matches[n - 1] as f64 / self.totals[n - 1] as f64
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    /// Geometric mean of the precisions times the brevity penalty; any zero
    /// precision gives 0 (no smoothing).
    pub fn bleu(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p = (1..=BLEU_MAX_N).map(|n| self.precision(n).ln()).sum::<f64>() / BLEU_MAX_N as f64;
        self.brevity_penalty() * log_p.exp()
    }
}

pub fn bleu_stats<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<BleuStats> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("corpus_bleu", "empty corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid("corpus_bleu", "hypothesis and reference counts differ"));
    }
    let mut st = BleuStats {
        matches: [0; BLEU_MAX_N],
        totals: [0; BLEU_MAX_N],
        hyp_len: 0,
        ref_len: 0,
    };
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::invalid("corpus_bleu", "instance without references"));
        }
        for n in 1..=BLEU_MAX_N {
            let counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for rf in refs {
                for (g, k) in ngram_counts(rf, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            st.matches[n - 1] += counts
                .iter()
                .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            st.totals[n - 1] += counts.values().sum::<usize>().max(1);
        }
        st.hyp_len += hyp.len();
        st.ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
            .expect("non-empty references");
    }
    Ok(st)
}

/// Corpus BLEU-4 with uniform weights, multi-reference clipping and no
/// smoothing.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references)?.bleu())
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_f1<T: Eq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if hypothesis.is_empty() || reference.is_empty() {
        return Err(Error::invalid("rouge_l_f1", "empty token sequence"));
    }
    let l = lcs_len(hypothesis, reference) as f64;
    if l == 0.0 {
        return Ok(0.0);
    }
    let p = l / hypothesis.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

/// Mean over instances of the best ROUGE-L F1 against any reference. An
/// empty hypothesis scores 0.
pub fn corpus_rouge_l<T: Eq>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::invalid(
            "rouge_l_f1",
            "empty corpus or mismatched reference count",
        ));
    }
    let mut total = 0.0;
    for (h, refs) in hypotheses.iter().zip(references) {
        let mut best: f64 = 0.0;
        if !h.is_empty() {
            for rf in refs {
                best = best.max(rouge_l_f1(h, rf)?);
            }
        }
        total += best;
    }
    Ok(total / hypotheses.len() as f64)
}

/// Runs reverse lookup for every entry against `table`.
pub fn evaluate_revdic(
    model: &UnifiedModel,
    vocab: &Vocabulary,
    entries: &[DictEntry],
    table: &EmbeddingTable,
    lowercase: bool,
    execution: Execution,
) -> Result<(RetrievalReport, Vec<usize>)> {
    let encoded = encode_entries(entries, vocab, lowercase);
    let ranks = execution
        .map(&encoded, |_, e| {
            reverse_lookup(model, &e.ids, table, Some(&e.word), Execution::Sequential)
                .map(|r| r.gold_rank.expect("gold given"))
        })
        .into_iter()
        .collect::<Result<Vec<usize>>>()?;
    Ok((retrieval_report(&ranks)?, ranks))
}

/// Generates a definition per entry from its word vector and scores it
/// against every definition of the same word in `entries`.
pub fn evaluate_defmod(
    model: &UnifiedModel,
    vocab: &Vocabulary,
    entries: &[DictEntry],
    params: DecodeParams,
    lowercase: bool,
    execution: Execution,
) -> Result<(GenerationReport, Vec<String>)> {
    let norm = |s: String| if lowercase { s.to_lowercase() } else { s };
    let mut by_word: HashMap<&str, Vec<Vec<String>>> = HashMap::new();
    for e in entries {
        let toks = norm(e.definition_text())
            .split_whitespace()
            .map(str::to_string)
            .collect();
        by_word.entry(e.word.as_str()).or_default().push(toks);
    }
    let generated = execution
        .map(entries, |_, e| {
            beam_search(model, &e.word_vector, params).map(|ids| vocab.decode(&ids))
        })
        .into_iter()
        .collect::<Result<Vec<String>>>()?;
    let hyps: Vec<Vec<String>> = generated
        .iter()
        .map(|g| g.split_whitespace().map(str::to_string).collect())
        .collect();
    let refs: Vec<Vec<Vec<String>>> = entries.iter().map(|e| by_word[e.word.as_str()].clone()).collect();
    let report = GenerationReport {
        corpus_bleu: corpus_bleu(&hyps, &refs)?,
        rouge_l_f1: corpus_rouge_l(&hyps, &refs)?,
        n: entries.len(),
    };
    Ok((report, generated))
}

impl RetrievalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8} {:>7} {:>7} {:>7} {:>11} {:>9} {:>6}",
            "median", "acc@1", "acc@10", "acc@100", "std(forced)", "std(real)", "n"
        );
        let _ = writeln!(
            s,
            "{:>8.1} {:>7.3} {:>7.3} {:>7.3} {:>11.1} {:>9.1} {:>6}",
            self.median_rank,
            self.acc_at_1,
            self.acc_at_10,
            self.acc_at_100,
            self.rank_std_forced,
            self.rank_std_real,
            self.n
        );
        s
    }
}

impl GenerationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>7} {:>8} {:>6}", "BLEU", "ROUGE-L", "n");
        let _ = writeln!(
            s,
            "{:>7.2} {:>8.2} {:>6}",
            100.0 * self.corpus_bleu,
            100.0 * self.rouge_l_f1,
            self.n
        );
        s
    }
}

#[cfg(test)]
mod tests;
