//! Unigram language-model trainer for sub-word vocabularies.
//!
//! Seeds the inventory with frequent substrings, then alternates EM
//! re-estimation (expected piece counts from forward-backward over every
//! word's segmentation lattice) with pruning of the pieces whose removal
//! costs the least corpus likelihood. Single characters are never pruned.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::vocab::{Vocabulary, NUM_SPECIALS, UNK_GLYPH, WORD_MARKER};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct UnigramTrainer {
    /// Final vocabulary size, specials included.
    pub target_size: usize,
    pub em_iterations: usize,
    /// Fraction of prunable pieces removed per round.
    pub prune_fraction: f64,
    pub max_piece_chars: usize,
    /// Cap on the initial substring inventory.
    pub seed_size: usize,
}

impl UnigramTrainer {
    pub fn new(target_size: usize) -> Self {
        UnigramTrainer {
            target_size,
            em_iterations: 4,
            prune_fraction: 0.2,
            max_piece_chars: 16,
            seed_size: 200_000,
        }
    }
}

struct Model {
    pieces: Vec<String>,
    log_probs: Vec<f64>,
    is_char: Vec<bool>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl Model {
    fn new(pieces: Vec<(String, f64)>, chars: &BTreeSet<char>) -> Self {
        let mut m = Model {
            pieces: Vec::new(),
            log_probs: Vec::new(),
            is_char: Vec::new(),
            index: HashMap::new(),
            max_chars: 1,
        };
        for (p, lp) in pieces {
            let mut cs = p.chars();
            let single = matches!((cs.next(), cs.next()), (Some(c), None) if chars.contains(&c));
            m.max_chars = m.max_chars.max(p.chars().count());
            m.index.insert(p.clone(), m.pieces.len());
            m.pieces.push(p);
            m.log_probs.push(lp);
            m.is_char.push(single);
        }
        m
    }

    /// `edges[end]` lists `(start, piece)` for every piece spanning
    /// `chars[start..end]`, optionally excluding one piece.
    fn lattice(&self, chars: &[char], skip: Option<usize>) -> Vec<Vec<(usize, usize)>> {
        let n = chars.len();
        let mut edges = vec![Vec::new(); n + 1];
        let mut buf = String::new();
        for (end, slot) in edges.iter_mut().enumerate().skip(1) {
            for len in 1..=self.max_chars.min(end) {
                buf.clear();
                buf.extend(&chars[end - len..end]);
                if let Some(&p) = self.index.get(buf.as_str()) {
                    if Some(p) != skip {
                        slot.push((end - len, p));
                    }
                }
            }
        }
        edges
    }

    fn viterbi(&self, chars: &[char], skip: Option<usize>) -> Option<Vec<usize>> {
        let edges = self.lattice(chars, skip);
        let n = chars.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back = vec![(0usize, 0usize); n + 1];
        best[0] = 0.0;
        for end in 1..=n {
            for &(start, p) in &edges[end] {
                let s = best[start] + self.log_probs[p];
                if s > best[end] {
                    best[end] = s;
                    back[end] = (start, p);
                }
            }
        }
        if best[n] == f64::NEG_INFINITY {
            return None;
        }
        let mut out = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (start, p) = back[pos];
            out.push(p);
            pos = start;
        }
        out.reverse();
        Some(out)
    }

    /// Adds `weight` times the expected piece counts of one word to `counts`;
    /// returns the word's log marginal likelihood.
    fn expected_counts(&self, chars: &[char], weight: f64, counts: &mut [f64]) -> f64 {
        let edges = self.lattice(chars, None);
        let n = chars.len();
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for end in 1..=n {
            alpha[end] = log_sum_exp(edges[end].iter().map(|&(s, p)| alpha[s] + self.log_probs[p]));
        }
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        beta[n] = 0.0;
        for end in (1..=n).rev() {
            for &(start, p) in &edges[end] {
                let v = beta[end] + self.log_probs[p];
                beta[start] = log_add(beta[start], v);
            }
        }
        let z = alpha[n];
        for (end, es) in edges.iter().enumerate() {
            for &(start, p) in es {
                let post = (alpha[start] + self.log_probs[p] + beta[end] - z).exp();
                counts[p] += weight * post;
            }
        }
        z
    }

    fn retain(&mut self, keep: impl Fn(usize) -> bool, chars: &BTreeSet<char>) {
        let kept: Vec<(String, f64)> = (0..self.pieces.len())
            .filter(|&i| keep(i))
            .map(|i| (self.pieces[i].clone(), self.log_probs[i]))
            .collect();
        *self = Model::new(kept, chars);
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::NEG_INFINITY, log_add)
}

fn word_counts<'a>(corpus: impl IntoIterator<Item = &'a str>) -> BTreeMap<Vec<char>, f64> {
    let mut counts = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            let chars: Vec<char> = std::iter::once(WORD_MARKER)
                .chain(w.chars().filter(|&c| c != UNK_GLYPH))
                .collect();
            *counts.entry(chars).or_insert(0.0) += 1.0;
        }
    }
    counts
}

impl UnigramTrainer {
    pub fn train<'a>(&self, corpus: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary> {
        let words = word_counts(corpus);
        let chars: BTreeSet<char> = words.keys().flatten().copied().collect();
        let floor = chars.len() + NUM_SPECIALS;
        if self.target_size < floor {
            return Err(Error::invalid(
                "train_unigram_vocab",
                format!(
                    "target size {} is below {} characters + {} specials",
                    self.target_size,
                    chars.len(),
                    NUM_SPECIALS
                ),
            ));
        }

        let mut model = Model::new(self.seed_pieces(&words, &chars), &chars);
        loop {
            for _ in 0..self.em_iterations {
                self.em_step(&mut model, &words, &chars, true);
            }
            if model.pieces.len() + NUM_SPECIALS <= self.target_size {
                break;
            }
            self.prune(&mut model, &words, &chars);
        }
        self.em_step(&mut model, &words, &chars, false);

        let mut order: Vec<usize> = (0..model.pieces.len()).collect();
        order.sort_by(|&a, &b| {
            model.log_probs[b]
                .total_cmp(&model.log_probs[a])
                .then_with(|| model.pieces[a].cmp(&model.pieces[b]))
        });
        Vocabulary::unigram_from_pieces(
            order
                .into_iter()
                .map(|i| (model.pieces[i].clone(), model.log_probs[i]))
                .collect(),
        )
    }

    fn seed_pieces(&self, words: &BTreeMap<Vec<char>, f64>, chars: &BTreeSet<char>) -> Vec<(String, f64)> {
        let mut freq: HashMap<String, f64> = HashMap::new();
        for (w, &c) in words {
            for start in 0..w.len() {
                for len in 2..=self.max_piece_chars.min(w.len() - start) {
                    let s: String = w[start..start + len].iter().collect();
                    *freq.entry(s).or_insert(0.0) += c;
                }
            }
        }
        let mut subs: Vec<(String, f64)> = freq.into_iter().collect();
        subs.sort_by(|a, b| {
            let sa = a.1 * a.0.chars().count() as f64;
            let sb = b.1 * b.0.chars().count() as f64;
            sb.total_cmp(&sa).then_with(|| a.0.cmp(&b.0))
        });
        subs.truncate(self.seed_size);

        let mut char_freq: BTreeMap<char, f64> = BTreeMap::new();
        for (w, &c) in words {
            for &ch in w {
                *char_freq.entry(ch).or_insert(0.0) += c;
            }
        }
        let mut pieces: Vec<(String, f64)> = chars.iter().map(|ch| (ch.to_string(), char_freq[ch])).collect();
        pieces.extend(subs);
        let total: f64 = pieces.iter().map(|p| p.1).sum();
        pieces.into_iter().map(|(p, f)| (p, (f / total).ln())).collect()
    }

    fn em_step(&self, model: &mut Model, words: &BTreeMap<Vec<char>, f64>, chars: &BTreeSet<char>, drop_unused: bool) {
        let mut counts = vec![0.0; model.pieces.len()];
        for (w, &c) in words {
            model.expected_counts(w, c, &mut counts);
        }
        let total: f64 = counts.iter().sum();
        // Characters with vanishing mass keep a small floor so every string
        // stays segmentable.
        let floor = (1e-3 / total.max(1.0)).ln();
        for (lp, &c) in model.log_probs.iter_mut().zip(&counts) {
            *lp = if c > 0.0 { (c / total).ln().max(floor) } else { floor };
        }
        if drop_unused {
            let excess = (model.pieces.len() + NUM_SPECIALS).saturating_sub(self.target_size);
            let unused: BTreeSet<usize> = (0..counts.len())
                .filter(|&i| !model.is_char[i] && counts[i] <= 1e-9)
                .take(excess)
                .collect();
            if !unused.is_empty() {
                model.retain(|i| !unused.contains(&i), chars);
            }
        }
    }

    fn prune(&self, model: &mut Model, words: &BTreeMap<Vec<char>, f64>, chars: &BTreeSet<char>) {
        let mut viterbi_counts = vec![0.0; model.pieces.len()];
        for (w, &c) in words {
            if let Some(seg) = model.viterbi(w, None) {
                for p in seg {
                    viterbi_counts[p] += c;
                }
            }
        }
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for (p, &count) in viterbi_counts.iter().enumerate() {
            if model.is_char[p] {
                continue;
            }
            let piece: Vec<char> = model.pieces[p].chars().collect();
            let alt = model
                .viterbi(&piece, Some(p))
                .map(|seg| seg.iter().map(|&a| model.log_probs[a]).sum::<f64>())
                .unwrap_or(f64::NEG_INFINITY);
            let loss = count * (model.log_probs[p] - alt);
            candidates.push((loss, p));
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| model.pieces[b.1].len().cmp(&model.pieces[a.1].len()))
                .then_with(|| model.pieces[a.1].cmp(&model.pieces[b.1]))
        });
        let excess = model.pieces.len() + NUM_SPECIALS - self.target_size;
        let per_round = ((candidates.len() as f64 * self.prune_fraction).ceil() as usize).max(1);
        let remove: BTreeSet<usize> = candidates.iter().take(per_round.min(excess)).map(|&(_, p)| p).collect();
        model.retain(|i| !remove.contains(&i), chars);
    }
}

/// Trains a unigram vocabulary of `target_size` entries (specials included).
pub fn train_unigram_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocabulary> {
    UnigramTrainer::new(target_size).train(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CORPUS: [&str; 4] = [
        "the cat sat on the mat",
        "a small domesticated carnivorous mammal",
        "the act of sitting down",
        "a mat on the floor",
    ];

    fn charset(corpus: &[&str]) -> BTreeSet<char> {
        corpus
            .iter()
            .flat_map(|l| l.split_whitespace())
            .flat_map(|w| std::iter::once(WORD_MARKER).chain(w.chars()))
            .collect()
    }

    #[test]
    fn too_small_target_is_rejected() {
        let n = charset(&CORPUS).len() + NUM_SPECIALS;
        assert!(train_unigram_vocab(CORPUS, n - 1).is_err());
    }

    #[test]
    fn floor_size_gives_character_vocabulary() {
        let cs = charset(&CORPUS);
        let v = train_unigram_vocab(CORPUS, cs.len() + NUM_SPECIALS).unwrap();
        assert_eq!(v.len(), cs.len() + NUM_SPECIALS);
        let pieces: BTreeSet<char> = v
            .pieces()
            .map(|(p, _)| {
                let mut it = p.chars();
                let c = it.next().unwrap();
                assert!(it.next().is_none(), "multi-char piece {p:?}");
                c
            })
            .collect();
        assert_eq!(pieces, cs);
    }

    #[test]
    fn training_hits_target_and_keeps_characters() {
        let v = train_unigram_vocab(CORPUS, 60).unwrap();
        assert_eq!(v.len(), 60);
        for c in charset(&CORPUS) {
            assert!(v.id(&c.to_string()).is_some(), "lost character {c:?}");
        }
        for line in CORPUS {
            let ids = v.encode(line);
            assert!(!ids.contains(&super::super::vocab::UNK));
            assert_eq!(v.decode(&ids), line);
        }
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(
            train_unigram_vocab(CORPUS, 50).unwrap(),
            train_unigram_vocab(CORPUS, 50).unwrap()
        );
    }
}
