//! Seeded synthetic dictionaries for tests, benchmarks and demos.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DictEntry, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub words: usize,
    pub dim: usize,
    /// Distinct definition tokens (the vocabulary adds four specials).
    pub tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            words: 50,
            dim: 16,
            tokens: 56,
            min_len: 3,
            max_len: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub entries: Vec<DictEntry>,
    /// Every word's vector, usable as a retrieval candidate table.
    pub table: EmbeddingTable,
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

fn syllable_word(i: usize) -> String {
    let mut n = i;
    let mut out = String::new();
    for _ in 0..2 {
        out.push_str(ONSETS[n % ONSETS.len()]);
        n /= ONSETS.len();
        out.push_str(NUCLEI[n % NUCLEI.len()]);
        n /= NUCLEI.len();
    }
    if n > 0 {
        out.push_str(&n.to_string());
    }
    out
}

/// Token `i` of the definition vocabulary; pronounceable and unique.
pub fn token_name(i: usize) -> String {
    syllable_word(i)
}

/// Random words with standard-normal vectors and unique random glosses.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.min_len == 0 || spec.min_len > spec.max_len || spec.tokens == 0 || spec.dim == 0 {
        return Err(Error::invalid("synth", "empty definitions, tokens or dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tokens: Vec<String> = (0..spec.tokens).map(token_name).collect();
    let mut seen = BTreeSet::new();
    let mut table = EmbeddingTable::new(spec.dim);
    let mut entries = Vec::with_capacity(spec.words);
    let mut attempts = 0;
    while entries.len() < spec.words {
        attempts += 1;
        if attempts > 100 * spec.words + 1000 {
            return Err(Error::invalid("synth", "cannot draw enough distinct definitions"));
        }
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let definition: Vec<String> = (0..len)
            .map(|_| tokens.choose(&mut rng).expect("non-empty").clone())
            .collect();
        if !seen.insert(definition.clone()) {
            continue;
        }
        let word = format!("w{:03}", entries.len());
        let vector: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        table.insert(word.clone(), &vector)?;
        entries.push(DictEntry {
            word,
            definition,
            word_vector: vector,
            context_subword_vectors: None,
        });
    }
    Ok(SynthCorpus { entries, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_unique() {
        let spec = SynthSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.entries.len(), 50);
        let defs: BTreeSet<_> = a.entries.iter().map(|e| e.definition.clone()).collect();
        assert_eq!(defs.len(), 50);
        assert!(a.entries.iter().all(|e| (3..=8).contains(&e.definition.len())));
        let names: BTreeSet<_> = (0..300).map(token_name).collect();
        assert_eq!(names.len(), 300);
    }
}
