use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::DictEntry;
use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A dictionary entry with its definition framed as `BOS .. EOS` ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEntry {
    pub word: String,
    pub ids: Vec<usize>,
    pub word_vector: Vec<f64>,
}

pub fn frame(mut ids: Vec<usize>) -> Vec<usize> {
    ids.insert(0, BOS);
    ids.push(EOS);
    ids
}

pub fn encode_entries(entries: &[DictEntry], vocab: &Vocabulary, lowercase: bool) -> Vec<EncodedEntry> {
    entries
        .iter()
        .map(|e| {
            let text = e.definition_text();
            let text = if lowercase { text.to_lowercase() } else { text };
            EncodedEntry {
                word: e.word.clone(),
                ids: frame(vocab.encode(&text)),
                word_vector: e.word_vector.clone(),
            }
        })
        .collect()
}

/// Padded group of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub words: Vec<String>,
    /// `[B, d_w]`
    pub word_vectors: Tensor,
    /// `[B, T]` framed ids, right-padded with `PAD`.
    pub ids: Vec<usize>,
    /// `[B, T]`, true at real (non-pad) positions.
    pub mask: Vec<bool>,
    /// `[B, T]` decoder targets: `ids` shifted left by one, `PAD`-filled.
    pub targets: Vec<usize>,
    pub seq_len: usize,
}

impl Batch {
    pub fn new(entries: &[&EncodedEntry]) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::invalid("batch", "no entries"))?;
        let dim = first.word_vector.len();
        let seq_len = entries.iter().map(|e| e.ids.len()).max().unwrap_or(0);
        let b = entries.len();
        let mut vectors = Vec::with_capacity(b * dim);
        let mut ids = vec![PAD; b * seq_len];
        let mut mask = vec![false; b * seq_len];
        let mut targets = vec![PAD; b * seq_len];
        for (r, e) in entries.iter().enumerate() {
            if e.word_vector.len() != dim {
                return Err(Error::shape("batch", &[dim], &[e.word_vector.len()]));
            }
            if e.ids.len() < 2 || e.ids[0] != BOS || *e.ids.last().unwrap() != EOS {
                return Err(Error::invalid(
                    "batch",
                    format!("definition of `{}` is not framed", e.word),
                ));
            }
            vectors.extend_from_slice(&e.word_vector);
            for (t, &id) in e.ids.iter().enumerate() {
                ids[r * seq_len + t] = id;
                mask[r * seq_len + t] = true;
                if t > 0 {
                    targets[r * seq_len + t - 1] = id;
                }
            }
        }
        Ok(Batch {
            words: entries.iter().map(|e| e.word.clone()).collect(),
            word_vectors: Tensor::new(vec![b, dim], vectors)?,
            ids,
            mask,
            targets,
            seq_len,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word_vector(&self, r: usize) -> &[f64] {
        self.word_vectors.row(r)
    }

    /// Unpadded framed ids of row `r`.
    pub fn definition(&self, r: usize) -> &[usize] {
        let row = &self.ids[r * self.seq_len..(r + 1) * self.seq_len];
        let len = self.mask[r * self.seq_len..(r + 1) * self.seq_len]
            .iter()
            .filter(|&&m| m)
            .count();
        &row[..len]
    }

    /// Number of decoder target tokens (`EOS` included) over the batch.
    pub fn target_tokens(&self) -> usize {
        self.targets.iter().filter(|&&t| t != PAD).count()
    }
}

/// Splits entries into batches of `batch_size`, keeping a final partial
/// batch. With a seed the order is shuffled deterministically.
pub fn make_batches(entries: &[EncodedEntry], batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("make_batches", "batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| Batch::new(&chunk.iter().map(|&i| &entries[i]).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entries(n: usize) -> Vec<EncodedEntry> {
        (0..n)
            .map(|i| EncodedEntry {
                word: format!("w{i}"),
                ids: frame((0..=i % 4).map(|k| 4 + k).collect()),
                word_vector: vec![i as f64, 1.0],
            })
            .collect()
    }

    #[test]
    fn sizes_keep_partial_batch() {
        let b = make_batches(&entries(5), 2, Some(1)).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert!(make_batches(&entries(5), 0, None).is_err());
    }

    #[test]
    fn same_seed_same_composition() {
        let a = make_batches(&entries(9), 4, Some(7)).unwrap();
        let b = make_batches(&entries(9), 4, Some(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_mask_and_targets() {
        let es = entries(3);
        let b = make_batches(&es, 3, None).unwrap().remove(0);
        let real: usize = es.iter().map(|e| e.ids.len()).sum();
        assert_eq!(b.mask.iter().filter(|&&m| m).count(), real);
        assert_eq!(b.seq_len, 5);
        assert_eq!(&b.ids[..5], &[BOS, 4, EOS, PAD, PAD]);
        assert_eq!(&b.targets[..5], &[4, EOS, PAD, PAD, PAD]);
        assert_eq!(b.definition(2), es[2].ids.as_slice());
        assert_eq!(b.target_tokens(), real - 3);
    }

    proptest! {
        #[test]
        fn every_entry_once_per_epoch(n in 1usize..40, bs in 1usize..9, seed in any::<u64>()) {
            let es = entries(n);
            let batches = make_batches(&es, bs, Some(seed)).unwrap();
            let mut seen: Vec<String> = batches.iter().flat_map(|b| b.words.clone()).collect();
            seen.sort();
            let mut all: Vec<String> = es.iter().map(|e| e.word.clone()).collect();
            all.sort();
            prop_assert_eq!(seen, all);
        }
    }
}
