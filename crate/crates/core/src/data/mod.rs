//! Dataset records, vocabularies, embedding tables and batching.

pub mod batch;
pub mod dataset;
pub mod embeddings;
pub mod unigram;
pub mod vocab;

pub use batch::{encode_entries, frame, make_batches, Batch, EncodedEntry};
pub use dataset::{aggregate_subword_vectors, load_dataset, save_dataset, DictEntry, LoadOptions, LoadedDataset};
pub use embeddings::EmbeddingTable;
pub use unigram::{train_unigram_vocab, UnigramTrainer};
pub use vocab::{VocabKind, Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, UNK};

/// Open whitespace vocabulary over the given definitions.
pub fn build_whitespace_vocab<'a>(definitions: impl IntoIterator<Item = &'a str>) -> Vocabulary {
    Vocabulary::whitespace(definitions)
}
