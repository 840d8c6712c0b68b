use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dictnet_core::data::{build_whitespace_vocab, train_unigram_vocab};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Whitespace,
    Unigram,
}

pub struct VocabArgs {
    pub corpus: PathBuf,
    pub kind: Kind,
    pub size: Option<usize>,
    pub out: PathBuf,
    pub lowercase: bool,
}

#[derive(Deserialize)]
struct DefinitionOnly {
    definition: String,
}

/// The `definition` field of every record of a dataset file.
fn read_definitions(path: &Path) -> Result<Vec<String>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::data(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DefinitionOnly =
            serde_json::from_str(&line).map_err(|e| CliError::data(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec.definition);
    }
    Ok(out)
}

pub fn run(args: &VocabArgs) -> Result<(), CliError> {
    let mut texts = read_definitions(&args.corpus)?;
    if args.lowercase {
        texts.iter_mut().for_each(|t| *t = t.to_lowercase());
    }
    let vocab = match args.kind {
        Kind::Whitespace => {
            if let Some(n) = args.size {
                log::warn!("--size {n} is ignored: whitespace vocabularies are open and keep every token");
            }
            build_whitespace_vocab(texts.iter().map(String::as_str))
        }
        Kind::Unigram => {
            let size = args
                .size
                .ok_or_else(|| CliError::Usage("unigram vocabularies need --size".into()))?;
            train_unigram_vocab(texts.iter().map(String::as_str), size)?
        }
    };
    vocab.save(&args.out)?;
    println!("{} tokens written to {}", vocab.len(), args.out.display());
    Ok(())
}
