pub mod eval;
pub mod gradcheck;
pub mod query;
pub mod train;
pub mod vocab;

use std::path::Path;

use dictnet_core::data::{load_dataset, DictEntry, EmbeddingTable, LoadOptions};

use crate::error::CliError;

pub fn load_table(path: Option<&Path>) -> Result<Option<EmbeddingTable>, CliError> {
    path.map(|p| EmbeddingTable::load(p).map_err(CliError::from))
        .transpose()
}

/// Entries of a dataset file; records without any vector fall back to
/// `table` and are dropped when it has none either.
pub fn load_entries(
    path: &Path,
    table: Option<&EmbeddingTable>,
    dim: Option<usize>,
) -> Result<Vec<DictEntry>, CliError> {
    let ds = load_dataset(path, &LoadOptions { dim, table })?;
    if ds.entries.is_empty() {
        return Err(CliError::data(path.display(), "no usable records"));
    }
    Ok(ds.entries)
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::data(path.display(), e))
}
