use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// One (word, definition, vector) record.
#[derive(Debug, Clone, PartialEq)]
pub struct DictEntry {
    pub word: String,
    pub definition: Vec<String>,
    pub word_vector: Vec<f64>,
    pub context_subword_vectors: Option<Vec<Vec<f64>>>,
}

impl DictEntry {
    pub fn definition_text(&self) -> String {
        self.definition.join(" ")
    }
}

/// On-disk form of one dataset line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    word: String,
    definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word_vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_subword_vectors: Option<Vec<Vec<f64>>>,
}

/// Sums the sub-word vectors of one word into a single vector.
pub fn aggregate_subword_vectors(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("aggregate_subword_vectors", "empty vector list"))?;
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != sum.len() {
            return Err(Error::shape("aggregate_subword_vectors", &[sum.len()], &[v.len()]));
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    Ok(sum)
}

#[derive(Debug, Default, Clone)]
pub struct LoadOptions<'a> {
    /// Expected vector dimension; inferred from the first vector when `None`.
    pub dim: Option<usize>,
    /// Fallback source for records that carry no vector of their own.
    pub table: Option<&'a EmbeddingTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub entries: Vec<DictEntry>,
    /// Records skipped because their word had no vector anywhere.
    pub dropped: usize,
    pub dim: Option<usize>,
}

/// Reads line-delimited JSON records. Each record's vector comes from its
/// `word_vector`, else the sum of its `context_subword_vectors`, else the
/// fallback table; records with none of these are dropped and counted.
pub fn load_dataset(path: &Path, opts: &LoadOptions<'_>) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim = opts.dim.or(opts.table.map(EmbeddingTable::dim));
    let mut entries = Vec::new();
    let mut dropped = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: n,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| at(format!("malformed record: {e}")))?;
        let definition: Vec<String> = rec.definition.split_whitespace().map(str::to_string).collect();
        if definition.is_empty() {
            return Err(at("field `definition` is empty".into()));
        }
        if rec.word.trim().is_empty() {
            return Err(at("field `word` is empty".into()));
        }
        let mut check = |what: &str, v: &[f64]| -> Result<()> {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(at(format!("field `{what}` has a non-finite value")));
            }
            match dim {
                Some(d) if d != v.len() => Err(at(format!("field `{what}` has dimension {}, expected {d}", v.len()))),
                Some(_) => Ok(()),
                None => {
                    dim = Some(v.len());
                    Ok(())
                }
            }
        };
        if let Some(cv) = &rec.context_subword_vectors {
            if cv.is_empty() {
                return Err(at("field `context_subword_vectors` is empty".into()));
            }
            for v in cv {
                check("context_subword_vectors", v)?;
            }
        }
        let word_vector = match (&rec.word_vector, &rec.context_subword_vectors) {
            (Some(v), _) => {
                check("word_vector", v)?;
                v.clone()
            }
            (None, Some(cv)) => aggregate_subword_vectors(cv).map_err(|e| at(e.to_string()))?,
            (None, None) => match opts.table.and_then(|t| t.get(&rec.word)) {
                Some(v) => v.to_vec(),
                None => {
                    dropped += 1;
                    continue;
                }
            },
        };
        entries.push(DictEntry {
            word: rec.word,
            definition,
            word_vector,
            context_subword_vectors: rec.context_subword_vectors,
        });
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} records whose word has no vector", path.display());
    }
    Ok(LoadedDataset { entries, dropped, dim })
}

pub fn save_dataset(entries: &[DictEntry], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for e in entries {
        let rec = Record {
            word: e.word.clone(),
            definition: e.definition_text(),
            word_vector: Some(e.word_vector.clone()),
            context_subword_vectors: e.context_subword_vectors.clone(),
        };
        let line = serde_json::to_string(&rec).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, lines).unwrap();
        (dir, p)
    }

    #[test]
    fn empty_file_gives_no_entries() {
        let (_d, p) = write("");
        assert!(load_dataset(&p, &LoadOptions::default()).unwrap().entries.is_empty());
    }

    #[test]
    fn one_record_round_trips() {
        let e = DictEntry {
            word: "cat".into(),
            definition: vec!["a".into(), "small".into(), "feline".into()],
            word_vector: vec![0.5, -1.0, 1.0 / 3.0],
            context_subword_vectors: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(std::slice::from_ref(&e), &p).unwrap();
        let loaded = load_dataset(&p, &LoadOptions::default()).unwrap();
        assert_eq!(loaded.entries, vec![e]);
        assert_eq!(loaded.dim, Some(3));
    }

    #[test]
    fn short_vector_cites_line() {
        let v299 = vec![0.0; 299];
        let v300 = vec![0.0; 300];
        let text = format!(
            "{}\n{}\n",
            serde_json::json!({"word": "a", "definition": "x", "word_vector": v300}),
            serde_json::json!({"word": "b", "definition": "y", "word_vector": v299}),
        );
        let (_d, p) = write(&text);
        let opts = LoadOptions {
            dim: Some(300),
            table: None,
        };
        match load_dataset(&p, &opts) {
            Err(Error::Record { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("299"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_definition_are_located() {
        let (_d, p) = write("{\"word\": \"a\", \"definition\": \"x\", \"word_vector\": [1]}\n{oops\n");
        assert!(matches!(
            load_dataset(&p, &LoadOptions::default()),
            Err(Error::Record { line: 2, .. })
        ));
        let (_d, p) = write("{\"word\": \"a\", \"definition\": \"  \", \"word_vector\": [1]}\n");
        assert!(matches!(
            load_dataset(&p, &LoadOptions::default()),
            Err(Error::Record { line: 1, .. })
        ));
        let (_d, p) = write("{\"word\": \"a\", \"definition\": \"x\", \"extra\": 1}\n");
        assert!(matches!(
            load_dataset(&p, &LoadOptions::default()),
            Err(Error::Record { line: 1, .. })
        ));
    }

    #[test]
    fn vector_sources_in_priority_order() {
        let mut table = EmbeddingTable::new(2);
        table.insert("known", &[9.0, 9.0]).unwrap();
        let text = [
            r#"{"word": "ctx", "definition": "d", "context_subword_vectors": [[1, 2], [3, 4]]}"#,
            r#"{"word": "known", "definition": "d"}"#,
            r#"{"word": "lost", "definition": "d"}"#,
        ]
        .join("\n");
        let (_d, p) = write(&text);
        let opts = LoadOptions {
            dim: None,
            table: Some(&table),
        };
        let loaded = load_dataset(&p, &opts).unwrap();
        assert_eq!(loaded.dropped, 1);
        assert_eq!(loaded.entries[0].word_vector, vec![4.0, 6.0]);
        assert_eq!(loaded.entries[1].word_vector, vec![9.0, 9.0]);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_subword_vectors(&[vec![1.5, 2.0]]).unwrap(), vec![1.5, 2.0]);
        assert_eq!(
            aggregate_subword_vectors(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            vec![4.0, 6.0]
        );
        assert!(aggregate_subword_vectors(&[]).is_err());
        assert!(aggregate_subword_vectors(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let a = aggregate_subword_vectors(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        let b = aggregate_subword_vectors(&[vec![0.5, 0.6], vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
