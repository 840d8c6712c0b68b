use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors of one shared dimension, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: &[f64]) -> Result<()> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::shape("embedding_table", &[self.dim], &[vector.len()]));
        }
        if self.index.contains_key(&word) {
            return Err(Error::invalid("embedding_table", format!("duplicate word `{word}`")));
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vector(i))
    }

    /// Like [`get`](Self::get) but a missing word is an error.
    pub fn lookup(&self, word: &str) -> Result<&[f64]> {
        self.get(word).ok_or_else(|| Error::Miss(word.to_string()))
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().enumerate().map(|(i, w)| (w.as_str(), self.vector(i)))
    }

    /// Reads the text format: a `count dim` header, then `word v1 .. vd`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let at = |line: usize, msg: String| Error::Record {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| at(1, "missing `count dim` header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next(),
        ) {
            (Some(c), Some(d), None) if d > 0 => (c, d),
            _ => return Err(at(1, format!("bad header {header:?}, expected `count dim`"))),
        };
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line");
            let vector: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| at(n, format!("bad number {f:?}"))))
                .collect::<Result<_>>()?;
            if vector.len() != dim {
                return Err(at(
                    n,
                    format!("vector for `{word}` has {} values, expected {dim}", vector.len()),
                ));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(at(n, format!("non-finite value in vector for `{word}`")));
            }
            table.insert(word, &vector).map_err(|e| at(n, e.to_string()))?;
        }
        if table.len() != count {
            return Err(at(
                1,
                format!("header declares {count} words, file has {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (w, v) in self.iter() {
            out.push_str(w);
            for x in v {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_round_trip() {
        let mut t = EmbeddingTable::new(3);
        t.insert("cat", &[0.1, -2.5, 1e-7]).unwrap();
        t.insert("dog", &[1.0, 2.0, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        t.save(&p).unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap(), t);
    }

    #[test]
    fn missing_word_is_explicit() {
        let t = EmbeddingTable::new(2);
        assert!(t.get("x").is_none());
        assert!(matches!(t.lookup("x"), Err(Error::Miss(_))));
    }

    #[test]
    fn bad_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        std::fs::write(&p, "2 2\na 1 2\nb 1\n").unwrap();
        match EmbeddingTable::load(&p) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "3 2\na 1 2\n").unwrap();
        assert!(EmbeddingTable::load(&p).is_err());
    }
}
