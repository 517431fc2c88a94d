use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::netcore::Tensor;

pub const UNK_TOKEN: &str = "<unk>";

/// Pre-trained word vectors with a fallback vector for unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    unk: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table; an explicit `<unk>` entry becomes the fallback, otherwise zeros.
    pub fn new(dim: usize, mut vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::format(
                "embedding table",
                format!("vector for {w:?} has {} values, expected {dim}", v.len()),
            ));
        }
        let unk = vectors.remove(UNK_TOKEN).unwrap_or_else(|| vec![0.0; dim]);
        Ok(Self { dim, vectors, unk })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn unk(&self) -> &[f64] {
        &self.unk
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.vectors.get(token).map_or(&self.unk, Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Reads the text format: a `count dim` header, then `token v1 … vdim` rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("embedding table", "missing header"))??;
        let mut parts = header.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format("embedding table", format!("bad header {header:?}")))
        };
        let count = parse(parts.next())?;
        let dim = parse(parts.next())?;
        let mut vectors = HashMap::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-empty line").to_string();
            let vals = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format("embedding table", format!("line {}: {e}", i + 2)))?;
            if vals.len() != dim {
                return Err(Error::format(
                    "embedding table",
                    format!("line {}: {} values, expected {dim}", i + 2, vals.len()),
                ));
            }
            vectors.insert(word, vals);
        }
        if vectors.len() != count {
            return Err(Error::format(
                "embedding table",
                format!("header promises {count} rows, found {}", vectors.len()),
            ));
        }
        Self::new(dim, vectors)
    }

    /// Writes the same text format `load` reads, rows sorted by token.
    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut out = format!("{} {}\n", self.vectors.len() + 1, self.dim);
        let row = |w: &str, v: &[f64]| {
            let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("{w} {}\n", vals.join(" "))
        };
        out.push_str(&row(UNK_TOKEN, &self.unk));
        for w in words {
            out.push_str(&row(w, &self.vectors[w]));
        }
        out
    }
}

/// Looks up each token, substituting `<unk>` for out-of-vocabulary words.
pub fn embed_tokens(tokens: &[String], table: &EmbeddingTable) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("embed_tokens"));
    }
    let mut data = Vec::with_capacity(tokens.len() * table.dim);
    for t in tokens {
        data.extend_from_slice(table.lookup(t));
    }
    Tensor::new(vec![tokens.len(), table.dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let mut v = HashMap::new();
        v.insert("happy".to_string(), vec![1.0; 300]);
        v.insert("sad".to_string(), vec![-1.0; 300]);
        v.insert(UNK_TOKEN.to_string(), vec![0.5; 300]);
        EmbeddingTable::new(300, v).unwrap()
    }

    #[test]
    fn all_oov_rows_are_unk() {
        let toks: Vec<String> = ["qq", "zz"].iter().map(|s| s.to_string()).collect();
        let m = embed_tokens(&toks, &table()).unwrap();
        for r in 0..2 {
            assert_eq!(m.row(r), &[0.5; 300][..]);
        }
    }

    #[test]
    fn mixed_lookup() {
        let toks: Vec<String> = ["happy", "what", "sad"].iter().map(|s| s.to_string()).collect();
        let m = embed_tokens(&toks, &table()).unwrap();
        assert_eq!(m.shape(), &[3, 300]);
        assert_eq!(m.row(0), &[1.0; 300][..]);
        assert_eq!(m.row(1), &[0.5; 300][..]);
        assert_eq!(m.row(2), &[-1.0; 300][..]);
    }

    #[test]
    fn empty_tokens_error() {
        assert!(matches!(embed_tokens(&[], &table()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        let t = table();
        fs::write(&p, t.to_text()).unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap(), t);
    }

    #[test]
    fn bad_row_width() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        fs::write(&p, "1 3\nfoo 1 2\n").unwrap();
        assert!(EmbeddingTable::load(&p).is_err());
    }
}
