//! Embedding persistence in the word2vec text format.
//!
//! First line: `<vocab_size> <dim>`. Then one line per word in vocabulary
//! stable order: the word followed by `dim` reals, single-space separated,
//! printed with 6 decimal places. Only input vectors are persisted; output
//! vectors exist solely for training. Writing a just-loaded embedding
//! reproduces the file byte for byte (values are already quantized).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::sgns::EmbeddingMatrix;

/// Words and input vectors loaded from an embedding file.
#[derive(Debug, Clone)]
pub struct LoadedEmbedding {
    pub words: Vec<String>,
    /// Row-major `words.len() × dim` matrix.
    pub matrix: Vec<f64>,
    pub dim: usize,
}

impl LoadedEmbedding {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..][..self.dim]
    }
}

/// Writes the input vectors of `emb` under the words of `vocab`. The matrix
/// must have been created for this exact vocabulary.
pub fn write_text(emb: &EmbeddingMatrix, vocab: &Vocabulary, path: &Path) -> Result<()> {
    if emb.vocab_hash() != vocab.checksum() {
        return Err(Error::config(
            "embedding matrix was built for a different vocabulary".to_string(),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(out, "{} {}", vocab.len(), emb.dim()).map_err(io_err)?;
    for id in 0..vocab.len() {
        let mut line = String::with_capacity(emb.dim() * 10 + 16);
        line.push_str(vocab.word(id));
        for v in emb.input_row(id) {
            line.push(' ');
            line.push_str(&format!("{v:.6}"));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads an embedding file, validating the header against the actual rows.
pub fn read_text(path: &Path) -> Result<LoadedEmbedding> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected <vocab_size> <dim> header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_ascii_whitespace();
    let (v, d, rest) = (parts.next(), parts.next(), parts.next());
    let (Some(v), Some(d), None) = (v, d, rest) else {
        return Err(Error::parse(path, 1, "expected header <vocab_size> <dim>"));
    };
    let vocab_size: usize = v
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid vocab size {v:?}")))?;
    let dim: usize = d
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid dimension {d:?}")))?;
    if dim == 0 {
        return Err(Error::parse(path, 1, "dimension must be at least 1"));
    }

    let mut words: Vec<String> = Vec::with_capacity(vocab_size);
    let mut seen = std::collections::HashSet::new();
    let mut matrix = Vec::with_capacity(vocab_size * dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if words.len() == vocab_size {
            if line.is_empty() {
                continue;
            }
            return Err(Error::parse(
                path,
                lineno,
                format!("header declares {vocab_size} rows but more follow"),
            ));
        }
        let mut fields = line.split(' ');
        let word = fields
            .next()
            .filter(|w| !w.is_empty())
            .ok_or_else(|| Error::parse(path, lineno, "missing word"))?;
        if !seen.insert(word.to_string()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate word {word:?}"),
            ));
        }
        let mut row_len = 0usize;
        for field in fields {
            let value: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("invalid number {field:?}")))?;
            if !value.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-finite value {field:?}"),
                ));
            }
            matrix.push(value);
            row_len += 1;
        }
        if row_len != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {row_len}"),
            ));
        }
        words.push(word.to_string());
    }
    if words.len() != vocab_size {
        return Err(Error::parse(
            path,
            words.len() + 2,
            format!(
                "header declares {vocab_size} rows, file ends after {}",
                words.len()
            ),
        ));
    }
    Ok(LoadedEmbedding { words, matrix, dim })
}
