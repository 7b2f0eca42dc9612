//! Cross-domain word statistics.
//!
//! For every word shared by a source and a target vocabulary we compute a
//! transfer weight `alpha = sigmoid(lambda * phi)`, where `phi` is the
//! Sørensen-Dice harmonic mean of the word's normalized frequencies in the
//! two domains. Words frequent in both domains get `alpha` near 1 and are
//! pulled hard toward their source vectors during adaptation; words frequent
//! in only one domain stay near the 0.5 floor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::sgns::sigmoid;

/// Per-word statistics for one shared word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferEntry {
    /// Token count in the source corpus.
    pub count_s: u64,
    /// Token count in the target corpus.
    pub count_t: u64,
    /// Normalized frequency in the source domain.
    pub norm_s: f64,
    /// Normalized frequency in the target domain.
    pub norm_t: f64,
    /// Harmonic mean of `norm_s` and `norm_t`.
    pub phi: f64,
    /// Regularization strength `sigmoid(lambda * phi)`.
    pub alpha: f64,
}

/// Transfer weights for every word in the intersection of two vocabularies.
#[derive(Debug, Clone)]
pub struct TransferTable {
    entries: BTreeMap<String, TransferEntry>,
    lambda: f64,
    top_k: usize,
}

/// Frequency of every retained word relative to the most frequent word
/// outside the top `top_k`, indexed by word id.
///
/// The denominator is the count at stable-order rank `top_k` (zero-indexed),
/// so the `top_k` most frequent words themselves get values above 1. This
/// keeps ubiquitous words from compressing everything else toward 0 while
/// still assigning them a (large) frequency score.
pub fn normalized_frequencies(vocab: &Vocabulary, top_k: usize) -> Result<Vec<f64>> {
    if vocab.len() <= top_k {
        return Err(Error::config(format!(
            "vocabulary retains only {} words; frequency normalization needs more than top_k={}",
            vocab.len(),
            top_k
        )));
    }
    let denom = vocab.count(top_k) as f64;
    Ok((0..vocab.len())
        .map(|id| vocab.count(id) as f64 / denom)
        .collect())
}

/// Sørensen-Dice harmonic mean of two positive frequency scores. High only
/// when the word is frequent in both domains.
pub fn significance(norm_s: f64, norm_t: f64) -> f64 {
    debug_assert!(norm_s > 0.0 && norm_t > 0.0);
    2.0 * norm_s * norm_t / (norm_s + norm_t)
}

/// Regularization strength for a word with significance `phi` under scaling
/// `lambda`. Always in (0, 1); at least 0.5 whenever both arguments are
/// non-negative, since sigmoid(0) = 0.5.
pub fn transfer_weight(phi: f64, lambda: f64) -> f64 {
    sigmoid(lambda * phi)
}

/// Computes a [`TransferTable`] over the words present in both vocabularies.
pub fn build_transfer_table(
    vocab_s: &Vocabulary,
    vocab_t: &Vocabulary,
    lambda: f64,
    top_k: usize,
) -> Result<TransferTable> {
    fn label(domain: &str, e: Error) -> Error {
        match e {
            Error::Config(msg) => Error::config(format!("{domain} vocabulary: {msg}")),
            other => other,
        }
    }
    let norm_s = normalized_frequencies(vocab_s, top_k).map_err(|e| label("source", e))?;
    let norm_t = normalized_frequencies(vocab_t, top_k).map_err(|e| label("target", e))?;

    let mut entries = BTreeMap::new();
    for (word, count_t) in vocab_t.iter() {
        let Some(sid) = vocab_s.id(word) else {
            continue;
        };
        let tid = vocab_t.id(word).unwrap();
        let phi = significance(norm_s[sid], norm_t[tid]);
        entries.insert(
            word.to_string(),
            TransferEntry {
                count_s: vocab_s.count(sid),
                count_t,
                norm_s: norm_s[sid],
                norm_t: norm_t[tid],
                phi,
                alpha: transfer_weight(phi, lambda),
            },
        );
    }
    Ok(TransferTable {
        entries,
        lambda,
        top_k,
    })
}

impl TransferTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn get(&self, word: &str) -> Option<&TransferEntry> {
        self.entries.get(word)
    }

    /// Entries in word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &TransferEntry)> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e))
    }

    /// (word, alpha) pairs in word order; the part adaptation consumes.
    pub fn alphas(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e.alpha))
    }

    /// Writes the table as TSV: a fixed header, then one row per word with
    /// reals at 6 decimal places, sorted by descending alpha and then word.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        writeln!(out, "word\tf_s\tf_t\tF_s\tF_t\tphi\talpha").map_err(io_err)?;
        let mut rows: Vec<(&String, &TransferEntry)> = self.entries.iter().collect();
        rows.sort_by(|a, b| {
            b.1.alpha
                .partial_cmp(&a.1.alpha)
                .unwrap()
                .then_with(|| a.0.cmp(b.0))
        });
        for (word, e) in rows {
            writeln!(
                out,
                "{word}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                e.count_s, e.count_t, e.norm_s, e.norm_t, e.phi, e.alpha
            )
            .map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Reads (word, alpha) pairs back from a TSV written by
/// [`TransferTable::write_tsv`]. Only the alpha column is trusted downstream;
/// the remaining columns are validated for shape. Alphas are accepted in
/// (0, 1]: the upper bound is reachable through 6-decimal quantization of
/// values just below 1.
pub fn read_alphas(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected transfer table header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    if header != "word\tf_s\tf_t\tF_s\tF_t\tphi\talpha" {
        return Err(Error::parse(path, 1, "unrecognized transfer table header"));
    }

    let mut seen = std::collections::HashSet::new();
    let mut alphas = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        let word = fields[0];
        for value in &fields[1..] {
            let parsed: f64 = value
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("invalid number {value:?}")))?;
            if !parsed.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-finite value {value:?}"),
                ));
            }
        }
        let alpha: f64 = fields[6].parse().unwrap();
        if alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("alpha {alpha} outside (0, 1]"),
            ));
        }
        if !seen.insert(word.to_string()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate word {word:?}"),
            ));
        }
        alphas.push((word.to_string(), alpha));
    }
    Ok(alphas)
}
