//! Cosine similarity and nearest-neighbor queries over loaded embeddings.

use std::collections::HashMap;

use crate::embio::LoadedEmbedding;
use crate::error::{Error, Result};

/// Embeddings with L2-normalized rows for similarity queries. All-zero rows
/// cannot be normalized; they are kept as zero and flagged, and every cosine
/// involving them is 0.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    unit: Vec<f64>,
    dim: usize,
    zero: Vec<bool>,
}

impl EmbeddingIndex {
    pub fn new(emb: &LoadedEmbedding) -> EmbeddingIndex {
        let dim = emb.dim;
        let mut unit = emb.matrix.clone();
        let mut zero = vec![false; emb.len()];
        for (i, flag) in zero.iter_mut().enumerate() {
            let row = &mut unit[i * dim..][..dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                *flag = true;
            } else {
                for v in row {
                    *v /= norm;
                }
            }
        }
        let ids = emb
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        EmbeddingIndex {
            words: emb.words.clone(),
            ids,
            unit,
            dim,
            zero,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    fn id(&self, word: &str) -> Result<usize> {
        self.ids
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.unit[id * self.dim..][..self.dim]
    }

    fn score(&self, a: usize, b: usize) -> f64 {
        if self.zero[a] || self.zero[b] {
            return 0.0;
        }
        let dot: f64 = self
            .row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| x * y)
            .sum();
        dot.clamp(-1.0, 1.0)
    }

    /// Cosine similarity of two words' vectors.
    pub fn cosine(&self, w1: &str, w2: &str) -> Result<f64> {
        Ok(self.score(self.id(w1)?, self.id(w2)?))
    }

    /// The `n` words most similar to `word`, excluding the word itself,
    /// scores non-increasing. Ties broken by word order in the index (the
    /// vocabulary's stable order). Exact brute-force scan.
    pub fn neighbors(&self, word: &str, n: usize) -> Result<Vec<(String, f64)>> {
        let id = self.id(word)?;
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&other| other != id)
            .map(|other| (other, self.score(id, other)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(n);
        Ok(scored
            .into_iter()
            .map(|(other, score)| (self.words[other].clone(), score))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(words: &[&str], dim: usize, rows: &[&[f64]]) -> EmbeddingIndex {
        let emb = LoadedEmbedding {
            words: words.iter().map(|w| w.to_string()).collect(),
            matrix: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            dim,
        };
        EmbeddingIndex::new(&emb)
    }

    #[test]
    fn cosine_identities() {
        let idx = index(
            &["x", "y", "d", "z"],
            2,
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]],
        );
        assert_eq!(idx.cosine("x", "x").unwrap(), 1.0);
        assert_eq!(idx.cosine("x", "y").unwrap(), 0.0);
        assert!((idx.cosine("d", "x").unwrap() - 0.707107).abs() < 1e-6);
        // zero vector is flagged: cosine defined as 0, even with itself
        assert_eq!(idx.cosine("z", "x").unwrap(), 0.0);
        assert_eq!(idx.cosine("z", "z").unwrap(), 0.0);
    }

    #[test]
    fn unknown_word_is_reported() {
        let idx = index(&["x"], 2, &[&[1.0, 0.0]]);
        let err = idx.cosine("x", "missing").unwrap_err();
        assert!(matches!(err, Error::UnknownWord(w) if w == "missing"));
        assert!(idx.neighbors("missing", 1).is_err());
    }

    #[test]
    fn neighbors_match_exhaustive_sort() {
        let idx = index(
            &["q", "a", "b", "c", "d"],
            2,
            &[
                &[1.0, 0.0],
                &[0.9, 0.1],
                &[0.0, 1.0],
                &[-1.0, 0.0],
                &[0.5, 0.5],
            ],
        );
        let got = idx.neighbors("q", 4).unwrap();
        // oracle: independent cosine + sort over the raw rows
        let raw: Vec<(&str, &[f64])> = vec![
            ("a", &[0.9, 0.1]),
            ("b", &[0.0, 1.0]),
            ("c", &[-1.0, 0.0]),
            ("d", &[0.5, 0.5]),
        ];
        let cos = |v: &[f64]| {
            let q = [1.0, 0.0];
            let dot: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / n
        };
        let mut oracle: Vec<(&str, f64)> = raw.iter().map(|(w, v)| (*w, cos(v))).collect();
        oracle.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        assert_eq!(got.len(), 4);
        for ((gw, gs), (ow, os)) in got.iter().zip(oracle) {
            assert_eq!(gw, ow);
            assert!((gs - os).abs() < 1e-12);
        }
        // scores non-increasing
        assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn neighbors_truncation_and_overflow_request() {
        let idx = index(&["a", "b", "c"], 1, &[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(idx.neighbors("a", 1).unwrap().len(), 1);
        // n beyond V-1 returns all other words
        assert_eq!(idx.neighbors("a", 10).unwrap().len(), 2);
    }

    #[test]
    fn ties_broken_by_index_order() {
        // b and c are duplicates: both cosine 1 with a; b precedes c
        let idx = index(
            &["a", "c2", "b", "c"],
            2,
            &[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 0.0], &[2.0, 0.0]],
        );
        let got = idx.neighbors("a", 3).unwrap();
        assert_eq!(got[0].0, "b");
        assert_eq!(got[1].0, "c");
        assert_eq!(got[0].1, 1.0);
        assert_eq!(got[1].1, 1.0);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let idx = index(&["a", "b"], 3, &[&[3.0, 4.0, 0.0], &[0.1, 0.2, -0.3]]);
        for id in 0..2 {
            let n: f64 = idx.row(id).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
