//! Regularized adaptation: skip-gram training on a target corpus plus a pull
//! of shared words toward frozen source-domain vectors.
//!
//! The combined minimized objective is the SGNS loss plus
//! `sum over shared words w of alpha_w * ||w_target - w_source||^2`. The
//! penalty gradient fires once per occurrence of an aligned word as a center
//! token, sharing the main loop's decaying learning rate, so frequent shared
//! words are pulled proportionally more often. Only input vectors are
//! regularized; output vectors stay domain-local.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::embio::LoadedEmbedding;
use crate::error::{Error, Result};
use crate::sgns::{EmbeddingMatrix, TrainingConfig};
use crate::trainer::{self, TrainStats};
use crate::transfer::TransferTable;

#[derive(Debug, Clone, Copy)]
struct AlignedWord {
    row: usize,
    alpha: f64,
}

/// Frozen source vectors for the words shared with a target vocabulary,
/// with per-word pull strengths. Indexable by target word id.
#[derive(Debug, Clone)]
pub struct SourceAlignment {
    dim: usize,
    /// Compact row-major copies of the aligned source input vectors.
    source_input: Vec<f64>,
    /// Indexed by target id; None for words without a source counterpart.
    entries: Vec<Option<AlignedWord>>,
}

impl SourceAlignment {
    /// Builds an alignment from (word, alpha) pairs. Every word must exist in
    /// both the target vocabulary and the source embedding.
    pub fn from_alphas(
        alphas: &[(String, f64)],
        vocab_t: &Vocabulary,
        source: &LoadedEmbedding,
    ) -> Result<SourceAlignment> {
        let source_ids: HashMap<&str, usize> = source
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let mut entries = vec![None; vocab_t.len()];
        let mut source_input = Vec::with_capacity(alphas.len() * source.dim);
        for (row, (word, alpha)) in alphas.iter().enumerate() {
            let target_id = vocab_t.id(word).ok_or_else(|| {
                Error::config(format!(
                    "transfer table word {word:?} is not in the target vocabulary"
                ))
            })?;
            let source_id = *source_ids.get(word.as_str()).ok_or_else(|| {
                Error::config(format!(
                    "transfer table word {word:?} is not in the source embedding"
                ))
            })?;
            if !(*alpha > 0.0 && *alpha <= 1.0) {
                return Err(Error::config(format!(
                    "alpha {alpha} for word {word:?} outside (0, 1]"
                )));
            }
            source_input.extend_from_slice(source.row(source_id));
            entries[target_id] = Some(AlignedWord { row, alpha: *alpha });
        }
        Ok(SourceAlignment {
            dim: source.dim,
            source_input,
            entries,
        })
    }

    pub fn from_table(
        table: &TransferTable,
        vocab_t: &Vocabulary,
        source: &LoadedEmbedding,
    ) -> Result<SourceAlignment> {
        let alphas: Vec<(String, f64)> = table.alphas().map(|(w, a)| (w.to_string(), a)).collect();
        Self::from_alphas(&alphas, vocab_t, source)
    }

    /// Number of aligned words.
    pub fn len(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(Option::is_none)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self, target_id: usize) -> Option<f64> {
        self.entries[target_id].map(|e| e.alpha)
    }

    /// Frozen source vector for an aligned target word.
    pub fn source_vector(&self, target_id: usize) -> Option<&[f64]> {
        self.entries[target_id]
            .as_ref()
            .map(|e| &self.source_input[e.row * self.dim..][..self.dim])
    }

    pub fn aligned_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(id, e)| e.map(|_| id))
    }

    /// Replaces the pull strength of one aligned word; alpha 0 disables the
    /// pull entirely. Meant for controlled experiments, not the normal
    /// pipeline (table alphas are never 0).
    pub fn set_alpha(&mut self, target_id: usize, alpha: f64) {
        let entry = self.entries[target_id]
            .as_mut()
            .expect("word is not aligned");
        entry.alpha = alpha;
    }

    /// Digest of the frozen source vectors, for verifying immutability.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        for v in &self.source_input {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Overwrites aligned target input rows with their source vectors
    /// (copy-initialization, for ablation runs).
    pub(crate) fn copy_into(&self, target: &mut EmbeddingMatrix) {
        assert_eq!(self.dim, target.dim());
        for (id, entry) in self.entries.iter().enumerate() {
            if let Some(e) = entry {
                let src = &self.source_input[e.row * self.dim..][..self.dim];
                target.input_row_mut(id).copy_from_slice(src);
            }
        }
    }
}

/// Current value of the penalty term: sum of alpha * squared distance between
/// each aligned target input vector and its frozen source vector.
pub fn regularizer_loss(target: &EmbeddingMatrix, alignment: &SourceAlignment) -> f64 {
    let mut total = 0.0;
    for id in alignment.aligned_ids() {
        let alpha = alignment.alpha(id).unwrap();
        let src = alignment.source_vector(id).unwrap();
        let dist2: f64 = target
            .input_row(id)
            .iter()
            .zip(src)
            .map(|(t, s)| (t - s) * (t - s))
            .sum();
        total += alpha * dist2;
    }
    total
}

/// One penalty gradient step for `center`: if aligned, moves its input vector
/// toward the source vector by `lr * 2 * alpha * (w_target - w_source)`.
/// No-op for unaligned words.
pub fn regularizer_pair_step(
    target: &mut EmbeddingMatrix,
    alignment: &SourceAlignment,
    center: usize,
    lr: f64,
) {
    let Some(entry) = alignment.entries[center] else {
        return;
    };
    let src = &alignment.source_input[entry.row * alignment.dim..][..alignment.dim];
    let coeff = 2.0 * lr * entry.alpha;
    for (t, s) in target.input_row_mut(center).iter_mut().zip(src) {
        *t -= coeff * (*t - s);
    }
}

/// Trains target embeddings with the regularized objective: identical
/// schedule to plain training, with a penalty step after every pair update.
/// `copy_init` starts aligned target vectors at their source values instead
/// of random initialization.
pub fn adapt_train(
    corpus_t: &Path,
    vocab_t: &Vocabulary,
    source: &LoadedEmbedding,
    table: &TransferTable,
    config: &TrainingConfig,
    copy_init: bool,
) -> Result<(EmbeddingMatrix, TrainStats)> {
    if source.dim != config.dim {
        return Err(Error::config(format!(
            "dimension mismatch: training dim {} vs source embedding dim {}",
            config.dim, source.dim
        )));
    }
    let alignment = SourceAlignment::from_table(table, vocab_t, source)?;
    train_with_alignment(corpus_t, vocab_t, &alignment, config, copy_init)
}

/// [`adapt_train`] with a prebuilt (possibly hand-modified) alignment.
pub fn train_with_alignment(
    corpus_t: &Path,
    vocab_t: &Vocabulary,
    alignment: &SourceAlignment,
    config: &TrainingConfig,
    copy_init: bool,
) -> Result<(EmbeddingMatrix, TrainStats)> {
    if alignment.dim != config.dim {
        return Err(Error::config(format!(
            "dimension mismatch: training dim {} vs source embedding dim {}",
            config.dim, alignment.dim
        )));
    }
    trainer::run(corpus_t, vocab_t, config, Some(alignment), copy_init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::sgns::{self, init_embeddings};
    use crate::transfer::build_transfer_table;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::io::Write as _;

    fn corpus_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn bits(emb: &EmbeddingMatrix) -> Vec<u64> {
        (0..emb.vocab_size())
            .flat_map(|id| {
                emb.input_row(id)
                    .iter()
                    .chain(emb.output_row(id))
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Source embedding over `words` with deterministic pseudo-random rows.
    fn fake_source(words: &[&str], dim: usize, seed: u64) -> LoadedEmbedding {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        LoadedEmbedding {
            words: words.iter().map(|w| w.to_string()).collect(),
            matrix: (0..words.len() * dim)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            dim,
        }
    }

    fn toy_vocab(text: &str) -> (tempfile::NamedTempFile, Vocabulary) {
        let f = corpus_file(text);
        let vocab = build_vocabulary(f.path(), 1).unwrap();
        (f, vocab)
    }

    #[test]
    fn alignment_validates_membership_and_range() {
        let (_f, vocab) = toy_vocab("a b c a b a\n");
        let source = fake_source(&["a", "b"], 4, 1);
        let align =
            SourceAlignment::from_alphas(&[("a".into(), 0.9), ("b".into(), 0.6)], &vocab, &source)
                .unwrap();
        assert_eq!(align.len(), 2);
        assert_eq!(align.alpha(vocab.id("a").unwrap()), Some(0.9));
        assert_eq!(align.alpha(vocab.id("c").unwrap()), None);

        let missing_target =
            SourceAlignment::from_alphas(&[("z".into(), 0.9)], &vocab, &source).unwrap_err();
        assert!(missing_target.to_string().contains("target vocabulary"));
        let missing_source =
            SourceAlignment::from_alphas(&[("c".into(), 0.9)], &vocab, &source).unwrap_err();
        assert!(missing_source.to_string().contains("source embedding"));
        let bad_alpha =
            SourceAlignment::from_alphas(&[("a".into(), 1.5)], &vocab, &source).unwrap_err();
        assert!(bad_alpha.to_string().contains("outside"));
    }

    #[test]
    fn regularizer_loss_zero_when_copied() {
        let (_f, vocab) = toy_vocab("a b c a b a\n");
        let source = fake_source(&["a", "b"], 4, 1);
        let align =
            SourceAlignment::from_alphas(&[("a".into(), 0.9), ("b".into(), 0.6)], &vocab, &source)
                .unwrap();
        let mut emb = init_embeddings(&vocab, 4, 7);
        assert!(regularizer_loss(&emb, &align) > 0.0);
        align.copy_into(&mut emb);
        assert_eq!(regularizer_loss(&emb, &align), 0.0);
    }

    #[test]
    fn regularizer_loss_single_unit_offset() {
        let (_f, vocab) = toy_vocab("a b a a\n");
        let dim = 6;
        let source = fake_source(&["a"], dim, 1);
        let align = SourceAlignment::from_alphas(&[("a".into(), 0.5)], &vocab, &source).unwrap();
        let mut emb = init_embeddings(&vocab, dim, 7);
        let id = vocab.id("a").unwrap();
        let row = emb.input_row_mut(id);
        row.copy_from_slice(align.source_vector(id).unwrap());
        row[0] += 1.0;
        assert!((regularizer_loss(&emb, &align) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regularizer_loss_matches_independent_evaluation() {
        let (_f, vocab) = toy_vocab("a b c d e a b c d a\n");
        let dim = 8;
        let source = fake_source(&["a", "c", "e"], dim, 3);
        let align = SourceAlignment::from_alphas(
            &[("a".into(), 0.91), ("c".into(), 0.62), ("e".into(), 0.55)],
            &vocab,
            &source,
        )
        .unwrap();
        let emb = init_embeddings(&vocab, dim, 9);
        // independent evaluation straight from the raw pieces
        let mut expected = 0.0;
        for (word, alpha) in [("a", 0.91), ("c", 0.62), ("e", 0.55)] {
            let tid = vocab.id(word).unwrap();
            let sid = source.words.iter().position(|w| w == word).unwrap();
            let mut d2 = 0.0;
            for i in 0..dim {
                let diff = emb.input_row(tid)[i] - source.matrix[sid * dim + i];
                d2 += diff * diff;
            }
            expected += alpha * d2;
        }
        assert!((regularizer_loss(&emb, &align) - expected).abs() < 1e-12);
    }

    #[test]
    fn pair_step_gradient_matches_finite_differences() {
        let (_f, vocab) = toy_vocab("a b c a\n");
        let dim = 8;
        let source = fake_source(&["a"], dim, 4);
        let align = SourceAlignment::from_alphas(&[("a".into(), 0.73)], &vocab, &source).unwrap();
        let emb = init_embeddings(&vocab, dim, 11);
        let id = vocab.id("a").unwrap();
        let h = 1e-5;
        for i in 0..dim {
            let mut probe = emb.clone();
            probe.input_row_mut(id)[i] += h;
            let up = regularizer_loss(&probe, &align);
            probe.input_row_mut(id)[i] -= 2.0 * h;
            let down = regularizer_loss(&probe, &align);
            let numeric = (up - down) / (2.0 * h);
            let analytic =
                2.0 * 0.73 * (emb.input_row(id)[i] - align.source_vector(id).unwrap()[i]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-5, "coord {i}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn pair_step_closed_form_and_noop() {
        let (_f, vocab) = toy_vocab("a b a a\n");
        let dim = 4;
        let source = fake_source(&["a"], dim, 5);
        let align = SourceAlignment::from_alphas(&[("a".into(), 0.5)], &vocab, &source).unwrap();
        let mut emb = init_embeddings(&vocab, dim, 13);
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();

        let before = bits(&emb);
        regularizer_pair_step(&mut emb, &align, b, 0.5);
        assert_eq!(bits(&emb), before, "unaligned center is a no-op");

        // alpha 0.5, lr 0.5: one step lands exactly halfway to the source
        let w_before: Vec<f64> = emb.input_row(a).to_vec();
        regularizer_pair_step(&mut emb, &align, a, 0.5);
        let src = align.source_vector(a).unwrap();
        for i in 0..dim {
            let expected = 0.5 * (w_before[i] + src[i]);
            assert!((emb.input_row(a)[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_table_reduces_to_plain_training() {
        let (f, vocab) = toy_vocab(&"cats chase mice\ndogs chase cats\n".repeat(25));
        let (_g, vocab_s) = toy_vocab("unrelated source words\n");
        let source_emb = fake_source(&["unrelated", "source", "words"], 6, 2);
        let table = build_transfer_table(&vocab_s, &vocab, 10.0, 0).unwrap();
        assert!(table.is_empty());
        let config = TrainingConfig {
            dim: 6,
            epochs: 2,
            min_count: 1,
            seed: 31,
            ..TrainingConfig::default()
        };
        let (adapted, stats) =
            adapt_train(f.path(), &vocab, &source_emb, &table, &config, false).unwrap();
        let (plain, _) = sgns::train(f.path(), &vocab, &config).unwrap();
        assert_eq!(bits(&adapted), bits(&plain));
        assert_eq!(stats.epoch_regularizer_loss, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_alpha_hook_reduces_to_plain_training() {
        let (f, vocab) = toy_vocab(&"cats chase mice\ndogs chase cats\n".repeat(25));
        let words: Vec<&str> = vocab.iter().map(|(w, _)| w).collect();
        let source_emb = fake_source(&words, 6, 2);
        let alphas: Vec<(String, f64)> = words.iter().map(|w| (w.to_string(), 0.99)).collect();
        let mut align = SourceAlignment::from_alphas(&alphas, &vocab, &source_emb).unwrap();
        for id in align.aligned_ids().collect::<Vec<_>>() {
            align.set_alpha(id, 0.0);
        }
        let config = TrainingConfig {
            dim: 6,
            epochs: 2,
            min_count: 1,
            seed: 31,
            ..TrainingConfig::default()
        };
        let (adapted, _) = train_with_alignment(f.path(), &vocab, &align, &config, false).unwrap();
        let (plain, _) = sgns::train(f.path(), &vocab, &config).unwrap();
        assert_eq!(bits(&adapted), bits(&plain));
    }

    #[test]
    fn aligned_words_absent_from_corpus_leave_run_untouched() {
        // vocabulary carries a word ("ghost") that never occurs in the text
        // streamed here, so its alignment must not perturb anything
        let text = "cats chase mice\ndogs chase cats\n".repeat(25);
        let f = corpus_file(&text);
        let vocab_file = tempfile::NamedTempFile::new().unwrap();
        {
            let with_ghost = format!("{text}ghost ghost ghost\n");
            let g = corpus_file(&with_ghost);
            let vocab = build_vocabulary(g.path(), 1).unwrap();
            vocab.write_tsv(vocab_file.path()).unwrap();
        }
        let vocab = Vocabulary::read_tsv(vocab_file.path()).unwrap();
        let source_emb = fake_source(&["ghost"], 6, 2);
        let align =
            SourceAlignment::from_alphas(&[("ghost".into(), 0.99)], &vocab, &source_emb).unwrap();
        let config = TrainingConfig {
            dim: 6,
            epochs: 2,
            min_count: 1,
            seed: 31,
            ..TrainingConfig::default()
        };
        let (adapted, _) = train_with_alignment(f.path(), &vocab, &align, &config, false).unwrap();
        let (plain, _) = sgns::train(f.path(), &vocab, &config).unwrap();
        assert_eq!(bits(&adapted), bits(&plain));
    }

    #[test]
    fn dimension_mismatch_reports_both_dims() {
        let (f, vocab) = toy_vocab("a b a\n");
        let source_emb = fake_source(&["a"], 9, 2);
        let table = build_transfer_table(&vocab, &vocab, 10.0, 0).unwrap();
        let config = TrainingConfig {
            dim: 6,
            min_count: 1,
            ..TrainingConfig::default()
        };
        let err = adapt_train(f.path(), &vocab, &source_emb, &table, &config, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('6') && msg.contains('9'), "{msg}");
    }

    #[test]
    fn source_vectors_unchanged_by_adaptation() {
        let (f, vocab) = toy_vocab(&"shared words target only\nshared target words\n".repeat(20));
        let words: Vec<&str> = vocab.iter().map(|(w, _)| w).collect();
        let source_emb = fake_source(&words, 5, 6);
        let alphas: Vec<(String, f64)> = words.iter().map(|w| (w.to_string(), 0.9)).collect();
        let align = SourceAlignment::from_alphas(&alphas, &vocab, &source_emb).unwrap();
        let before = align.checksum();
        let config = TrainingConfig {
            dim: 5,
            epochs: 3,
            min_count: 1,
            seed: 17,
            ..TrainingConfig::default()
        };
        let (emb, stats) = train_with_alignment(f.path(), &vocab, &align, &config, false).unwrap();
        assert_eq!(align.checksum(), before);
        assert!(emb.all_finite());
        assert_eq!(stats.epoch_regularizer_loss.len(), 3);
        assert!(stats
            .epoch_regularizer_loss
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn combined_objective_decreases_over_epochs() {
        let (f, vocab) = toy_vocab(&"red apple fruit\ngreen pear fruit\n".repeat(60));
        let words: Vec<&str> = vocab.iter().map(|(w, _)| w).collect();
        let source_emb = fake_source(&words, 8, 21);
        let alphas: Vec<(String, f64)> = words.iter().map(|w| (w.to_string(), 0.8)).collect();
        let align = SourceAlignment::from_alphas(&alphas, &vocab, &source_emb).unwrap();
        let config = TrainingConfig {
            dim: 8,
            epochs: 4,
            min_count: 1,
            seed: 3,
            ..TrainingConfig::default()
        };
        let (_, stats) = train_with_alignment(f.path(), &vocab, &align, &config, false).unwrap();
        let first = stats.epoch_mean_loss[0] + stats.epoch_regularizer_loss[0];
        let last =
            stats.epoch_mean_loss.last().unwrap() + stats.epoch_regularizer_loss.last().unwrap();
        assert!(last < first, "objective {first} -> {last}");
    }

    #[test]
    fn higher_alpha_pulls_closer_over_seeds() {
        // u and v play symmetric roles; only their pull strengths differ
        let text = "u ctx1 ctx2\nv ctx1 ctx2\n".repeat(40);
        let f = corpus_file(&text);
        let vocab = build_vocabulary(f.path(), 1).unwrap();
        let source_emb = fake_source(&["u", "v"], 5, 77);
        let mut dist_u_total = 0.0;
        let mut dist_v_total = 0.0;
        for seed in 0..10 {
            let mut align = SourceAlignment::from_alphas(
                &[("u".into(), 0.5), ("v".into(), 0.5)],
                &vocab,
                &source_emb,
            )
            .unwrap();
            align.set_alpha(vocab.id("u").unwrap(), 0.95);
            align.set_alpha(vocab.id("v").unwrap(), 0.05);
            let config = TrainingConfig {
                dim: 5,
                epochs: 3,
                min_count: 1,
                seed,
                ..TrainingConfig::default()
            };
            let (emb, _) = train_with_alignment(f.path(), &vocab, &align, &config, false).unwrap();
            let dist = |word: &str| -> f64 {
                let id = vocab.id(word).unwrap();
                emb.input_row(id)
                    .iter()
                    .zip(align.source_vector(id).unwrap())
                    .map(|(t, s)| (t - s) * (t - s))
                    .sum()
            };
            dist_u_total += dist("u");
            dist_v_total += dist("v");
        }
        assert!(
            dist_u_total < dist_v_total,
            "u: {dist_u_total}, v: {dist_v_total}"
        );
    }

    #[test]
    fn copy_init_starts_at_source_vectors() {
        let (_f, vocab) = toy_vocab("a b c\n");
        let words: Vec<&str> = vocab.iter().map(|(w, _)| w).collect();
        let source_emb = fake_source(&words, 4, 8);
        let alphas: Vec<(String, f64)> = words.iter().map(|w| (w.to_string(), 0.9)).collect();
        let align = SourceAlignment::from_alphas(&alphas, &vocab, &source_emb).unwrap();
        let mut emb = init_embeddings(&vocab, 4, 1);
        align.copy_into(&mut emb);
        assert_eq!(regularizer_loss(&emb, &align), 0.0);
    }
}
