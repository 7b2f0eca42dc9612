//! The SGD training loop shared by plain skip-gram training and
//! source-regularized adaptation.
//!
//! Per epoch, the corpus is cut into one byte segment per worker; workers
//! stream pairs from their segment and update the shared matrices without
//! locks. A shared atomic token counter drives the linear learning-rate
//! decay. With one worker the whole run is a deterministic function of the
//! seed.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha20Rng;

use crate::adapt::{self, SourceAlignment};
use crate::corpus::{PairStream, StreamOptions, Vocabulary};
use crate::error::{Error, Result};
use crate::hogwild::Hogwild;
use crate::sgns::{self, EmbeddingMatrix, NegativeSampler, TrainingConfig, UpdateScratch};

/// Pairs per loss-accounting block; loss curves are tracked at this
/// granularity to keep stats memory independent of corpus size.
const LOSS_BLOCK: u64 = 4096;

/// Linear decay from `initial_lr` to `min_lr` over `total_tokens` processed
/// tokens (retained tokens times epochs).
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub total_tokens: u64,
}

impl LrSchedule {
    pub fn lr(&self, processed_tokens: u64) -> f64 {
        if self.total_tokens == 0 {
            return self.min_lr;
        }
        let remaining = 1.0 - processed_tokens as f64 / self.total_tokens as f64;
        (self.initial_lr * remaining).max(self.min_lr)
    }
}

/// Counters and loss curves from one training run.
#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Pairs trained on (updates applied).
    pub pairs: u64,
    /// Retained tokens consumed over all epochs.
    pub tokens: u64,
    /// Mean pair loss per epoch.
    pub epoch_mean_loss: Vec<f64>,
    /// Regularizer loss evaluated at the end of each epoch; empty for plain
    /// training.
    pub epoch_regularizer_loss: Vec<f64>,
    /// (loss sum, pair count) per block in processing order.
    blocks: Vec<(f64, u64)>,
}

impl TrainStats {
    pub fn mean_loss(&self) -> f64 {
        let (sum, n) = self
            .blocks
            .iter()
            .fold((0.0, 0u64), |(s, n), &(bs, bn)| (s + bs, n + bn));
        sum / (n.max(1)) as f64
    }

    /// Mean loss over (at least) the first `fraction` of updates, extended to
    /// a whole accounting block.
    pub fn mean_loss_first(&self, fraction: f64) -> f64 {
        Self::mean_prefix(self.blocks.iter(), self.target(fraction))
    }

    /// Mean loss over (at least) the final `fraction` of updates.
    pub fn mean_loss_last(&self, fraction: f64) -> f64 {
        Self::mean_prefix(self.blocks.iter().rev(), self.target(fraction))
    }

    fn target(&self, fraction: f64) -> u64 {
        ((self.pairs as f64 * fraction).ceil() as u64).max(1)
    }

    fn mean_prefix<'a>(blocks: impl Iterator<Item = &'a (f64, u64)>, target: u64) -> f64 {
        let (mut sum, mut n) = (0.0, 0u64);
        for &(bs, bn) in blocks {
            sum += bs;
            n += bn;
            if n >= target {
                break;
            }
        }
        sum / (n.max(1)) as f64
    }
}

#[derive(Default)]
struct SegmentStats {
    loss_sum: f64,
    pairs: u64,
    blocks: Vec<(f64, u64)>,
    cur_sum: f64,
    cur_n: u64,
}

impl SegmentStats {
    fn record(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.pairs += 1;
        self.cur_sum += loss;
        self.cur_n += 1;
        if self.cur_n == LOSS_BLOCK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.cur_n > 0 {
            self.blocks.push((self.cur_sum, self.cur_n));
            self.cur_sum = 0.0;
            self.cur_n = 0;
        }
    }
}

/// Distinct deterministic RNG streams per (seed, epoch, worker, purpose).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SALT: u64 = 1;
const NEGATIVES_SALT: u64 = 2;

fn derived_seed(seed: u64, epoch: u64, worker: u64, salt: u64) -> u64 {
    mix(seed ^ mix(epoch ^ mix(worker ^ mix(salt))))
}

pub(crate) fn run(
    corpus: &Path,
    vocab: &Vocabulary,
    config: &TrainingConfig,
    alignment: Option<&SourceAlignment>,
    copy_init: bool,
) -> Result<(EmbeddingMatrix, TrainStats)> {
    config.validate()?;
    let mut emb = sgns::init_embeddings(vocab, config.dim, config.seed);
    if copy_init {
        if let Some(al) = alignment {
            al.copy_into(&mut emb);
        }
    }
    let sampler = sgns::build_negative_sampler(vocab);
    let schedule = LrSchedule {
        initial_lr: config.initial_lr,
        min_lr: config.min_lr,
        total_tokens: config.epochs as u64 * vocab.retained_token_sum(),
    };
    let file_len = std::fs::metadata(corpus)
        .map_err(|e| Error::io(corpus, e))?
        .len();
    let progress = AtomicU64::new(0);

    let shared = Hogwild::new(emb);
    let mut stats = TrainStats {
        pairs: 0,
        tokens: 0,
        epoch_mean_loss: Vec::with_capacity(config.epochs),
        epoch_regularizer_loss: Vec::new(),
        blocks: Vec::new(),
    };

    for epoch in 0..config.epochs as u64 {
        let workers = config.workers as u64;
        let mut results: Vec<Result<SegmentStats>> = Vec::with_capacity(config.workers);
        if workers == 1 {
            let mut handle = shared.clone();
            results.push(run_segment(
                &mut handle,
                corpus,
                vocab,
                &sampler,
                &schedule,
                &progress,
                alignment,
                config,
                epoch,
                0,
                0,
                u64::MAX,
            ));
        } else {
            std::thread::scope(|scope| {
                let mut handles = Vec::with_capacity(config.workers);
                for worker in 0..workers {
                    let start = file_len * worker / workers;
                    let end = if worker + 1 == workers {
                        u64::MAX
                    } else {
                        file_len * (worker + 1) / workers
                    };
                    let mut handle = shared.clone();
                    let (sampler, schedule, progress) = (&sampler, &schedule, &progress);
                    handles.push(scope.spawn(move || {
                        run_segment(
                            &mut handle,
                            corpus,
                            vocab,
                            sampler,
                            schedule,
                            progress,
                            alignment,
                            config,
                            epoch,
                            worker,
                            start,
                            end,
                        )
                    }));
                }
                for handle in handles {
                    results.push(handle.join().expect("training worker panicked"));
                }
            });
        }

        let mut epoch_sum = 0.0;
        let mut epoch_pairs = 0u64;
        for result in results {
            let seg = result.map_err(|e| Error::TrainAborted {
                tokens_processed: progress.load(Ordering::Relaxed),
                source: Box::new(e),
            })?;
            epoch_sum += seg.loss_sum;
            epoch_pairs += seg.pairs;
            stats.pairs += seg.pairs;
            stats.blocks.extend(seg.blocks);
        }
        stats
            .epoch_mean_loss
            .push(epoch_sum / (epoch_pairs.max(1)) as f64);
        if let Some(al) = alignment {
            stats
                .epoch_regularizer_loss
                .push(adapt::regularizer_loss(&shared, al));
        }
    }

    stats.tokens = progress.load(Ordering::Relaxed);
    Ok((shared.into_inner(), stats))
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    emb: &mut EmbeddingMatrix,
    corpus: &Path,
    vocab: &Vocabulary,
    sampler: &NegativeSampler,
    schedule: &LrSchedule,
    progress: &AtomicU64,
    alignment: Option<&SourceAlignment>,
    config: &TrainingConfig,
    epoch: u64,
    worker: u64,
    start: u64,
    end: u64,
) -> Result<SegmentStats> {
    let opts = StreamOptions {
        window: config.window,
        dynamic_window: config.dynamic_window,
        subsample_threshold: config.subsample_threshold,
    };
    let stream_rng: ChaCha20Rng =
        rand::SeedableRng::seed_from_u64(derived_seed(config.seed, epoch, worker, STREAM_SALT));
    let mut neg_rng: ChaCha20Rng =
        rand::SeedableRng::seed_from_u64(derived_seed(config.seed, epoch, worker, NEGATIVES_SALT));
    let mut stream = PairStream::open_segment(corpus, vocab, opts, stream_rng, start, end)?;

    let mut scratch = UpdateScratch::new(config.dim);
    let mut negatives: Vec<usize> = Vec::with_capacity(config.negatives);
    let mut stats = SegmentStats::default();
    let mut reported = 0u64;

    while let Some(item) = stream.next() {
        let pair = item?;
        let tokens = stream.tokens_read();
        if tokens > reported {
            progress.fetch_add(tokens - reported, Ordering::Relaxed);
            reported = tokens;
        }
        let lr = schedule.lr(progress.load(Ordering::Relaxed));

        negatives.clear();
        for _ in 0..config.negatives {
            match sampler.sample_excluding(&mut neg_rng, pair.context) {
                Some(n) => negatives.push(n),
                None => break,
            }
        }
        let loss =
            sgns::apply_pair_update(emb, pair.center, pair.context, &negatives, lr, &mut scratch);
        stats.record(loss);
        if let Some(al) = alignment {
            adapt::regularizer_pair_step(emb, al, pair.center, lr);
        }
    }
    let tokens = stream.tokens_read();
    if tokens > reported {
        progress.fetch_add(tokens - reported, Ordering::Relaxed);
    }
    stats.flush();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_decays_linearly_to_the_floor() {
        let s = LrSchedule {
            initial_lr: 0.025,
            min_lr: 1e-4,
            total_tokens: 1000,
        };
        assert_eq!(s.lr(0), 0.025);
        assert!((s.lr(500) - 0.0125).abs() < 1e-15);
        assert_eq!(s.lr(1000), 1e-4);
        assert_eq!(s.lr(5000), 1e-4);
        for t in (0..=2000).step_by(10) {
            let lr = s.lr(t);
            assert!((1e-4..=0.025).contains(&lr));
        }
        // non-increasing along the run
        for t in 0..1999 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }

    #[test]
    fn loss_deciles_weight_ragged_blocks() {
        let stats = TrainStats {
            pairs: 10,
            tokens: 0,
            epoch_mean_loss: vec![],
            epoch_regularizer_loss: vec![],
            // three blocks: 4 pairs of loss 4.0, 4 of 2.0, 2 of 1.0
            blocks: vec![(16.0, 4), (8.0, 4), (2.0, 2)],
        };
        assert!((stats.mean_loss() - 2.6).abs() < 1e-12);
        // first 10% of 10 pairs = 1 pair, extended to the first whole block
        assert!((stats.mean_loss_first(0.1) - 4.0).abs() < 1e-12);
        assert!((stats.mean_loss_last(0.1) - 1.0).abs() < 1e-12);
        // first half: 5 pairs -> two blocks (8 pairs)
        assert!((stats.mean_loss_first(0.5) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for epoch in 0..4 {
            for worker in 0..4 {
                for salt in [STREAM_SALT, NEGATIVES_SALT] {
                    assert!(seen.insert(derived_seed(99, epoch, worker, salt)));
                }
            }
        }
        assert_eq!(derived_seed(99, 1, 2, 1), derived_seed(99, 1, 2, 1));
        assert_ne!(derived_seed(98, 1, 2, 1), derived_seed(99, 1, 2, 1));
    }
}
