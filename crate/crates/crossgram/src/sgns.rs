//! Skip-gram with negative sampling: parameter storage, the per-pair loss and
//! its exact gradients, and the plain training entry point.
//!
//! Each word has two d-dimensional parameter vectors: an input vector (its
//! representation as a center word, the one that gets exported) and an output
//! vector (its representation as a context word). A training pair pushes the
//! center's input vector toward the true context's output vector and away
//! from k sampled noise words' output vectors.

use std::path::Path;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::trainer::{self, TrainStats};

/// Logistic function in tanh form: branch-free and saturating, so it cannot
/// overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

/// ln(1 + e^x) without overflow; −log σ(x) = softplus(−x).
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hyper-parameters for training runs, shared by plain skip-gram training and
/// source-regularized adaptation (which additionally reads `lambda` and
/// `top_k` when computing transfer weights inline).
#[derive(Debug, Clone, Serialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub min_count: u64,
    pub lambda: f64,
    pub top_k: usize,
    pub seed: u64,
    pub workers: usize,
    pub dynamic_window: bool,
    pub subsample_threshold: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 50,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            min_count: 5,
            lambda: 10.0,
            top_k: 20,
            seed: 1,
            workers: 1,
            dynamic_window: true,
            subsample_threshold: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg.to_string()));
        if self.dim < 1 {
            return fail("dim must be at least 1");
        }
        if self.window < 1 {
            return fail("window must be at least 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be at least 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.workers < 1 {
            return fail("workers must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("initial learning rate must be positive");
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.initial_lr) {
            return fail("min learning rate must satisfy 0 <= min_lr <= initial_lr");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be non-negative");
        }
        if let Some(t) = self.subsample_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return fail("subsample threshold must be positive");
            }
        }
        Ok(())
    }
}

/// Input and output vectors for one vocabulary, stored row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    input: Vec<f64>,
    output: Vec<f64>,
    dim: usize,
    vocab_hash: u64,
}

impl EmbeddingMatrix {
    pub fn vocab_size(&self) -> usize {
        self.input.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Checksum of the vocabulary this matrix was created for. Persistence
    /// and adaptation refuse to combine a matrix with a different vocabulary.
    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    fn check(&self, id: usize) {
        assert!(
            id < self.vocab_size(),
            "word id {id} out of range for vocabulary of {}",
            self.vocab_size()
        );
    }

    pub fn input_row(&self, id: usize) -> &[f64] {
        self.check(id);
        &self.input[id * self.dim..][..self.dim]
    }

    pub fn output_row(&self, id: usize) -> &[f64] {
        self.check(id);
        &self.output[id * self.dim..][..self.dim]
    }

    pub fn input_row_mut(&mut self, id: usize) -> &mut [f64] {
        self.check(id);
        &mut self.input[id * self.dim..][..self.dim]
    }

    pub fn output_row_mut(&mut self, id: usize) -> &mut [f64] {
        self.check(id);
        &mut self.output[id * self.dim..][..self.dim]
    }

    /// True when every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|v| v.is_finite())
    }
}

/// Fresh parameters: input vectors i.i.d. uniform in (−0.5/dim, +0.5/dim),
/// output vectors zero. Identical (vocab, dim, seed) give identical matrices.
pub fn init_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingMatrix {
    assert!(dim >= 1, "dim must be at least 1");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = vocab.len() * dim;
    let input = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(Open01);
            (x - 0.5) / dim as f64
        })
        .collect();
    EmbeddingMatrix {
        input,
        output: vec![0.0; n],
        dim,
        vocab_hash: vocab.checksum(),
    }
}

/// Noise distribution for negative sampling: P(w) ∝ count(w)^0.75, drawn by
/// binary search over the cumulative distribution.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
    power: f64,
}

pub fn build_negative_sampler(vocab: &Vocabulary) -> NegativeSampler {
    let power = 0.75;
    let mut cumulative: Vec<f64> = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for (_, count) in vocab.iter() {
        acc += (count as f64).powf(power);
        cumulative.push(acc);
    }
    for c in &mut cumulative {
        *c /= acc;
    }
    NegativeSampler { cumulative, power }
}

impl NegativeSampler {
    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Probability of drawing `id`.
    pub fn probability(&self, id: usize) -> f64 {
        let prev = if id == 0 {
            0.0
        } else {
            self.cumulative[id - 1]
        };
        self.cumulative[id] - prev
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let x: f64 = rng.gen();
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }

    /// Draws a word distinct from `exclude`, resampling on collision. Returns
    /// None only for a single-word vocabulary whose sole word is excluded, in
    /// which case no legal draw exists.
    pub fn sample_excluding(&self, rng: &mut impl Rng, exclude: usize) -> Option<usize> {
        if self.cumulative.len() == 1 {
            return (exclude != 0).then_some(0);
        }
        loop {
            let id = self.sample(rng);
            if id != exclude {
                return Some(id);
            }
        }
    }
}

/// Minimized loss for one training pair: −log σ(w·c) − Σ_i log σ(−w·c′_i),
/// where `center` is w, `context` is c and `negatives` are the c′_i. Safe for
/// dot products up to ±700 and beyond (softplus form, no overflow).
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = softplus(-dot(center, context));
    for neg in negatives {
        loss += softplus(dot(center, neg));
    }
    loss
}

/// Gradient of [`pair_loss`] with respect to every parameter vector.
#[derive(Debug, Clone)]
pub struct PairGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let g_pos = sigmoid(dot(center, context)) - 1.0;
    let d_context: Vec<f64> = center.iter().map(|w| g_pos * w).collect();
    let mut d_center: Vec<f64> = context.iter().map(|c| g_pos * c).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let g = sigmoid(dot(center, neg));
        for (acc, n) in d_center.iter_mut().zip(*neg) {
            *acc += g * n;
        }
        d_negatives.push(center.iter().map(|w| g * w).collect());
    }
    PairGradients {
        center: d_center,
        context: d_context,
        negatives: d_negatives,
    }
}

/// Reusable buffers for the update kernel; one per worker.
pub(crate) struct UpdateScratch {
    grad: Vec<f64>,
    gs: Vec<f64>,
}

impl UpdateScratch {
    pub fn new(dim: usize) -> Self {
        UpdateScratch {
            grad: vec![0.0; dim],
            gs: Vec::new(),
        }
    }
}

/// One exact gradient-descent step on [`pair_loss`] with the negatives given.
/// All gradients are evaluated at the pre-update parameters and applied
/// together (accumulate-then-apply), so a single step equals `-lr` times the
/// gradient even when ids repeat. Returns the pre-update loss.
pub(crate) fn apply_pair_update(
    emb: &mut EmbeddingMatrix,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut UpdateScratch,
) -> f64 {
    emb.check(center);
    emb.check(context);
    let dim = emb.dim;
    let EmbeddingMatrix { input, output, .. } = emb;
    let w0 = center * dim;
    let w = &input[w0..][..dim];

    scratch.grad.fill(0.0);
    scratch.gs.clear();

    let c = &output[context * dim..][..dim];
    let d = dot(w, c);
    let mut loss = softplus(-d);
    let g = sigmoid(d) - 1.0;
    scratch.gs.push(g);
    for (acc, ci) in scratch.grad.iter_mut().zip(c) {
        *acc += g * ci;
    }
    for &n in negatives {
        let cn = &output[n * dim..][..dim];
        let d = dot(w, cn);
        loss += softplus(d);
        let g = sigmoid(d);
        scratch.gs.push(g);
        for (acc, ni) in scratch.grad.iter_mut().zip(cn) {
            *acc += g * ni;
        }
    }

    let step = |row: &mut [f64], g: f64, w: &[f64]| {
        for (ri, wi) in row.iter_mut().zip(w) {
            *ri -= lr * g * wi;
        }
    };
    step(&mut output[context * dim..][..dim], scratch.gs[0], w);
    for (i, &n) in negatives.iter().enumerate() {
        step(&mut output[n * dim..][..dim], scratch.gs[i + 1], w);
    }
    let w = &mut input[w0..][..dim];
    for (wi, gi) in w.iter_mut().zip(&scratch.grad) {
        *wi -= lr * gi;
    }
    loss
}

/// Draws `k` negatives for (center, context) from `sampler` (skipping the
/// true context) and applies one gradient step at rate `lr`. Returns the
/// pre-update loss.
pub fn sgd_pair_update(
    emb: &mut EmbeddingMatrix,
    center: usize,
    context: usize,
    sampler: &NegativeSampler,
    k: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> f64 {
    let mut negatives = Vec::with_capacity(k);
    for _ in 0..k {
        match sampler.sample_excluding(rng, context) {
            Some(n) => negatives.push(n),
            None => break,
        }
    }
    let mut scratch = UpdateScratch::new(emb.dim());
    apply_pair_update(emb, center, context, &negatives, lr, &mut scratch)
}

/// Trains embeddings on `corpus_path` for `config.epochs` passes with
/// linearly decaying learning rate. One worker is exactly deterministic for a
/// fixed seed; more workers trade determinism for speed (lock-free shared
/// updates).
pub fn train(
    corpus_path: &Path,
    vocab: &Vocabulary,
    config: &TrainingConfig,
) -> Result<(EmbeddingMatrix, TrainStats)> {
    trainer::run(corpus_path, vocab, config, None, false)
}
