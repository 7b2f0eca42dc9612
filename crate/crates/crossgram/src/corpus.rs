//! Corpus streaming: vocabulary construction and (center, context) pair
//! generation.
//!
//! A corpus is UTF-8 text with one sentence per line and tokens separated by
//! ASCII whitespace. Tokenization is pure whitespace splitting with no case
//! folding; any normalization is the caller's preprocessing job. Windows never
//! cross line boundaries.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Word-to-id mapping with per-word token counts for one corpus.
///
/// Retained words are sorted by descending count, ties broken by first
/// occurrence in the corpus. This order is what "top k most frequent" means
/// everywhere downstream, and it is the row order of trained embedding
/// matrices.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Number of retained words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `word`, if retained.
    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Word at `id`. Panics if out of range.
    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Token count of the word at `id`.
    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// All tokens seen at build time, including occurrences of words later
    /// dropped by the `min_count` threshold.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Sum of counts over retained words only.
    pub fn retained_token_sum(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Words in stable order (count descending, then first occurrence).
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words
            .iter()
            .map(String::as_str)
            .zip(self.counts.iter().copied())
    }

    /// Checksum binding derived artifacts (embedding matrices, transfer
    /// tables) to this exact vocabulary.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.total_tokens.to_le_bytes());
        for (word, count) in self.iter() {
            hasher.update((word.len() as u64).to_le_bytes());
            hasher.update(word.as_bytes());
            hasher.update(count.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Writes the vocabulary as TSV: a `#total_tokens=<N>` header line, then
    /// one `word<TAB>count` line per word in stable order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        writeln!(out, "#total_tokens={}", self.total_tokens).map_err(io_err)?;
        for (word, count) in self.iter() {
            writeln!(out, "{word}\t{count}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    /// Reads a vocabulary previously written by [`write_tsv`].
    ///
    /// The file order is taken as the stable order and validated to be
    /// non-increasing in count.
    ///
    /// [`write_tsv`]: Vocabulary::write_tsv
    pub fn read_tsv(path: &Path) -> Result<Vocabulary> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty file, expected #total_tokens header"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let total_tokens: u64 = header
            .strip_prefix("#total_tokens=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected header #total_tokens=<N>"))?;

        let mut words = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut ids = HashMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected word<TAB>count"))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("invalid count {count:?}")))?;
            if count == 0 {
                return Err(Error::parse(path, lineno, "zero count"));
            }
            if let Some(&last) = counts.last() {
                if count > last {
                    return Err(Error::parse(
                        path,
                        lineno,
                        "counts must be non-increasing (not a vocabulary export?)",
                    ));
                }
            }
            if ids.insert(word.to_string(), words.len()).is_some() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("duplicate word {word:?}"),
                ));
            }
            words.push(word.to_string());
            counts.push(count);
        }
        if words.is_empty() {
            return Err(Error::config(format!(
                "vocabulary file {} contains no words",
                path.display()
            )));
        }
        let sum: u64 = counts.iter().sum();
        if total_tokens < sum {
            return Err(Error::parse(
                path,
                1,
                format!("total_tokens={total_tokens} is less than the sum of counts {sum}"),
            ));
        }
        let min_count = counts.iter().copied().min().unwrap();
        Ok(Vocabulary {
            words,
            ids,
            counts,
            total_tokens,
            min_count,
        })
    }
}

/// One skip-gram training example: ids of a center word and one of its
/// context words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub center: usize,
    pub context: usize,
}

/// Builds a [`Vocabulary`] by counting whitespace-delimited tokens in the
/// file at `corpus_path`. Words occurring fewer than `min_count` times are
/// dropped from the mapping but still contribute to `total_tokens`.
pub fn build_vocabulary(corpus_path: &Path, min_count: u64) -> Result<Vocabulary> {
    let file = File::open(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
    let reader = BufReader::new(file);

    // count and first-occurrence rank per word
    let mut table: HashMap<String, (u64, usize)> = HashMap::new();
    let mut total_tokens = 0u64;
    let mut next_rank = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(corpus_path, e))?;
        for token in line.split_ascii_whitespace() {
            total_tokens += 1;
            match table.get_mut(token) {
                Some(entry) => entry.0 += 1,
                None => {
                    table.insert(token.to_string(), (1, next_rank));
                    next_rank += 1;
                }
            }
        }
    }

    let mut entries: Vec<(String, u64, usize)> = table
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_count)
        .map(|(word, (count, rank))| (word, count, rank))
        .collect();
    if entries.is_empty() {
        return Err(Error::config(format!(
            "no words left at min_count={min_count} in {}",
            corpus_path.display()
        )));
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut words = Vec::with_capacity(entries.len());
    let mut counts = Vec::with_capacity(entries.len());
    let mut ids = HashMap::with_capacity(entries.len());
    for (word, count, _) in entries {
        ids.insert(word.clone(), words.len());
        words.push(word);
        counts.push(count);
    }
    Ok(Vocabulary {
        words,
        ids,
        counts,
        total_tokens,
        min_count,
    })
}

/// Windowing and sampling knobs for [`PairStream`].
#[derive(Debug, Clone)]
pub struct StreamOptions {
    /// Maximum context window size.
    pub window: usize,
    /// Draw a per-token effective window uniformly from `1..=window` (the
    /// standard skip-gram window shrinking). When off, every token uses the
    /// full window, which makes streams deterministic in shape for tests.
    pub dynamic_window: bool,
    /// Optional frequent-word subsampling threshold. Off by default; enabling
    /// it randomly discards frequent tokens before windowing and therefore
    /// changes the effective pair multiset.
    pub subsample_threshold: Option<f64>,
}

impl StreamOptions {
    pub fn new(window: usize) -> Self {
        StreamOptions {
            window,
            dynamic_window: true,
            subsample_threshold: None,
        }
    }
}

/// Streams (center, context) pairs from a corpus file.
///
/// Out-of-vocabulary tokens are removed from each line before windowing, so
/// window positions are computed over retained tokens only. For each retained
/// token an effective window `b` is drawn (see [`StreamOptions`]) and pairs
/// are emitted left to right for all in-window neighbors on the same line.
pub struct PairStream<'v> {
    reader: BufReader<File>,
    path: PathBuf,
    vocab: &'v Vocabulary,
    opts: StreamOptions,
    rng: ChaCha20Rng,
    subsample_cut: f64, // threshold * retained token count, precomputed
    bytes_budget: u64,
    bytes_consumed: u64,
    buf: String,
    line: Vec<usize>,
    center: usize,
    in_line: bool,
    ctx_next: usize,
    ctx_last: usize,
    tokens_read: u64,
    done: bool,
}

/// Opens a pair stream over a whole corpus file with dynamic windowing on and
/// subsampling off.
pub fn pair_stream<'v>(
    corpus_path: &Path,
    vocab: &'v Vocabulary,
    window: usize,
    rng: ChaCha20Rng,
) -> Result<PairStream<'v>> {
    PairStream::open(corpus_path, vocab, StreamOptions::new(window), rng)
}

impl<'v> PairStream<'v> {
    pub fn open(
        path: &Path,
        vocab: &'v Vocabulary,
        opts: StreamOptions,
        rng: ChaCha20Rng,
    ) -> Result<Self> {
        Self::open_segment(path, vocab, opts, rng, 0, u64::MAX)
    }

    /// Opens a stream over the byte range `[start, end)` of the file. The
    /// start boundary is snapped forward to the next line break; a line
    /// belongs to the segment containing its first byte. Workers streaming
    /// disjoint segments therefore partition the corpus exactly.
    pub fn open_segment(
        path: &Path,
        vocab: &'v Vocabulary,
        opts: StreamOptions,
        rng: ChaCha20Rng,
        start: u64,
        end: u64,
    ) -> Result<Self> {
        assert!(opts.window >= 1, "window must be >= 1");
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);

        let snapped = if start == 0 {
            0
        } else {
            // Peeking one byte back tells us whether `start` is already a
            // line start (previous byte is a newline).
            reader
                .seek(SeekFrom::Start(start - 1))
                .map_err(|e| Error::io(path, e))?;
            let mut skipped = Vec::new();
            let n = reader
                .read_until(b'\n', &mut skipped)
                .map_err(|e| Error::io(path, e))?;
            start - 1 + n as u64
        };
        let subsample_cut =
            opts.subsample_threshold.unwrap_or(0.0) * vocab.retained_token_sum() as f64;
        Ok(PairStream {
            reader,
            path: path.to_path_buf(),
            vocab,
            opts,
            rng,
            subsample_cut,
            bytes_budget: end.saturating_sub(snapped),
            bytes_consumed: 0,
            buf: String::new(),
            line: Vec::new(),
            center: 0,
            in_line: false,
            ctx_next: 0,
            ctx_last: 0,
            tokens_read: 0,
            done: false,
        })
    }

    /// In-vocabulary tokens consumed so far. Subsampled-away tokens count;
    /// out-of-vocabulary tokens do not. Summed over a full pass this equals
    /// the vocabulary's retained token sum.
    pub fn tokens_read(&self) -> u64 {
        self.tokens_read
    }

    fn load_line(&mut self) -> Result<bool> {
        loop {
            if self.bytes_consumed >= self.bytes_budget {
                return Ok(false);
            }
            self.buf.clear();
            let n = self
                .reader
                .read_line(&mut self.buf)
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                return Ok(false);
            }
            self.bytes_consumed += n as u64;

            self.line.clear();
            for token in self.buf.split_ascii_whitespace() {
                if let Some(id) = self.vocab.id(token) {
                    self.line.push(id);
                }
            }
            if self.opts.subsample_threshold.is_some() && !self.line.is_empty() {
                let cut = self.subsample_cut;
                let vocab = self.vocab;
                let rng = &mut self.rng;
                let mut dropped = 0u64;
                self.line.retain(|&id| {
                    let r = cut / vocab.count(id) as f64;
                    let keep = r.sqrt() + r >= rng.gen::<f64>();
                    if !keep {
                        dropped += 1;
                    }
                    keep
                });
                self.tokens_read += dropped;
            }
            if !self.line.is_empty() {
                return Ok(true);
            }
        }
    }

    /// Advances to the next center token, drawing its effective window, and
    /// returns false at end of segment.
    fn advance_center(&mut self) -> Result<bool> {
        if self.in_line && self.center + 1 < self.line.len() {
            self.center += 1;
        } else {
            if !self.load_line()? {
                return Ok(false);
            }
            self.center = 0;
            self.in_line = true;
        }
        self.tokens_read += 1;
        let b = if self.opts.dynamic_window {
            self.rng.gen_range(1..=self.opts.window)
        } else {
            self.opts.window
        };
        self.ctx_next = self.center.saturating_sub(b);
        self.ctx_last = (self.center + b).min(self.line.len() - 1);
        Ok(true)
    }
}

impl Iterator for PairStream<'_> {
    type Item = Result<TrainingPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            while self.ctx_next <= self.ctx_last && self.in_line {
                let j = self.ctx_next;
                self.ctx_next += 1;
                if j != self.center {
                    return Some(Ok(TrainingPair {
                        center: self.line[self.center],
                        context: self.line[j],
                    }));
                }
            }
            match self.advance_center() {
                Ok(true) => {}
                Ok(false) => {
                    self.done = true;
                    return None;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
