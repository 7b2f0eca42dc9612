//! Command-line front end: vocabulary building, skip-gram training,
//! transfer-weight tables, source-regularized adaptation, and neighbor
//! queries.
//!
//! Every command reads only the files named on its command line and writes
//! only the files it announces; training commands additionally emit a JSON
//! run manifest beside the embedding output so runs can be audited and
//! reproduced.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::builder::ArgGroup;
use clap::{value_parser, Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crossgram::adapt::{self, SourceAlignment};
use crossgram::corpus::{build_vocabulary, Vocabulary};
use crossgram::embio;
use crossgram::eval::EmbeddingIndex;
use crossgram::sgns::{self, TrainingConfig};
use crossgram::trainer::TrainStats;
use crossgram::transfer::{build_transfer_table, read_alphas};
use crossgram::{Error, Result};

/// Steepness grid swept by `alpha --lambda-grid`.
const LAMBDA_GRID: [f64; 7] = [0.1, 1.0, 5.0, 10.0, 20.0, 30.0, 50.0];

#[derive(Parser)]
#[command(
    name = "crossgram",
    version,
    about = "Skip-gram embeddings with cross-domain regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count corpus words and write a vocabulary TSV
    Vocab(VocabArgs),
    /// Train skip-gram embeddings with negative sampling
    Train(TrainOpts),
    /// Compute per-word transfer weights from two vocabularies
    Alpha(AlphaArgs),
    /// Train target embeddings pulled toward frozen source vectors
    Adapt(AdaptArgs),
    /// Print the nearest neighbors of a word
    Neighbors(NeighborsArgs),
}

#[derive(Args)]
struct VocabArgs {
    /// Corpus file: one sentence per line, whitespace-separated tokens
    #[arg(long)]
    input: PathBuf,

    /// Drop words occurring fewer than this many times
    #[arg(long, default_value_t = 5)]
    min_count: u64,

    /// Vocabulary TSV to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainOpts {
    /// Training corpus: one sentence per line, whitespace-separated tokens
    #[arg(long)]
    corpus: PathBuf,

    /// Embedding file to write; the run manifest goes to
    /// <output>.manifest.json
    #[arg(long)]
    output: PathBuf,

    /// Embedding dimensionality
    #[arg(long, default_value_t = 50, value_parser = value_parser!(u64).range(1..))]
    dim: u64,

    /// Maximum context window half-width
    #[arg(long, default_value_t = 5, value_parser = value_parser!(u64).range(1..))]
    window: u64,

    /// Negative samples per training pair
    #[arg(long, default_value_t = 5, value_parser = value_parser!(u64).range(1..))]
    negatives: u64,

    /// Passes over the corpus
    #[arg(long, default_value_t = 5, value_parser = value_parser!(u64).range(1..))]
    epochs: u64,

    /// Initial learning rate; decays linearly to --min-lr over the run
    #[arg(long, default_value_t = 0.025)]
    lr: f64,

    /// Learning-rate floor
    #[arg(long, default_value_t = 1e-4)]
    min_lr: f64,

    /// Drop words occurring fewer than this many times
    #[arg(long, default_value_t = 5)]
    min_count: u64,

    /// RNG seed; one worker plus a fixed seed reproduces a run exactly
    #[arg(long)]
    seed: u64,

    /// Trainer threads; above 1 they share the matrices without locks
    #[arg(long, default_value_t = 1, value_parser = value_parser!(u64).range(1..))]
    workers: u64,

    /// Use the full window width for every center instead of sampling a
    /// width from {1..window} per center
    #[arg(long)]
    fixed_window: bool,

    /// Subsampling threshold for frequent words (off when not given)
    #[arg(long)]
    subsample: Option<f64>,
}

impl TrainOpts {
    fn config(&self, lambda: f64, top_k: u64) -> TrainingConfig {
        TrainingConfig {
            dim: self.dim as usize,
            window: self.window as usize,
            negatives: self.negatives as usize,
            epochs: self.epochs as usize,
            initial_lr: self.lr,
            min_lr: self.min_lr,
            min_count: self.min_count,
            lambda,
            top_k: top_k as usize,
            seed: self.seed,
            workers: self.workers as usize,
            dynamic_window: !self.fixed_window,
            subsample_threshold: self.subsample,
        }
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("weights").required(true).args(["alpha_table", "source_vocab"])))]
struct AdaptArgs {
    #[command(flatten)]
    opts: TrainOpts,

    /// Frozen source-domain embedding file (text format)
    #[arg(long)]
    source_emb: PathBuf,

    /// Precomputed transfer-weight TSV (output of the alpha command)
    #[arg(long)]
    alpha_table: Option<PathBuf>,

    /// Source vocabulary TSV; transfer weights are computed inline against
    /// the corpus vocabulary using --lambda and --top-k
    #[arg(long)]
    source_vocab: Option<PathBuf>,

    /// Sigmoid steepness for inline weight computation
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,

    /// Most-frequent ranks excluded from frequency normalization
    #[arg(long, default_value_t = 20, value_parser = value_parser!(u64).range(1..))]
    top_k: u64,

    /// Start aligned words at their source vectors instead of random
    /// initialization
    #[arg(long)]
    copy_init: bool,
}

#[derive(Args)]
struct AlphaArgs {
    /// Source-domain vocabulary TSV
    #[arg(long)]
    source_vocab: PathBuf,

    /// Target-domain vocabulary TSV
    #[arg(long)]
    target_vocab: PathBuf,

    /// Sigmoid steepness
    #[arg(long, default_value_t = 10.0, conflicts_with = "lambda_grid")]
    lambda: f64,

    /// Sweep steepness over {0.1, 1, 5, 10, 20, 30, 50}, writing one table
    /// per value as <stem>.lambda<value>.<ext>
    #[arg(long)]
    lambda_grid: bool,

    /// Most-frequent ranks excluded from frequency normalization
    #[arg(long, default_value_t = 20, value_parser = value_parser!(u64).range(1..))]
    top_k: u64,

    /// Transfer-weight TSV to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct NeighborsArgs {
    /// Embedding file (text format)
    #[arg(long)]
    emb: PathBuf,

    /// Query word
    #[arg(long)]
    word: String,

    /// Number of neighbors to print
    #[arg(long, default_value_t = 10, value_parser = value_parser!(u64).range(1..))]
    top_n: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Vocab(args) => cmd_vocab(args),
        Command::Train(args) => cmd_train(args),
        Command::Alpha(args) => cmd_alpha(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Neighbors(args) => cmd_neighbors(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_vocab(args: VocabArgs) -> Result<()> {
    let vocab = build_vocabulary(&args.input, args.min_count)?;
    vocab.write_tsv(&args.output)?;
    eprintln!(
        "wrote {} ({} words, {} tokens retained)",
        args.output.display(),
        vocab.len(),
        vocab.retained_token_sum()
    );
    Ok(())
}

fn cmd_train(args: TrainOpts) -> Result<()> {
    let started = Instant::now();
    // plain training has no transfer term; lambda/top_k are inert here
    let config = args.config(0.0, 0);
    let vocab = build_vocabulary(&args.corpus, config.min_count)?;
    let (emb, stats) = sgns::train(&args.corpus, &vocab, &config)?;
    embio::write_text(&emb, &vocab, &args.output)?;

    let mut inputs = BTreeMap::new();
    inputs.insert(display(&args.corpus), sha256_file(&args.corpus)?);
    write_manifest(&ManifestDraft {
        command: "train",
        config: &config,
        inputs,
        output: &args.output,
        vocab_words: vocab.len(),
        stats: &stats,
        regularized: false,
        started,
    })?;
    eprintln!(
        "wrote {} ({} words, dim {})",
        args.output.display(),
        vocab.len(),
        config.dim
    );
    Ok(())
}

fn cmd_alpha(args: AlphaArgs) -> Result<()> {
    let vocab_s = Vocabulary::read_tsv(&args.source_vocab)?;
    let vocab_t = Vocabulary::read_tsv(&args.target_vocab)?;
    let lambdas: &[f64] = if args.lambda_grid {
        &LAMBDA_GRID
    } else {
        std::slice::from_ref(&args.lambda)
    };
    for &lambda in lambdas {
        let table = build_transfer_table(&vocab_s, &vocab_t, lambda, args.top_k as usize)?;
        let path = if args.lambda_grid {
            grid_path(&args.output, lambda)
        } else {
            args.output.clone()
        };
        table.write_tsv(&path)?;
        if table.is_empty() {
            eprintln!(
                "warning: no words shared between source and target vocabularies; \
                 {} has a header only",
                path.display()
            );
        } else {
            eprintln!("wrote {} ({} words)", path.display(), table.len());
        }
    }
    Ok(())
}

/// `out/genia.tsv` -> `out/genia.lambda0.1.tsv` for steepness 0.1.
fn grid_path(base: &Path, lambda: f64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("alpha");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.lambda{lambda}.{ext}"),
        None => format!("{stem}.lambda{lambda}"),
    };
    base.with_file_name(name)
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let started = Instant::now();
    let config = args.opts.config(args.lambda, args.top_k);
    let vocab = build_vocabulary(&args.opts.corpus, config.min_count)?;
    let source = embio::read_text(&args.source_emb)?;
    if source.dim != config.dim {
        return Err(Error::Config(format!(
            "dimension mismatch: training dim {} vs source embedding dim {}",
            config.dim, source.dim
        )));
    }

    let mut inputs = BTreeMap::new();
    inputs.insert(display(&args.opts.corpus), sha256_file(&args.opts.corpus)?);
    inputs.insert(display(&args.source_emb), sha256_file(&args.source_emb)?);

    let alignment = if let Some(table_path) = &args.alpha_table {
        inputs.insert(display(table_path), sha256_file(table_path)?);
        let alphas = read_alphas(table_path)?;
        if alphas.is_empty() {
            eprintln!(
                "warning: {} has no entries; this run reduces to plain training",
                table_path.display()
            );
        }
        SourceAlignment::from_alphas(&alphas, &vocab, &source)?
    } else {
        let vocab_path = args.source_vocab.as_ref().expect("clap group");
        inputs.insert(display(vocab_path), sha256_file(vocab_path)?);
        let vocab_s = Vocabulary::read_tsv(vocab_path)?;
        let table = build_transfer_table(&vocab_s, &vocab, args.lambda, args.top_k as usize)?;
        SourceAlignment::from_table(&table, &vocab, &source)?
    };

    let (emb, stats) = adapt::train_with_alignment(
        &args.opts.corpus,
        &vocab,
        &alignment,
        &config,
        args.copy_init,
    )?;
    embio::write_text(&emb, &vocab, &args.opts.output)?;
    write_manifest(&ManifestDraft {
        command: "adapt",
        config: &config,
        inputs,
        output: &args.opts.output,
        vocab_words: vocab.len(),
        stats: &stats,
        regularized: true,
        started,
    })?;
    eprintln!(
        "wrote {} ({} words, dim {}, {} aligned to source)",
        args.opts.output.display(),
        vocab.len(),
        config.dim,
        alignment.len()
    );
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let emb = embio::read_text(&args.emb)?;
    let index = EmbeddingIndex::new(&emb);
    let neighbors = index.neighbors(&args.word, args.top_n as usize)?;
    for (rank, (word, score)) in neighbors.iter().enumerate() {
        println!("{} {} {:.6}", rank + 1, word, score);
    }
    Ok(())
}

/// Everything a manifest records, before serialization. `wall_time_secs` is
/// measured at write time and serialized last so manifest diffs of repeated
/// runs differ in one line only.
struct ManifestDraft<'a> {
    command: &'a str,
    config: &'a TrainingConfig,
    inputs: BTreeMap<String, String>,
    output: &'a Path,
    vocab_words: usize,
    stats: &'a TrainStats,
    regularized: bool,
    started: Instant,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a TrainingConfig,
    /// Input path -> SHA-256 of its bytes.
    inputs: &'a BTreeMap<String, String>,
    seed: u64,
    outputs: Vec<String>,
    vocab_words: usize,
    tokens_processed: u64,
    pairs_processed: u64,
    epoch_mean_loss: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    epoch_regularizer_loss: Option<&'a [f64]>,
    initial_mean_loss: f64,
    final_mean_loss: f64,
    wall_time_secs: f64,
}

fn write_manifest(draft: &ManifestDraft) -> Result<()> {
    let path = manifest_path(draft.output);
    let manifest = RunManifest {
        command: draft.command,
        config: draft.config,
        inputs: &draft.inputs,
        seed: draft.config.seed,
        outputs: vec![display(draft.output)],
        vocab_words: draft.vocab_words,
        tokens_processed: draft.stats.tokens,
        pairs_processed: draft.stats.pairs,
        epoch_mean_loss: &draft.stats.epoch_mean_loss,
        epoch_regularizer_loss: draft
            .regularized
            .then_some(draft.stats.epoch_regularizer_loss.as_slice()),
        initial_mean_loss: *draft.stats.epoch_mean_loss.first().unwrap_or(&f64::NAN),
        final_mean_loss: *draft.stats.epoch_mean_loss.last().unwrap_or(&f64::NAN),
        wall_time_secs: draft.started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(&path, json + "\n").map_err(|e| io_error(&path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn manifest_path(output: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", output.display()))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_error(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
