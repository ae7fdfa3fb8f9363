//! Command-line entry points: corpus preparation, toy-task
//! generation, language-model and recognizer training, decoding,
//! scoring, and result-curve export.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "augasr", version, about = "Speech recognition with text-based augmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an augmenting corpus from raw text.
    Prepare(PrepareArgs),
    /// Generate a synthetic toy corpus.
    GenToy(GenToyArgs),
    /// Train the character language model used for fusion.
    LmTrain(LmTrainArgs),
    /// Train a recognizer.
    Train(TrainArgs),
    /// Beam-decode a manifest, optionally with language-model fusion.
    Decode(DecodeArgs),
    /// Score hypotheses against references (CER/WER).
    Score(ScoreArgs),
    /// Merge run summaries into a CSV curve.
    ExportCurve(ExportCurveArgs),
}

#[derive(clap::Args)]
struct PrepareArgs {
    /// Raw text, one sentence per line.
    #[arg(long)]
    text: PathBuf,
    /// Pronunciation lexicon (word<TAB>ph1 ph2 ...).
    #[arg(long)]
    lexicon: PathBuf,
    /// Speech training manifest (charset and duration statistics).
    #[arg(long)]
    speech: PathBuf,
    /// Output corpus path (JSON lines; a .meta.json sidecar is added).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 300)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply durations now instead of at batch time.
    #[arg(long)]
    expand: bool,
}

#[derive(clap::Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 40)]
    n_dev: usize,
    #[arg(long, default_value_t = 5000)]
    n_aug: usize,
    #[arg(long, default_value_t = 20)]
    phonemes: usize,
    #[arg(long, default_value_t = 60)]
    n_words: usize,
    #[arg(long, default_value_t = 40)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 4.0)]
    dur_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    dur_std: f64,
    #[arg(long, default_value_t = 3)]
    min_words: usize,
    #[arg(long, default_value_t = 12)]
    max_words: usize,
    /// Overwrite an existing nonempty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct LmTrainArgs {
    /// Prepared augmenting corpus (preferred: keeps the vocabulary
    /// identical to the recognizer's).
    #[arg(long, conflicts_with = "text")]
    aug: Option<PathBuf>,
    /// Raw text, one sentence per line.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Speech manifest whose characters join the vocabulary.
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, default_value_t = 64)]
    embed: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on training sentences (0 = all).
    #[arg(long, default_value_t = 0)]
    max_sentences: usize,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Config file (JSON or flat key = value); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Speech corpus, `lang=path` or a bare manifest path; repeatable.
    #[arg(long = "speech")]
    speech: Vec<String>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Prepared augmenting corpus.
    #[arg(long)]
    aug: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<augasr::model::ModelKind>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    pretrain_batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on a nested random fraction of the speech corpus.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    fraction_seed: u64,
    /// Resume from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// System name recorded in the run summary.
    #[arg(long, default_value = "system")]
    system: String,
    // model dims
    #[arg(long, default_value_t = 128)]
    enc_hidden: usize,
    #[arg(long, default_value_t = 128)]
    proj_dim: usize,
    #[arg(long, default_value_t = 128)]
    dec_hidden: usize,
    #[arg(long, default_value_t = 64)]
    dec_embed: usize,
    #[arg(long, default_value_t = 128)]
    att_dim: usize,
    #[arg(long, default_value_t = 64)]
    phoneme_embed: usize,
    #[arg(long, default_value_t = 128)]
    aug_hidden: usize,
}

#[derive(clap::Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    /// 0 means an automatic per-utterance cap.
    #[arg(long, default_value_t = 0)]
    max_len: usize,
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Reference transcripts, one per line.
    #[arg(long, requires = "hyp", conflicts_with_all = ["manifest", "hyp_jsonl"])]
    r#ref: Option<PathBuf>,
    /// Hypothesis transcripts, one per line, parallel to --ref.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// Reference manifest; pair with --hyp-jsonl.
    #[arg(long, requires = "hyp_jsonl")]
    manifest: Option<PathBuf>,
    /// Decoded hypotheses (JSON lines with id and hyp fields).
    #[arg(long)]
    hyp_jsonl: Option<PathBuf>,
    /// Write a run summary JSON for export-curve.
    #[arg(long)]
    summary_out: Option<PathBuf>,
    #[arg(long, default_value = "system")]
    system: String,
    #[arg(long, default_value_t = 0.0)]
    hours: f64,
}

#[derive(clap::Args)]
struct ExportCurveArgs {
    #[arg(long)]
    out: PathBuf,
    /// Run summary JSON files.
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
}

/// Errors that reflect bad invocations rather than runtime failures.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for help
            e.exit();
        }
    };
    let result = match cli.cmd {
        Cmd::Prepare(a) => commands::prepare(a),
        Cmd::GenToy(a) => commands::gen_toy(a),
        Cmd::LmTrain(a) => commands::lm_train(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Decode(a) => commands::decode(a),
        Cmd::Score(a) => commands::score(a),
        Cmd::ExportCurve(a) => commands::export_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
