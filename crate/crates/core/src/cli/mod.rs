//! The `dupforge` command line.

mod commands;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::duptower::{FinetuneOptions, TowerConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::sodd::SoddConfig;
use crate::tokenizer::TrainerConfig;
use crate::train_eval::PretrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dupforge",
    version,
    about = "Duplicate question detection pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with `encoder`, `pretrain`, `tower`, `finetune`, `sodd` and
    /// `tokenizer` sections. Flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse Posts.xml (and PostLinks.xml) into JSON Lines.
    Ingest(IngestArgs),
    /// WordPiece vocabulary training.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Pre-training dataset export and statistics.
    #[command(subcommand)]
    Sod(SodCommand),
    /// Duplicate-detection dataset construction.
    #[command(subcommand)]
    Sodd(SoddCommand),
    /// Two-phase MLM + QA/SP pre-training.
    Pretrain(PretrainArgs),
    /// Fine-tune the duplicate-detection tower.
    FinetuneDup(FinetuneArgs),
    /// Accuracy and F1 of a fine-tuned tower on a SODD split.
    Eval(EvalArgs),
    /// Embedding index construction.
    #[command(subcommand)]
    Index(IndexCommand),
    /// HTTP duplicate lookup service.
    Serve(ServeArgs),
    /// One duplicate lookup against a saved index.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub links: Option<PathBuf>,
    /// Output directory for posts.jsonl and links.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Fail on the first malformed row.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCommand {
    /// Train a WordPiece vocabulary on ingested posts.
    Train(TokenizerTrainArgs),
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    /// posts.jsonl from `ingest`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SodCommand {
    /// CSV export plus binary training records with in-batch negatives.
    Build(SodBuildArgs),
    /// Tag shares and field lengths of the ingested subset.
    Stats(SodStatsArgs),
}

#[derive(Debug, Args)]
pub struct SodBuildArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::sod::DEFAULT_SHARDS)]
    pub shards: usize,
}

#[derive(Debug, Args)]
pub struct SodStatsArgs {
    #[arg(long)]
    pub posts: PathBuf,
    /// Adds token counts when given.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SoddCommand {
    /// Duplicate-detection dataset with similar and random negatives.
    Build(SoddBuildArgs),
}

#[derive(Debug, Args)]
pub struct SoddBuildArgs {
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub links: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_random: Option<usize>,
    #[arg(long)]
    pub n_text: Option<usize>,
    #[arg(long)]
    pub n_tag: Option<usize>,
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Train, dev and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub ratios: Vec<f64>,
    /// Leave out the label-4 question/accepted-answer rows.
    #[arg(long)]
    pub no_accepted_answers: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// records.bin from `sod build`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `tiny` or `mqdd-base`; ignored when the config file has an encoder.
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub phase1_len: Option<usize>,
    #[arg(long)]
    pub phase1_examples: Option<u64>,
    #[arg(long)]
    pub phase2_len: Option<usize>,
    #[arg(long)]
    pub phase2_examples: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Restart from the first record when the file runs out.
    #[arg(long)]
    pub cycle: bool,
    /// Per-step losses as JSON Lines.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pre-trained encoder checkpoint.
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub freeze_encoder: bool,
    /// Metrics history as JSON Lines.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// MetricReport JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Embed every question of a corpus.
    Build(IndexBuildArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// posts.jsonl from `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rank by raw inner product instead of cosine.
    #[arg(long)]
    pub inner_product: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Loaded at start when present; rebuilt indexes are written here.
    #[arg(long)]
    pub index_path: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Question body HTML.
    #[arg(
        long,
        conflicts_with = "html_file",
        required_unless_present = "html_file"
    )]
    pub html: Option<String>,
    #[arg(long)]
    pub html_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Writes the result here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sections of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub encoder: Option<EncoderConfig>,
    pub pretrain: Option<PretrainConfig>,
    pub tower: Option<TowerConfig>,
    pub finetune: Option<FinetuneOptions>,
    pub sodd: Option<SoddConfig>,
    pub tokenizer: Option<TrainerConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let f = File::open(path).map_err(|e| Error::io_at(path, e))?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn init_logging(level: &str) {
    let level = level.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Maps a failure to its exit code: configuration problems are usage
/// errors, everything else is a data error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli.global.log_level);
    init_threads(cli.global.threads);
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}
