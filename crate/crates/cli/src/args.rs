use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use culprit::encoder::{EncoderConfig, EncoderInit};

#[derive(Debug, Parser)]
#[command(name = "culprit", version, about = "Rank the code changes most likely to have broken a test")]
pub struct Cli {
    /// `key = value` file whose entries act as flags of the subcommand;
    /// flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled failure records
    Synth(SynthArgs),
    /// Build the four-way corpus and split it
    Build(BuildArgs),
    /// Train the encoder scorer
    Train(TrainArgs),
    /// Evaluate one scorer on a corpus
    Eval(EvalArgs),
    /// Compare scorers on a corpus
    Compare(CompareArgs),
    /// Rank the suspects of one failure
    Identify(IdentifyArgs),
    /// Run the triage service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of records [default: 2500]
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that an error is worded from its culprit's subsystem [default: 0.8]
    #[arg(long)]
    pub signal_strength: Option<f64>,
    /// [default: 12]
    #[arg(long)]
    pub subsystems: Option<usize>,
    /// Identifier words per subsystem [default: 24]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    pub median_message_words: Option<f64>,
    /// Fraction of errors with a long call stack [default: 0.01]
    #[arg(long)]
    pub long_tail_fraction: Option<f64>,
    /// Output directory; receives `records.jsonl`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Labeled records [default: OUT/records.jsonl]
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub ratios: Vec<f64>,
    /// Output directory; receives `corpus.jsonl` and `corpus.{train,validation,test}.jsonl`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// [default: OUT/corpus.train.jsonl]
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// [default: OUT/corpus.validation.jsonl]
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Model directory [default: OUT/model]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory; receives `metrics.txt`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Linear warmup length in steps
    #[arg(long, default_value_t = 0)]
    pub warmup_steps: usize,
    /// Global gradient-norm clipping threshold
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Draw fresh distractors for every epoch
    #[arg(long)]
    pub resample_distractors: bool,
    /// Vocabulary cap, special tokens included
    #[arg(long, default_value_t = culprit::tokenizer::DEFAULT_MAX_VOCABULARY)]
    pub max_vocabulary: usize,
    #[arg(long, default_value_t = EncoderConfig::tiny(0).layer_count)]
    pub layers: usize,
    #[arg(long, default_value_t = EncoderConfig::tiny(0).hidden_width)]
    pub hidden_width: usize,
    #[arg(long, default_value_t = EncoderConfig::tiny(0).attention_heads)]
    pub heads: usize,
    #[arg(long, default_value_t = EncoderConfig::tiny(0).ffn_width)]
    pub ffn_width: usize,
    #[arg(long, default_value_t = EncoderInit::default().std)]
    pub init_std: f64,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub shared_word_embedding: bool,
}

/// A trained model directory or a built-in baseline.
#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Model directory
    #[arg(long, conflicts_with = "scorer", required_unless_present = "scorer")]
    pub model: Option<PathBuf>,
    /// Built-in baseline: lexical, random or constant
    #[arg(long)]
    pub scorer: Option<String>,
    /// Seed of the random baseline
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus file [default: OUT/corpus.test.jsonl]
    #[arg(long, required_unless_present = "out")]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Output directory; receives `eval.txt`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Corpus file [default: OUT/corpus.test.jsonl]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Model directories; repeat or separate with commas
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<PathBuf>,
    /// Seed of the random-agent row
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `comparison.txt` and `comparison.jsonl`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// File holding the error text
    #[arg(long)]
    pub error: PathBuf,
    /// One suspect per line: `{"change_id": ..., "message_text": ...}`
    #[arg(long)]
    pub suspects: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CULPRIT_HOST", default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, env = "CULPRIT_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Event log and snapshot directory
    #[arg(long, env = "CULPRIT_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Model directory to load at start
    #[arg(long, env = "CULPRIT_MODEL")]
    pub model: Option<PathBuf>,
    /// Bearer token for POST /admin/model
    #[arg(long, env = "CULPRIT_ADMIN_TOKEN", hide_env_values = true)]
    pub admin_token: Option<String>,
    /// Events between snapshots; 0 disables snapshots
    #[arg(long, default_value_t = culprit_service::store::DEFAULT_SNAPSHOT_EVERY)]
    pub snapshot_every: u64,
}
