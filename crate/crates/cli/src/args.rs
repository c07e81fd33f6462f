use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uttattn::metrics::CollocationScope;
use uttattn::{AttentionMode, Direction, ModelConfig, TokenLevel, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "uttattn", version, about = "Utterance-attention dialogue models: train, generate, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Every run writes its resolved command as `run_config.json` next to its
/// outputs; `replay` re-runs such a file.
#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Train a model and write the best-dev checkpoint and loss histories.
    Train(TrainArgs),
    /// Greedy-decode a response for every session of a test corpus.
    Generate(GenerateArgs),
    /// Compute the metric bundle for a generated-output file.
    Evaluate(EvaluateArgs),
    /// Token-frequency and collocation tables for one or more generated files.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient check on a small synthetic model.
    Gradcheck(GradcheckArgs),
    /// Re-run a command from its `run_config.json`.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// static | dynamic | concat | sum | learnable | attention | max | mean
    #[arg(long, default_value = "static")]
    pub attention: AttentionMode,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// uni | bi
    #[arg(long, default_value = "uni")]
    pub direction: Direction,
    /// off | replace | concat
    #[arg(long = "token-level", default_value = "off")]
    pub token_level: TokenLevel,
    #[arg(long = "pad-len", default_value_t = 15)]
    pub pad_len: usize,
    #[arg(long = "emb-dim", default_value_t = 200)]
    pub emb_dim: usize,
    /// Encoder width; defaults to 512 (static, hybrid) or 1024 (dynamic).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Decoder width; defaults to the encoder width, or 1024 for hybrid
    /// modes when `--hidden` is not given.
    #[arg(long = "decoder-dim")]
    pub decoder_dim: Option<usize>,
    /// Give the decoder its own embedding matrix.
    #[arg(long = "separate-embeddings")]
    pub separate_embeddings: bool,
}

impl ModelArgs {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let full = ModelConfig::full_size(self.attention, vocab_size);
        let hidden = self.hidden.unwrap_or(full.hidden_dim);
        let decoder = self
            .decoder_dim
            .unwrap_or(if self.hidden.is_some() { hidden } else { full.decoder_dim });
        ModelConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden_dim: hidden,
            decoder_dim: decoder,
            attention: self.attention,
            heads: self.heads,
            direction: self.direction,
            token_level: self.token_level,
            pad_len: self.pad_len,
            share_embedding: !self.separate_embeddings,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 80)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "weight-decay", default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long = "clip-norm", default_value_t = 5.0)]
    pub clip_norm: f64,
}

impl OptimArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Tokens seen fewer times map to `<unk>`.
    #[arg(long = "min-count", default_value_t = 1)]
    pub min_count: u64,
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Decoding length cap; defaults to the model's pad length.
    #[arg(long = "max-len")]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lowercase: bool,
    /// Expected architecture; a checkpoint that differs is rejected.
    #[arg(long)]
    pub attention: Option<AttentionMode>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub direction: Option<Direction>,
    #[arg(long = "token-level")]
    pub token_level: Option<TokenLevel>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long = "emb-dim")]
    pub emb_dim: Option<usize>,
    #[arg(long = "pad-len")]
    pub pad_len: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Generated-output file (one JSON record per line).
    #[arg(long)]
    pub generated: PathBuf,
    /// Word vectors: `token v1 ... vd` per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    /// context | last
    #[arg(long = "collocation-scope", default_value = "context")]
    pub collocation_scope: CollocationScope,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// One generated-output file per model; repeat for side-by-side columns.
    #[arg(long, required = true)]
    pub generated: Vec<PathBuf>,
    /// Column names, in the order of `--generated`; defaults to file stems.
    #[arg(long = "name")]
    pub names: Vec<String>,
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long = "collocation-scope", default_value = "context")]
    pub collocation_scope: CollocationScope,
    /// Keep only the most frequent tokens of the shared axis.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Mode to check; ignored with `--all`.
    #[arg(long, default_value = "static")]
    pub attention: AttentionMode,
    /// Run every mode, head count and token-level variant.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value = "uni")]
    pub direction: Direction,
    #[arg(long = "token-level", default_value = "off")]
    pub token_level: TokenLevel,
    #[arg(long = "emb-dim", default_value_t = 8)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub hidden: usize,
    #[arg(long = "decoder-dim")]
    pub decoder_dim: Option<usize>,
    /// Context utterances in the synthetic session.
    #[arg(long, default_value_t = 3)]
    pub utterances: usize,
    #[arg(long = "pad-len", default_value_t = 6)]
    pub pad_len: usize,
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Break the tanh derivative to confirm the check can fail.
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run_config.json` written by an earlier run.
    pub echo: PathBuf,
    /// Output directory; defaults to the directory holding the echo.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
