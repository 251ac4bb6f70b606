use std::path::PathBuf;

use ccrec_core::metrics::{CandidateMode, EvalSplit, UserFilter};
use ccrec_core::model::{ModelConfig, Variant};
use ccrec_core::synthgen::GenConfig;
use ccrec_core::training::TrainConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ccrec", version = env!("CCREC_VERSION"), about = "Cross-channel retail recommendation experiments")]
pub struct Cli {
    /// Worker threads for evaluation; enables the parallel ranking path.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-channel interaction log.
    Generate(GenerateArgs),
    /// Split interactions 6:2:2 and attach negative samples.
    Split(SplitArgs),
    /// Train a model on a split directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on both channels.
    Evaluate(EvaluateArgs),
    /// BPR self-match / cross-match probe on overlapping users.
    Probe(ProbeArgs),
    /// Train every model variant with shared seeds.
    Ablate(AblateArgs),
    /// Hyper-parameter grid search, then multi-seed test evaluation.
    Gridsearch(GridArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600)]
    pub n_users: usize,
    #[arg(long, default_value_t = 300)]
    pub n_items: usize,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.4)]
    pub overlap_user_frac: f64,
    #[arg(long, default_value_t = 0.7)]
    pub overlap_item_frac: f64,
    #[arg(long, default_value_t = 20)]
    pub min_interactions: usize,
    #[arg(long, default_value_t = 40)]
    pub max_interactions: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dup_prob: f64,
}

impl GenerateArgs {
    pub fn config(&self) -> GenConfig {
        GenConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            latent_dim: self.latent_dim,
            gamma: self.gamma,
            overlap_user_frac: self.overlap_user_frac,
            overlap_item_frac: self.overlap_item_frac,
            min_interactions: self.min_interactions,
            max_interactions: self.max_interactions,
            dup_prob: self.dup_prob,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Interactions CSV (`user_id,item_id,channel`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub negatives: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 64)]
    pub d_prime: usize,
    #[arg(long, default_value_t = 64)]
    pub clf_hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_cls: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_attn: f64,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            d_prime: self.d_prime,
            clf_hidden: self.clf_hidden,
            lambda_cls: self.lambda_cls,
            lambda_attn: self.lambda_attn,
            variant: self.variant,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

impl OptimArgs {
    pub fn config(&self, seed: u64, parallel: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            patience: self.patience,
            seed,
            parallel_eval: parallel,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split directory written by `ccrec split`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    WithoutPurchased,
    WithPurchased,
}

impl From<ModeArg> for CandidateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WithoutPurchased => CandidateMode::WithoutPurchased,
            ModeArg::WithPurchased => CandidateMode::WithPurchased,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    All,
    OverlappingOnly,
}

impl From<FilterArg> for UserFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::All => UserFilter::All,
            FilterArg::OverlappingOnly => UserFilter::OverlappingOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

impl From<SplitArg> for EvalSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Validation => EvalSplit::Validation,
            SplitArg::Test => EvalSplit::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `ccrec train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value = "without-purchased")]
    pub candidate_mode: ModeArg,
    #[arg(long, value_enum, default_value = "all")]
    pub user_filter: FilterArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Args)]
pub struct BprArgs {
    #[arg(long = "bpr-d", default_value_t = 64)]
    pub d: usize,
    #[arg(long = "bpr-epochs", default_value_t = 50)]
    pub epochs: usize,
    #[arg(long = "bpr-lr", default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long = "bpr-reg", default_value_t = 1e-4)]
    pub reg: f64,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub bpr: BprArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// JSON file with the candidate lists; defaults to the 270-point grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
