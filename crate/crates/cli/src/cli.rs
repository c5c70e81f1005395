use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use grouplm_core::embed::Recipe;
use grouplm_core::similarity::Metric;
use grouplm_core::train::DatasetTag;

#[derive(Debug, Parser)]
#[command(
    name = "grouplm",
    version,
    about = "Group social embeddings and socially conditioned masked language models"
)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel passes.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Require bit-reproducible outputs (every code path already is; the
    /// flag is recorded in the manifest).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// JSON file with `synth`, `embed`, `model`, `train` and `split` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-topic membership network and corpus.
    Synth(SynthArgs),
    /// Summarize a membership file.
    Ingest(IngestArgs),
    /// Pairwise common-subscriber counts.
    Intersect(IntersectArgs),
    /// Pairwise group similarity.
    Similarity(SimilarityArgs),
    /// Per-group social embeddings.
    Embed(EmbedArgs),
    /// Train a masked language model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Re-run a recorded command and compare output checksums.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Intersect(_) => "intersect",
            Command::Similarity(_) => "similarity",
            Command::Embed(_) => "embed",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Share of the vocabulary common to all topics.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub docs_per_group: Option<usize>,
    #[arg(long)]
    pub doc_length: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GraphInput {
    #[arg(long)]
    pub memberships: PathBuf,
    /// Drop groups with fewer subscribers before any pairwise work.
    #[arg(long, default_value_t = 1)]
    pub min_group_size: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: GraphInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntersectArgs {
    #[command(flatten)]
    pub input: GraphInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Corr,
    Cos,
    Jac,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Corr => Metric::Correlation,
            MetricArg::Cos => Metric::Cosine,
            MetricArg::Jac => Metric::Jaccard,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub input: GraphInput,
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecipeArg {
    #[value(name = "corr+dw")]
    CorrDw,
    #[value(name = "cos+dw")]
    CosDw,
    #[value(name = "jac+dw")]
    JacDw,
    #[value(name = "dw-only")]
    DwOnly,
}

impl From<RecipeArg> for Recipe {
    fn from(r: RecipeArg) -> Self {
        match r {
            RecipeArg::CorrDw => Recipe::CorrDw,
            RecipeArg::CosDw => Recipe::CosDw,
            RecipeArg::JacDw => Recipe::JacDw,
            RecipeArg::DwOnly => Recipe::DwOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: GraphInput,
    #[arg(long, value_enum, conflicts_with = "metric")]
    pub recipe: Option<RecipeArg>,
    /// Shorthand for `--recipe <metric>+dw`.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long)]
    pub d_svd: Option<usize>,
    #[arg(long)]
    pub d_dw: Option<usize>,
    #[arg(long)]
    pub walks_per_node: Option<usize>,
    #[arg(long)]
    pub walk_length: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectionArg {
    None,
    Zero,
    Sat,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    pub injection: InjectionArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue the run stored in this checkpoint; model and training
    /// settings come from the checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write a checkpoint and exit once this many steps are done.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    /// SAT layer, 1-based.
    #[arg(long)]
    pub sat_layer: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub phase1_steps: Option<usize>,
    #[arg(long)]
    pub phase2_lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub known_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Train,
    ValK,
    ValU,
}

impl From<DatasetArg> for DatasetTag {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Train => DatasetTag::Train,
            DatasetArg::ValK => DatasetTag::ValK,
            DatasetArg::ValU => DatasetTag::ValU,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(
        long,
        value_enum,
        required_unless_present = "all",
        conflicts_with = "all"
    )]
    pub dataset: Option<DatasetArg>,
    /// Report val-k and val-u.
    #[arg(long)]
    pub all: bool,
    /// `synth.json` of a synthetic corpus, for the entropy floor.
    #[arg(long)]
    pub synth_spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest_file: PathBuf,
}
