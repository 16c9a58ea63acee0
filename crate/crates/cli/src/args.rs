use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gue", version, about = "Train, reduce and evaluate image-feature embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clustered feature bank and its manifest.
    Synth(SynthArgs),
    /// Train the embedding head on the train side of an unseen-class split.
    Train(TrainArgs),
    /// Map a feature bank through a trained head (L2-normalized output).
    Embed(EmbedArgs),
    /// Fit a PCA model on a separate corpus.
    FitReduce(FitReduceArgs),
    /// Reduce a bank to fewer dimensions by PCA or average pooling.
    Reduce(ReduceArgs),
    /// Retrieval evaluation: mAP, per-vertical mAP and precision@k.
    ///
    /// The text report has `key,value` lines (`queries`, `skipped`, `k`,
    /// `map`, `precision_at_<n>`) followed by one
    /// `vertical,<name>,<mAP>,<n_queries>` line per vertical. The per-query
    /// dump has columns `id,class,vertical,ap,precision_at_<n>,total_relevant`.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Print `class,count,margin` for every class, rarest first.
    Margins(MarginsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Embed(_) => "embed",
            Command::FitReduce(_) => "fit-reduce",
            Command::Reduce(_) => "reduce",
            Command::Evaluate(_) => "evaluate",
            Command::Gradcheck(_) => "gradcheck",
            Command::Margins(_) => "margins",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub classes: u64,
    /// Samples per class; overrides --count-min/--count-max.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub count_min: usize,
    #[arg(long, default_value_t = 45)]
    pub count_max: usize,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 4)]
    pub verticals: usize,
    /// Noise correlation inside consecutive coordinate blocks (0 = isotropic).
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 8)]
    pub block: usize,
    /// Confine class centers to a random subspace of this dimension.
    #[arg(long)]
    pub center_rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature bank output.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest output (default: `<out>` with a `.csv` extension).
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of classes held out for validation (0 trains on everything).
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Classes with fewer samples are dropped before splitting.
    #[arg(long, default_value_t = 3)]
    pub min_samples: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs_head: usize,
    #[arg(long, default_value_t = 4)]
    pub epochs_joint: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_head: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub lr_backbone: f64,
    #[arg(long, default_value_t = 256)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub subcenters: usize,
    #[arg(long, default_value_t = 30.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.005)]
    pub margin_min: f64,
    #[arg(long, default_value_t = 0.45)]
    pub margin_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub margin_lambda: f64,
    /// Train without the adapter layer.
    #[arg(long)]
    pub no_adapter: bool,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Epoch log (default: `<out>.log`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Validation manifest (default: `<out>.val.csv`).
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitReduceArgs {
    #[arg(long)]
    pub fit_bank: PathBuf,
    /// Restrict the fit corpus to the ids of this manifest.
    #[arg(long)]
    pub fit_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub out_dim: usize,
    #[arg(long)]
    pub whiten: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Pca,
    Avgpool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReduceArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Pca)]
    pub method: MethodArg,
    /// Fitted model, required by `--method pca`.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub out_dim: usize,
    /// Skip the final row L2-normalization.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Gallery bank; every id of `--manifest` must be present.
    #[arg(long)]
    pub bank: PathBuf,
    /// Evaluation set: the gallery and, unless `--query-bank` is given, the queries.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub query_bank: Option<PathBuf>,
    #[arg(long)]
    pub query_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub precision_k: u64,
    /// Let a query retrieve its own id.
    #[arg(long)]
    pub keep_self: bool,
    /// Text report (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model to check (default: a fresh model for the data).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 20)]
    pub coords: usize,
    #[arg(long, default_value_t = 256)]
    pub embedding_dim: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MarginsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub margin_min: f64,
    #[arg(long, default_value_t = 0.45)]
    pub margin_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub margin_lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
