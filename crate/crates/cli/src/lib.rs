//! Command-line pipeline and label service.

pub mod commands;
pub mod config;
pub mod error;
pub mod serve;
pub mod session;
pub mod store;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "idforge", version, about = "Resolve developer identities in version-control history")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Store directory; overrides IDFORGE_STORE and the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Format of the main tabular output, where the command offers a choice.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Ndjson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabelSource {
    /// The label journal.
    Journal,
    /// The golden truth written by `synth`.
    Golden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MapSource {
    /// Canonicals of the resolved partition.
    Partition,
    /// The golden developer of each identity.
    Golden,
    /// No merging.
    Identity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with golden truth.
    Synth(SynthArgs),
    /// Parse a commit stream and build the identity table.
    Ingest(IngestArgs),
    /// Attribute frequencies and the stoplist.
    Stats(StatsArgs),
    /// File, time-zone and text fingerprints.
    Fingerprints(FingerprintArgs),
    /// Candidate pairs and their feature vectors.
    Pairs(PairsArgs),
    /// Train the link classifier.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation with out-of-fold predictions.
    Crossval(CrossvalArgs),
    /// Build the labeling queue, or simulate the loop with a golden oracle.
    Active(ActiveArgs),
    /// Score every candidate pair with the trained model.
    Predict(PredictArgs),
    /// Close predicted links into identity clusters.
    Resolve(ResolveArgs),
    /// Score the partition against golden truth or another partition.
    Evaluate(EvaluateArgs),
    /// Compare collaboration networks before and after correction.
    Impact(ImpactArgs),
    /// Serve the label API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub developers: Option<usize>,
    #[arg(long)]
    pub project_size: Option<usize>,
    #[arg(long)]
    pub typo: Option<f64>,
    #[arg(long)]
    pub env_switch: Option<f64>,
    #[arg(long)]
    pub reorder: Option<f64>,
    #[arg(long)]
    pub org_alias: Option<f64>,
    #[arg(long)]
    pub template: Option<f64>,
    #[arg(long)]
    pub anonymous: Option<f64>,
    #[arg(long)]
    pub email_domain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Commit stream; defaults to paths.corpus, then corpus.ndjson in the store.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `ndjson` or `git-log`.
    #[arg(long, default_value = "ndjson")]
    pub input_format: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Values listed in the top-frequency report.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Extra stoplist entries merged into the seed list.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FingerprintArgs {
    /// Text embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// `blocked` or `all_pairs`.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub max_gram_block: Option<usize>,
    /// Append the two Levenshtein features.
    #[arg(long)]
    pub levenshtein: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "journal")]
    pub labels_from: LabelSource,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long, value_enum, default_value = "journal")]
    pub labels_from: LabelSource,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ActiveArgs {
    /// Answer queued pairs from golden truth and run the whole loop.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    /// Smallest cluster listed in the review report.
    #[arg(long)]
    pub min_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Compare against another partition CSV instead of golden truth.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Disagreeing pairs listed per side.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct ImpactArgs {
    #[arg(long, value_enum, default_value = "partition")]
    pub map_from: MapSource,
    /// Comma-separated subset of degree, clustering, constraint, eigenvector.
    #[arg(long, value_delimiter = ',')]
    pub measures: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Static directory served at `/` (the labeler UI build).
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

pub use commands::run;
