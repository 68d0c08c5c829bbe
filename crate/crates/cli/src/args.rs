use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sumgd", version, about = "Summary-guided decoding experiments and hallucination metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Caption every image of a dataset and write captions, traces and a manifest.
    Decode(DecodeArgs),
    /// Compute CHAIR, recall, SPI, fluency and the position curve for captions.
    Evaluate(EvaluateArgs),
    /// Language-prior analysis tables (CSV).
    Analyze(AnalyzeArgs),
    /// Side-by-side table of evaluated runs with relative inference cost.
    Compare(CompareArgs),
    /// Check that a backend answers and its distributions are normalized.
    BackendCheck(BackendCheckArgs),
    /// Decode, evaluate and compare several configs in one go.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Backend: scripted:RULES.json, ngram:CORPUS.txt[:ORDER], synthetic[:k=v,...] or http[:URL]
    /// (URL defaults to $SUMGD_SIDECAR_URL).
    #[arg(long)]
    pub backend: String,

    /// Separate backend for the distilled summarizer (same syntax as --backend).
    #[arg(long)]
    pub summarizer_backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset description (JSON).
    #[arg(long)]
    pub dataset: PathBuf,

    #[command(flatten)]
    pub backend: BackendArgs,

    /// Token budget(s); a comma-separated list runs a sweep, e.g. 64,128,256,512.
    #[arg(long, value_delimiter = ',')]
    pub max_new_tokens: Vec<usize>,

    /// Instruction given with every image (overrides the dataset).
    #[arg(long)]
    pub prompt: Option<String>,

    /// Only decode the first N images.
    #[arg(long)]
    pub limit: Option<usize>,

    /// Parallel decodes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output root; each run goes to OUT/RUN_ID/.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Decoding config (TOML or JSON). Defaults to greedy.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Decoding configs (TOML or JSON), one row each.
    #[arg(long, num_args = 1.., required = true)]
    pub configs: Vec<PathBuf>,

    #[command(flatten)]
    pub run: RunArgs,

    #[command(flatten)]
    pub metrics: MetricsArgs,

    #[arg(long, value_enum, default_value_t = TableFormat::Markdown)]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// N-gram orders for the fluency score.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub ngram: Vec<usize>,

    /// Width of the word-position buckets.
    #[arg(long, default_value_t = 32)]
    pub bucket: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory; reads its captions and dataset and writes report.json there.
    #[arg(long, conflicts_with_all = ["captions", "annotations"])]
    pub run: Option<PathBuf>,

    /// Caption corpus (JSONL of {image_id, caption}).
    #[arg(long, requires = "annotations")]
    pub captions: Option<PathBuf>,

    /// Ground-truth objects (JSON {image_id: [objects]}).
    #[arg(long)]
    pub annotations: Option<PathBuf>,

    /// Object vocabulary (JSON {category: [synonyms]}); defaults to the bundled MSCOCO table.
    #[arg(long)]
    pub vocab: Option<PathBuf>,

    #[command(flatten)]
    pub metrics: MetricsArgs,

    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Pos,
    PosInterval,
    Attention,
    MethodCompare,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,

    /// Existing probe files (JSONL); otherwise probes are produced by decoding.
    #[arg(long, num_args = 1..)]
    pub probes: Vec<PathBuf>,

    #[arg(long)]
    pub dataset: Option<PathBuf>,

    #[arg(long)]
    pub backend: Option<String>,

    #[arg(long)]
    pub summarizer_backend: Option<String>,

    /// Decoding config(s). method-compare takes several; other modes use the first (greedy if none).
    #[arg(long, num_args = 1..)]
    pub config: Vec<PathBuf>,

    #[arg(long, default_value_t = 512)]
    pub max_new_tokens: usize,

    #[arg(long)]
    pub limit: Option<usize>,

    #[arg(long)]
    pub prompt: Option<String>,

    /// Window (pos) or interval width (pos-interval, attention).
    #[arg(long, default_value_t = 32)]
    pub window: usize,

    /// Directory to keep the probe files produced while decoding.
    #[arg(long)]
    pub probe_dir: Option<PathBuf>,

    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Markdown,
    Json,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories (or their manifest.json files).
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,

    #[command(flatten)]
    pub metrics: MetricsArgs,

    #[arg(long, value_enum, default_value_t = TableFormat::Markdown)]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct BackendCheckArgs {
    #[arg(long)]
    pub backend: String,

    /// Dataset, for backends that are built from one (`synthetic`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Image handle for an image-conditioned query.
    #[arg(long)]
    pub image: Option<String>,

    #[arg(long, default_value = "A dog catches a frisbee.")]
    pub text: String,
}
