//! Command-line workflows: synthetic corpora, training, evaluation,
//! prediction, ablation campaigns and analysis reports.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage or
//! configuration errors.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;

pub use config::{ModelSettings, RunConfig, SCHEMA_VERSION};

/// A mistake in the invocation or configuration rather than in the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<adfusion_core::Error>(),
                Some(adfusion_core::Error::VocabMismatch(_))
            )
    });
    if usage {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

/// `{"error": {"kind", "message", "causes", "exit_code"}}`
pub fn error_json(err: &anyhow::Error) -> String {
    let code = exit_code(err);
    serde_json::json!({
        "error": {
            "kind": if code == EXIT_USAGE { "usage" } else { "runtime" },
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
            "exit_code": code,
        }
    })
    .to_string()
}

#[derive(Debug, Parser)]
#[command(
    name = "adfusion",
    version,
    about = "Multimodal CTR regression for video ads"
)]
pub struct Cli {
    /// On failure, print the error as one JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,
    /// No progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a planted signal.
    Synth(SynthArgs),
    /// Train a model and keep the best-validation parameters.
    Train(RunArgs),
    /// Score a trained model on one split of a manifest.
    Evaluate(EvaluateArgs),
    /// Predict every record of a manifest (labels not needed).
    Predict(PredictArgs),
    /// Run a campaign of ablation trainings.
    Ablate(AblateArgs),
    /// Attention or correlation reports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_ads: Option<usize>,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub frame_dim: Option<usize>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    #[arg(long)]
    pub n_promotions: Option<usize>,
    /// Extra frame-count variants, e.g. `10,20`.
    #[arg(long, value_delimiter = ',', conflicts_with = "no_extra_frames")]
    pub extra_frames: Option<Vec<usize>>,
    #[arg(long)]
    pub no_extra_frames: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Visual,
    Meta,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetaVariantArg {
    Unprocessed,
    Prenormalized,
    Separated,
    SeparatedPrenormalized,
}

/// A run configuration: an optional file plus flags that override it.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// RunConfig JSON; flags below take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Train/valid/test fractions, e.g. `0.82,0.08,0.10`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub n_frames: Option<usize>,
    #[arg(long)]
    pub frame_dim: Option<usize>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Active modalities, e.g. `visual,meta`.
    #[arg(long, value_delimiter = ',')]
    pub modalities: Option<Vec<ModalityArg>>,
    #[arg(long, value_enum)]
    pub meta_variant: Option<MetaVariantArg>,
    /// Drop the extra BN layers and the head dropout.
    #[arg(long)]
    pub no_regularization: bool,
    /// Metadata key to leave out (repeatable).
    #[arg(long)]
    pub exclude_meta: Vec<String>,
    /// Text field to leave out (repeatable).
    #[arg(long)]
    pub exclude_text: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    /// Every record that passes the filters.
    All,
}

/// A trained model and the data it should be applied to.
#[derive(Debug, Clone, Args)]
pub struct ModelInputs {
    /// Parameter file written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// Encoder vocabulary; defaults to `vocab.json` next to the params.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Split fractions; defaults to those in `run_config.json` next to the
    /// params, else the standard ones.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// Modalities, metadata processing, regularization, frame counts.
    Architecture,
    /// Leave out one metadata key at a time.
    MetaExclusions,
    /// Leave out one text field at a time.
    TextExclusions,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Campaign JSON: `{"schema_version": 1, "specs": [...]}`.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub campaign: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-ad frame and modality attention weights.
    Attention(AttentionArgs),
    /// Correlation of each metadata key with the CTR.
    Correlation(CorrelationArgs),
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CorrelationArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
    /// Correlate with raw CTR instead of the log-transformed target.
    #[arg(long)]
    pub raw_ctr: bool,
    /// Report η² instead of η.
    #[arg(long)]
    pub eta_squared: bool,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Synth(a) => commands::synth(&a, quiet),
        Command::Train(a) => commands::train(&a, quiet),
        Command::Evaluate(a) => commands::evaluate(&a, quiet),
        Command::Predict(a) => commands::predict(&a, quiet),
        Command::Ablate(a) => commands::ablate(&a, quiet),
        Command::Analyze(AnalyzeCommand::Attention(a)) => commands::attention(&a, quiet),
        Command::Analyze(AnalyzeCommand::Correlation(a)) => commands::correlation(&a, quiet),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let wants_json = args.iter().any(|a| a == "--error-json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help / --version
                let _ = e.print();
                return 0;
            }
            if wants_json {
                let err = anyhow::Error::new(UsageError(e.kind().to_string()))
                    .context(e.render().to_string().trim().to_string());
                eprintln!("{}", error_json(&err));
            } else {
                let _ = e.print();
            }
            return EXIT_USAGE;
        }
    };
    let json = cli.error_json;
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            if json {
                eprintln!("{}", error_json(&err));
            } else {
                eprintln!("error: {err:#}");
            }
            exit_code(&err)
        }
    }
}
