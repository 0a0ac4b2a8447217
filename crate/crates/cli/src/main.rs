//! `ranktuner`: rank statistics, bound sweeps, toy training, noise diagnostics
//! and Pass@k from the command line. Every command writes CSV with a schema
//! comment and a header row.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "ranktuner", version, about = "Rank-based probability/entropy calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-token rank/entropy statistics for a line-delimited logit dump.
    Stats(StatsArgs),
    /// Random-distribution sweep of the rank/probability and expected-rank/entropy bounds.
    ValidateBounds(BoundsArgs),
    /// Weighted fine-tuning of a toy n-gram model on a synthetic corpus.
    Train(TrainArgs),
    /// Noise-sensitivity diagnostic for a token-importance scorer.
    Noise(NoiseArgs),
    /// Combinatorial Pass@k from a correctness matrix.
    Passk(PasskArgs),
}

#[derive(Args)]
struct Output {
    /// Destination file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Output {
    fn open(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    output: Output,
    #[arg(long, value_enum, default_value_t = XiModeArg::Max)]
    xi_mode: XiModeArg,
    #[arg(long, default_value_t = ranktuner_core::stats::DEFAULT_SCALE_CEILING)]
    scale_ceiling: f64,
}

#[derive(Args)]
struct BoundsArgs {
    /// Number of random distributions.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, env = "RANKTUNER_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value_t = 32)]
    vocab: usize,
    #[arg(long, default_value_t = 64)]
    records: usize,
    /// Scale of the source logits; larger means lower entropy.
    #[arg(long, default_value_t = 3.0)]
    sharpness: f64,
    #[arg(long, default_value_t = 1)]
    corpus_seed: u64,
    /// n-gram context length (1 or 2).
    #[arg(long, default_value_t = 1)]
    order: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme name; replaces the config's scheme with its defaults.
    #[arg(long)]
    scheme: Option<String>,
    /// Training seed; overrides the config.
    #[arg(long, env = "RANKTUNER_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    scale_ceiling: Option<f64>,
    /// Per-step telemetry CSV; stdout when omitted.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Append an inference-entropy block comparing dft, sft and overtone, each
    /// fine-tuned from a shared sft-pretrained model.
    #[arg(long)]
    probe_entropy: bool,
    #[arg(long, default_value_t = ranktuner_core::trainer::DEFAULT_PROBE_TEMPERATURE)]
    probe_temperature: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusKind {
    /// The hand-built fixture with known expected counts.
    Micro,
    /// Synthetic n-gram corpus scored by its own source model.
    Synthetic,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, env = "RANKTUNER_SEED", default_value_t = 0)]
    seed: u64,
    /// entropy_dominant, prob_dominant or ours.
    #[arg(long, default_value = "ours")]
    scorer: String,
    #[arg(long, value_enum, default_value_t = CorpusKind::Synthetic)]
    corpus: CorpusKind,
    #[command(flatten)]
    corpus_args: CorpusArgs,
    #[arg(long, value_enum, default_value_t = XiModeArg::Max)]
    xi_mode: XiModeArg,
    /// Line-delimited record manifest (id, corrupted, span).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PasskArgs {
    /// One line of 0/1 outcomes per problem.
    #[arg(long, short)]
    input: PathBuf,
    /// Repeatable; every k from 1 to n when omitted.
    #[arg(long)]
    k: Vec<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum XiModeArg {
    Max,
    Arithmetic,
    Geometric,
    Logarithmic,
}

impl From<XiModeArg> for ranktuner_core::XiMode {
    fn from(m: XiModeArg) -> Self {
        use ranktuner_core::XiMode;
        match m {
            XiModeArg::Max => XiMode::Max,
            XiModeArg::Arithmetic => XiMode::Arithmetic,
            XiModeArg::Geometric => XiMode::Geometric,
            XiModeArg::Logarithmic => XiMode::Logarithmic,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::ValidateBounds(a) => commands::validate_bounds(&a),
        Command::Train(a) => commands::train(&a),
        Command::Noise(a) => commands::noise(&a),
        Command::Passk(a) => commands::passk(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        bail!("--{name} must be positive, got {value}");
    }
    Ok(())
}
