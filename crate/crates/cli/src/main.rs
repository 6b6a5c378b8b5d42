//! `salient` command-line pipeline: corpus synthesis, training, feature
//! extraction, resynthesis, evaluation and self-checks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use salient::model::Preset;

#[derive(Debug, Parser)]
#[command(name = "salient", version, about = "Noise-robust salient speech features")]
struct Cli {
    /// Master seed. Overrides the seed from config files and manifests.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a clean/noise corpus and its manifest.
    Corpus(CorpusArgs),
    /// Train an encoder/decoder pair on a manifest.
    Train(TrainArgs),
    /// Extract a feature track from a WAV file.
    Extract(ExtractArgs),
    /// Decode a feature track and resynthesize audio with Griffin-Lim.
    Reconstruct(ReconstructArgs),
    /// Evaluate a checkpoint on held-out utterances at several SNRs.
    Eval(EvalArgs),
    /// Run the built-in verification oracles.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    utterances: usize,
    /// Comma-separated SNR values in dB.
    #[arg(long, default_value = "0,5,10,15")]
    snr_list: String,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `key=value` training configuration; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clones: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda_mmd: Option<f64>,
    #[arg(long)]
    lambda_d: Option<f64>,
    #[arg(long)]
    kernel_scale: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV copy next to the binary file.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = salient::inference::DEFAULT_GL_ITERATIONS)]
    gl_iters: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "0,5,10,15")]
    snr_list: String,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    /// Number of seeds for the desk gradient check.
    #[arg(long, default_value_t = 1)]
    grad_seeds: u64,
    /// Test hook: kernel scale used by the MMD oracles.
    #[arg(long, hide = true, default_value_t = 1.0)]
    corrupt_kernel_scale: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        salient::exec::set_threads(n);
    }
    let result = match cli.command {
        Command::Corpus(a) => commands::corpus(a, cli.seed),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Extract(a) => commands::extract(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Eval(a) => commands::eval(a, cli.seed),
        Command::Selfcheck(a) => commands::selfcheck(a, cli.seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
