//! `spikerep` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikerep::config::PipelineConfig;
use spikerep::pipeline::{self, Command, Inputs, RunOptions};

#[derive(Parser)]
#[command(name = "spikerep", version, about = "Spike representation learning and sorting")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a synthetic recording with ground truth.
    Synth(Common),
    /// Remove bad channels and band-pass filter.
    Preprocess(Common),
    /// Threshold detection on the (preprocessed) recording.
    Detect(Common),
    /// Cut snippets at detected events or ground-truth spikes.
    Extract(Common),
    /// Train the representation model on snippets.
    Train(Common),
    /// Embed snippets with a trained model or PCA.
    Embed(Common),
    /// Full pipeline: preprocess, detect, extract, embed, cluster.
    Sort(Common),
    /// Score a sorting against ground truth and/or run the ARI protocol.
    Eval(Common),
    /// Compare test-set representations with and without the denoiser.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply the denoiser before the encoder at inference.
    #[arg(long)]
    use_dae: bool,
    /// Output directory; also the default location of inputs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    recording: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    snippets: Option<PathBuf>,
    #[arg(long)]
    test_snippets: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    sorting: Option<PathBuf>,
}

fn split(sub: Sub) -> (Command, Common) {
    match sub {
        Sub::Synth(c) => (Command::Synth, c),
        Sub::Preprocess(c) => (Command::Preprocess, c),
        Sub::Detect(c) => (Command::Detect, c),
        Sub::Extract(c) => (Command::Extract, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Embed(c) => (Command::Embed, c),
        Sub::Sort(c) => (Command::Sort, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::Ablate(c) => (Command::Ablate, c),
    }
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, c) = split(cli.command);
    let config = match &c.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    };
    let config = match config.and_then(|cfg| pipeline::configure_threads().map(|_| cfg)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        config,
        seed: c.seed,
        use_dae: c.use_dae,
        out: c.out,
        inputs: Inputs {
            recording: c.recording,
            ground_truth: c.ground_truth,
            events: c.events,
            snippets: c.snippets,
            test_snippets: c.test_snippets,
            checkpoint: c.checkpoint,
            embeddings: c.embeddings,
            sorting: c.sorting,
        },
    };
    let (_, result) = pipeline::run(cmd, &opts);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
