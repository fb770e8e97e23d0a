mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loopforge::sampling::SamplerKind;

use commands::{Overrides, Rate, UsageError};
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "loopforge", version, about = "Extract, learn and generate bass+drum MIDI loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a MIDI directory into 8-bar phrases.
    Extract(Common),
    /// Fit the loop detector.
    TrainDetector(Common),
    /// Score phrases and keep detected loops.
    Score(Common),
    /// Train the VQ-VAE codec on loops.
    TrainVqvae(Common),
    /// Encode loops into token sequences.
    Tokenize(Common),
    /// Train the autoregressive prior on token sequences.
    TrainPrior(Common),
    /// Sample new loops, optionally with rejection.
    Generate(Common),
    /// Compare generated loops with real loops.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of samples (generate) or subsample size (evaluate).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    /// Temperature, k or p for the chosen sampler.
    #[arg(long)]
    param: Option<f64>,
    /// Rejection rate in (0, 1], or `none`.
    #[arg(long)]
    rate: Option<Rate>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop codec training once reconstruction error falls below 5e-3.
    #[arg(long)]
    overfit: bool,
    inputs: Vec<PathBuf>,
}

impl Common {
    fn split(self) -> (Option<PathBuf>, Overrides) {
        (
            self.config,
            Overrides {
                seed: self.seed,
                n: self.n,
                sampler: self.sampler,
                param: self.param,
                rate: self.rate,
                out: self.out,
                overfit: self.overfit,
                inputs: self.inputs,
            },
        )
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands as c;
    let (run, common): (fn(&PipelineConfig, &Overrides) -> anyhow::Result<()>, Common) = match cli.command {
        Command::Extract(a) => (c::extract, a),
        Command::TrainDetector(a) => (c::train_detector, a),
        Command::Score(a) => (c::score, a),
        Command::TrainVqvae(a) => (c::train_vq, a),
        Command::Tokenize(a) => (c::tokenize, a),
        Command::TrainPrior(a) => (c::train_prior_cmd, a),
        Command::Generate(a) => (c::generate, a),
        Command::Evaluate(a) => (c::evaluate, a),
    };
    let (path, ov) = common.split();
    let base = match path {
        Some(p) => PipelineConfig::load(&p).map_err(|e| commands::usage(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    let cfg = commands::effective_config(base, &ov)?;
    run(&cfg, &ov)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("LOOPFORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
