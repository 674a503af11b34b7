//! `jadce`: synthesize data, train unrolled networks, evaluate, and check theory.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use jadce::coherence_weights::WeightMethod;
use jadce::unrolled_nets::Arch;

use config::{ExperimentConfig, Preset, Sampling, Split};

/// Thread count for work that runs per architecture; defaults to the available cores.
pub const THREADS_ENV: &str = "JADCE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "jadce", version, about = "Learned group-sparse recovery for grant-free access")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test splits sharing one preamble.
    Synth(SynthArgs),
    /// Layer-wise training, one checkpoint per architecture.
    Train(TrainArgs),
    /// Per-layer NMSE and detection errors of checkpoints and baselines.
    Eval(EvalArgs),
    /// Coupling diagnostics or oracle-threshold bound validation.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Precompute and cache an analytic weight for the preamble.
    Weights(WeightsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, conflicts_with = "noiseless")]
    snr_db: Option<f64>,
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by `synth` (default: <out>/data).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Architectures to train (repeatable).
    #[arg(long = "arch")]
    archs: Vec<Arch>,
    #[arg(long)]
    k_layers: Option<usize>,
    #[arg(long)]
    steps_per_phase: Option<usize>,
    #[arg(long, value_enum)]
    sampling: Option<Sampling>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// `ista-gs`, `fista-gs`, `init:<arch>` or a checkpoint directory (repeatable).
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Iterations of the baselines and `init:` networks (default: k_layers).
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated SNRs (dB); fresh test sets on the dataset preamble.
    #[arg(long, value_delimiter = ',')]
    snr_sweep: Vec<f64>,
    /// Comma-separated activity probabilities; fresh test sets on the dataset preamble.
    #[arg(long, value_delimiter = ',')]
    activity_sweep: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum TheoryCommand {
    /// Weight-coupling residuals and thresholds of a LISTA-GS checkpoint.
    Coupling {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Good thresholds and bound validation on an in-class batch.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value = "lista_gscp")]
    arch: Arch,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Nonzero lifted rows per sample.
    #[arg(long, default_value_t = 2)]
    sparsity: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Samples in the in-class batch.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value = "minimax")]
    weight_method: WeightMethod,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "pgd")]
    method: WeightMethod,
}

fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = global.preset {
        cfg.apply_preset(p);
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Synth(a) => {
            if a.noiseless {
                cfg.snr_db = None;
            } else if let Some(s) = a.snr_db {
                cfg.snr_db = Some(s);
            }
            cfg.validate()?;
            commands::synth(&cfg)
        }
        Command::Train(a) => {
            if !a.archs.is_empty() {
                cfg.archs = a.archs;
            }
            if let Some(k) = a.k_layers {
                cfg.k_layers = k;
            }
            if let Some(s) = a.steps_per_phase {
                cfg.steps_per_phase = s;
            }
            if let Some(s) = a.sampling {
                cfg.sampling = s;
            }
            cfg.validate()?;
            let dataset = a.dataset.unwrap_or_else(|| cfg.data_dir());
            commands::train(&cfg, &dataset)
        }
        Command::Eval(a) => {
            if !a.snr_sweep.is_empty() {
                cfg.snr_sweep = a.snr_sweep;
            }
            if !a.activity_sweep.is_empty() {
                cfg.activity_sweep = a.activity_sweep;
            }
            cfg.validate()?;
            let dataset = a.dataset.unwrap_or_else(|| cfg.data_dir());
            let iterations = a.iterations.unwrap_or(cfg.k_layers);
            commands::eval(&cfg, &dataset, &a.methods, a.split, iterations)
        }
        Command::Theory(TheoryCommand::Coupling { checkpoint, dataset }) => {
            cfg.validate()?;
            commands::theory_coupling(&cfg, &checkpoint, dataset.as_deref())
        }
        Command::Theory(TheoryCommand::Oracle(a)) => {
            cfg.validate()?;
            let opts = commands::OracleOptions {
                arch: a.arch,
                sparsity: a.sparsity,
                beta: a.beta,
                batch: a.batch,
                layers: a.layers.unwrap_or(cfg.k_layers),
                weight_method: a.weight_method,
            };
            commands::theory_oracle(&cfg, a.dataset.as_deref(), &opts)
        }
        Command::Weights(a) => {
            cfg.validate()?;
            commands::weights(&cfg, a.dataset.as_deref(), a.method)
        }
    }
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
