mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Shared-encoder multimodal VAE pipeline on synthetic volumetric cohorts.
///
/// All commands read one flat `key = value` config; flags override it.
/// Outputs go under `<out>/{cohort,train,evaluate,diffmap,project,sweep}`.
#[derive(Parser)]
#[command(name = "mmvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file (`key = value` per line, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; also the cohort seed unless `cohort_seed` is set.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    folds: Option<usize>,

    /// Latent dimensionality per modality.
    #[arg(long = "latent-dim", global = true)]
    latent_dim: Option<usize>,

    /// Modalities summed into the difference maps.
    #[arg(long = "top-k", global = true)]
    top_k: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic cohort.
    Synth,
    /// Train one VAE per cross-validation fold.
    Train,
    /// Classify from latent means; write AUC and importance reports.
    Evaluate,
    /// Decoded and voxelwise group-difference maps from fold 0.
    Diffmap,
    /// t-SNE of fold-0 latent means with a modality cluster score.
    Project,
    /// Repeat training and classification for several seeds.
    Sweep,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides: Vec<(&str, String)> = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(("seed", s.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("out", o.display().to_string()));
    }
    if let Some(f) = cli.folds {
        overrides.push(("folds", f.to_string()));
    }
    if let Some(l) = cli.latent_dim {
        overrides.push(("latent_dim", l.to_string()));
    }
    if let Some(k) = cli.top_k {
        overrides.push(("top_k", k.to_string()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Diffmap => commands::diffmap(&cfg),
        Command::Project => commands::project(&cfg),
        Command::Sweep => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
