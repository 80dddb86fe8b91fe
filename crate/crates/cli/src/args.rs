use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "emwave",
    version,
    about = "Maxwell FV datasets and Fourier-transformer surrogates"
)]
pub struct Cli {
    /// Worker threads for sample generation, grid search, training batches and rollouts.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Run manifest path (defaults next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset of random wave packets.
    Generate(GenerateArgs),
    /// Simulate one packet, optionally checking it against the exact solution.
    Solve(SolveArgs),
    /// Train a surrogate on a dataset.
    Train(TrainArgs),
    /// Train every combination of a hyperparameter grid and rank by validation loss.
    GridSearch(GridSearchArgs),
    /// Roll a checkpoint out on one dataset sample.
    Rollout(RolloutArgs),
    /// Roll out a whole split and write error-curve and spectrum CSVs.
    Eval(EvalArgs),
    /// Frequency-path and mode-count ablations.
    Ablate(AblateArgs),
    /// Per-cell truth, prediction and residual tables for one sample.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON file with any of `case`, `n_samples`, `n_cells`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub case: Option<u8>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, default_value_t = 1)]
    pub case: u8,
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    /// Dataset seed the packet draws come from.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample id within that seed.
    #[arg(long, default_value_t = 0)]
    pub sample: u32,
    /// Explicit uniform draws `r1,r2[,r3]` instead of seed and sample.
    #[arg(long, value_delimiter = ',')]
    pub draws: Option<Vec<f64>>,
    /// Compare every step with the exact cell averages.
    #[arg(long)]
    pub validate: bool,
    /// Largest accepted max pointwise relative error under `--validate`.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// CSV of E per step.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags that override fields of a training config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub windows_per_epoch: Option<usize>,
    #[arg(long)]
    pub input_noise: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub no_frequency_path: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON training config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Checkpoint path; the JSON sidecar and report are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON grid (`hidden_dim`, `patch_len`, `depth`, `overlap` lists); the reference table when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sample: u32,
    /// Last predicted step; the case horizon when absent.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Steps with spectrum exports; 100,200 for Case 1 and 50,100 for Case 2 when absent.
    #[arg(long, value_delimiter = ',')]
    pub spectrum_steps: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// One dataset per case; mode-count variants run on Case 1 only.
    #[arg(long, required = true)]
    pub dataset: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sample: u32,
    /// Steps to export; 100,200 for Case 1 and 50,100 for Case 2 when absent.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}
