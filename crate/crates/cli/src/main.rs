mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Infer cross-view interaction graphs from multi-view node-attributed graphs.
///
/// Settings resolve in the order: command-line flag, then the `--config`
/// file, then the built-in default. Logging is controlled by BAYREL_LOG
/// (error, warn, info, debug).
#[derive(Debug, Parser)]
#[command(name = "bayrel", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted two-view dataset plus truth.tsv.
    Synth(SynthArgs),
    /// Train a model and write model.ckpt and history.tsv.
    Train(TrainArgs),
    /// Write ranked cross-view edge probabilities from a checkpoint.
    Infer(InferArgs),
    /// Score an edge file against validation sets.
    Eval(EvalArgs),
    /// Write the Spearman correlation baseline in the edge format.
    Srca(SrcaArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// Nodes in view 1.
    #[arg(long)]
    pub n1: Option<usize>,
    /// Nodes in view 2.
    #[arg(long)]
    pub n2: Option<usize>,
    /// Shared sample dimension.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Communities per view.
    #[arg(long)]
    pub communities: Option<usize>,
    /// Within-community edge probability.
    #[arg(long)]
    pub p_in: Option<f64>,
    /// Across-community edge probability.
    #[arg(long)]
    pub p_out: Option<f64>,
    /// Number of planted cross-view pairs.
    #[arg(long)]
    pub planted: Option<usize>,
    /// Signal strength in [0, 1].
    #[arg(long)]
    pub signal: Option<f64>,
    /// Attribute noise scale.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Cross-view link function.
    #[arg(long, value_parser = ["ip", "bp"])]
    pub link: Option<String>,
    /// Weight on the graph-conditioned prior term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Concrete relaxation temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Weight on the within-view graph reconstruction.
    #[arg(long)]
    pub beta_graph: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Attribute noise standard deviation.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fraction of within-view edges held out for validation.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Monte Carlo samples per epoch.
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Monte Carlo samples of U (0 uses the posterior mean).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Also write the top edges at this bipartite density (repeatable).
    #[arg(long)]
    pub density: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ranked edge file from `infer` or `srca`.
    #[arg(long)]
    pub edges: PathBuf,
    /// Validated pairs and/or anchor blocks.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Known true pairs, for ROC-AUC.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Second edge file, for the bipartite KL divergence.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// First row-node set for negative accuracy (one name per line).
    #[arg(long, requires_all = ["s2", "targets"])]
    pub s1: Option<PathBuf>,
    /// Second row-node set for negative accuracy.
    #[arg(long, requires_all = ["s1", "targets"])]
    pub s2: Option<PathBuf>,
    /// Column-node targets for negative accuracy.
    #[arg(long, requires_all = ["s1", "s2"])]
    pub targets: Option<PathBuf>,
    /// Bipartite density for thresholded metrics (repeatable).
    #[arg(long)]
    pub density: Vec<f64>,
    /// Report file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing report.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SrcaArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// Dataset manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Report file (stdout only when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing report.
    #[arg(long)]
    pub force: bool,
    /// Perturb the analytic gradient of this parameter.
    #[arg(long, hide = true)]
    pub inject_gradient_error: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BAYREL_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
