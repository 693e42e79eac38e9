use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "funcq", version, about = "Offline policy learning with distributional actions")]
struct Cli {
    /// Seed for every random draw; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "FUNCQ_THREADS")]
    threads: Option<usize>,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset from raw step, biomarker and demographic CSVs.
    Ingest(IngestArgs),
    /// Generate a dataset from a simulator.
    Simulate(SimulateArgs),
    /// Evaluate a policy with fitted-Q evaluation.
    Fqe(FqeArgs),
    /// Learn a policy with fitted-Q iteration.
    Fqi(FqiArgs),
    /// Select lambda, eta and bandwidth multipliers on held-out subjects.
    Tune(TuneArgs),
    /// Convert between step samples, densities, LQD curves and quantile functions.
    #[command(subcommand)]
    Transform(TransformCommand),
    /// Compare learned and observed actions, overall and by subgroup.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    steps: PathBuf,
    #[arg(long)]
    biomarkers: PathBuf,
    #[arg(long)]
    demographics: PathBuf,
    /// Ingest options (JSON); defaults apply to missing fields.
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EnvKind {
    Synthetic,
    Tabular,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EnvPolicy {
    Behavior,
    Optimal,
    Uniform,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    env: EnvKind,
    /// Environment settings (JSON); defaults apply to missing fields.
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    subjects: usize,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    /// Policy generating the actions.
    #[arg(long, value_enum, default_value = "behavior")]
    policy: EnvPolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FqeArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Policy file written by `fqi` or `tune`.
    #[arg(long, conflicts_with = "env_policy", required_unless_present = "env_policy")]
    policy: Option<PathBuf>,
    /// Evaluate one of the environment's own policies instead (needs --env).
    #[arg(long, value_enum, requires = "env")]
    env_policy: Option<EnvPolicy>,
    /// Environment file written by `simulate`; adds a rollout estimate.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FqiArgs {
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config's eta.
    #[arg(long)]
    eta: Option<f64>,
    /// Overrides the config's lambda.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-3,1e-2")]
    etas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    multipliers: Vec<f64>,
    /// Skip refitting the chosen candidate on the full dataset.
    #[arg(long)]
    no_refit: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TransformCommand {
    /// Step sample or tabulated density to an LQD curve.
    Forward(ForwardArgs),
    /// LQD curve to quantile function and density.
    Inverse(InverseArgs),
}

#[derive(Debug, Args, Serialize)]
struct ForwardArgs {
    /// One-column CSV of daily step counts.
    #[arg(long, conflicts_with = "density", required_unless_present = "density")]
    sample: Option<PathBuf>,
    /// Two-column CSV `x,density`.
    #[arg(long)]
    density: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct InverseArgs {
    /// Two-column CSV `p,value`.
    #[arg(long)]
    lqd: PathBuf,
    /// Support start q(0).
    #[arg(long, allow_hyphen_values = true)]
    anchor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|c| c.downcast_ref::<funcq::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
