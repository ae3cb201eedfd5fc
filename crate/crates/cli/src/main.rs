use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hypofit_cli::{cmd_distance, cmd_estimate, cmd_eval_grid, cmd_experiment, cmd_report, cmd_sample, CliError};

#[derive(Parser)]
#[command(name = "hypofit", version, about = "Constrained density and regression estimation with epi-splines")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a problem config to a sample CSV and write the estimate JSON.
    Estimate {
        /// Problem config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Sample CSV; regression samples carry the response in the last column.
        #[arg(long)]
        sample: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Hypo-distance between two models.
    Distance {
        model_a: PathBuf,
        model_b: PathBuf,
        /// Problem config whose `hypodist` section and seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Modes, near-modes and a super-level set of a model.
    Report {
        model: PathBuf,
        /// Vertices within this of the supremum are reported as near-modes.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Level of the reported super-level set.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Reference point `x1,x2,...`, checked against the argmax set; repeatable.
        #[arg(long = "point")]
        points: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on a regular grid and write CSV.
    EvalGrid {
        model: PathBuf,
        /// Points per axis, one value for all axes or comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "101")]
        resolution: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the consistency study (or the scaling study) and write CSV.
    Experiment {
        /// Study config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run the scaling study instead.
        #[arg(long)]
        scaling: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the KL Monte Carlo seed (the sampling seed with `--scaling`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw a sample from a study mixture and write CSV.
    Sample {
        /// Study config whose mixture is sampled (default: the two-mode mixture).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of points.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Estimate { config, sample, out, seed } => cmd_estimate(config, sample, out.as_deref(), *seed),
        Command::Distance { model_a, model_b, config, out, seed } => {
            cmd_distance(model_a, model_b, config.as_deref(), out.as_deref(), *seed)
        }
        Command::Report { model, delta, alpha, points, out } => {
            cmd_report(model, *delta, *alpha, points, out.as_deref())
        }
        Command::EvalGrid { model, resolution, out } => cmd_eval_grid(model, resolution, out.as_deref()),
        Command::Experiment { config, scaling, out, seed } => {
            cmd_experiment(config.as_deref(), *scaling, out.as_deref(), *seed)
        }
        Command::Sample { config, n, seed, out } => cmd_sample(config.as_deref(), *n, *seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
