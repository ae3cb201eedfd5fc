//! Command implementations behind the `hypofit` binary.
//!
//! Exit codes: `0` success, `1` configuration, schema or I/O error,
//! `2` infeasible constraint class, `3` solver failure.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use hypofit::epispline::EpiSpline;
use hypofit::estimate::run;
use hypofit::experiments::{
    consistency_study, sample_mixture, scaling_study, write_scaling_csv, ScalingConfig, StudyConfig,
};
use hypofit::hypodist::{dl, HypoDistanceConfig};
use hypofit::losses::Sample;
use hypofit::plugins::plugin_report;
use hypofit::solver::SolveStatus;
use hypofit::Error;
use thiserror::Error;

use config::{load_json, parse_json, read_text, ProblemConfig};
use output::{emit, to_canonical_json};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("solver stopped at the iteration limit on level {0}")]
    IterationLimit(usize),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Infeasible(_) | Error::InfeasibleLevel { .. } | Error::InfeasibleSpec(_)) => 2,
            CliError::Core(Error::NumericalBreakdown(_)) | CliError::IterationLimit(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Fits the configured problem to a sample and writes the estimate JSON.
/// The output is written even when the final solve hit its iteration limit.
pub fn cmd_estimate(config: &Path, sample: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg: ProblemConfig = load_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let est = cfg.estimation();
    est.validate()?;
    let ingested =
        Sample::from_csv_path(sample, &cfg.domain, cfg.loss.kind.needs_response()).map_err(|e| with_path(e, sample))?;
    if ingested.rejected > 0 {
        log::warn!("{} rows outside the box were dropped", ingested.rejected);
    }
    let res = run(&est, &ingested.sample)?;
    emit(out, &to_canonical_json(&res)?)?;
    let last = res.final_level();
    if last.solve.status == SolveStatus::MaxIters {
        return Err(CliError::IterationLimit(last.level));
    }
    Ok(())
}

/// Hypo-distance between two models. The distance settings and seed come
/// from `config` when given; `seed` overrides both.
pub fn cmd_distance(a: &Path, b: &Path, config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut hd = match config {
        Some(p) => {
            let cfg: ProblemConfig = load_json(p)?;
            HypoDistanceConfig { seed: cfg.seed, ..cfg.hypodist }
        }
        None => HypoDistanceConfig::default(),
    };
    if let Some(s) = seed {
        hd.seed = s;
    }
    let (f, g) = (load_model(a)?, load_model(b)?);
    let report = dl(&f, &g, &hd)?;
    emit(out, &to_canonical_json(&report)?)
}

pub fn cmd_report(model: &Path, delta: f64, alpha: f64, points: &[String], out: Option<&Path>) -> Result<()> {
    let f = load_model(model)?;
    let reference = points.iter().map(|p| parse_point(p)).collect::<Result<Vec<_>>>()?;
    let report = plugin_report(&f, delta, alpha, (!reference.is_empty()).then_some(&reference[..]))?;
    emit(out, &to_canonical_json(&report)?)
}

/// `resolution` holds one count for every axis, or a single count for all.
pub fn cmd_eval_grid(model: &Path, resolution: &[usize], out: Option<&Path>) -> Result<()> {
    let f = load_model(model)?;
    let res = match resolution {
        [r] => vec![*r; f.dim()],
        r => r.to_vec(),
    };
    let grid = f.eval_grid(&res)?;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    emit(out, &buf)
}

/// Runs the consistency study, or the scaling study when `scaling` is set,
/// and writes its CSV table. A missing config selects the defaults.
pub fn cmd_experiment(config: Option<&Path>, scaling: bool, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut buf = Vec::new();
    if scaling {
        let mut cfg: ScalingConfig = match config {
            Some(p) => load_json(p)?,
            None => ScalingConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        write_scaling_csv(&scaling_study(&cfg)?, &mut buf)?;
    } else {
        let mut cfg: StudyConfig = match config {
            Some(p) => load_json(p)?,
            None => StudyConfig::default(),
        };
        if let Some(s) = seed {
            cfg.kl_seed = s;
        }
        let res = consistency_study(&cfg)?;
        for m in res.medians() {
            log::info!("{m:?}");
        }
        res.write_csv(&mut buf)?;
    }
    emit(out, &buf)
}

/// Draws a sample from the mixture of a study config (or the default one).
pub fn cmd_sample(config: Option<&Path>, n: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg: StudyConfig = match config {
        Some(p) => load_json(p)?,
        None => StudyConfig::default(),
    };
    let sample = sample_mixture(&cfg.mixture, n, seed)?;
    let mut buf = Vec::new();
    sample.write_csv(&mut buf)?;
    emit(out, &buf)
}

/// Reads a model, either bare or as the `model` entry of an estimate.
pub fn load_model(path: &Path) -> Result<EpiSpline> {
    let mut value: serde_json::Value = parse_json(&read_text(path)?)?;
    if let Some(inner) = value.get_mut("model") {
        value = inner.take();
    }
    parse_json(&value.to_string())
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("point `{text}`: {e}"))))
        .collect()
}

fn with_path(e: Error, path: &Path) -> CliError {
    match e {
        Error::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Core(other),
    }
}
