//! Simulation studies: mixtures of uniform densities on boxes, Monte Carlo
//! Kullback-Leibler divergences, consistency sweeps and runtime scaling.

use std::io::Write;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{BoundValue, ConstraintSpec, GradientNorm};
use crate::epispline::{format_float, EpiSpline};
use crate::error::{Error, Result};
use crate::estimate::{run, EstimationConfig};
use crate::geometry::BoxDomain;
use crate::hypodist::{dl, HypoDistanceConfig};
use crate::losses::{LossKind, Sample};
use crate::solver::{SolveStatus, SolverConfig};

/// Mode locations of the two-peak study.
pub const STUDY_MODES: [[f64; 2]; 2] = [[0.4702, 0.4657], [0.7746, 0.7773]];
pub const STUDY_HIGH: f64 = 3.0;
pub const STUDY_LOW: f64 = 0.6150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    /// Axis-aligned rectangle carrying the component's uniform density.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub weight: f64,
}

impl Component {
    fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureOfUniforms {
    #[serde(rename = "box")]
    pub domain: BoxDomain,
    pub components: Vec<Component>,
}

/// A cell of constant density in the arrangement of the component boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelCell {
    pub volume: f64,
    pub density: f64,
}

impl MixtureOfUniforms {
    /// Uniform background on `[0,1]²` plus two equal squares centred at the
    /// study modes, sized so that the density is `STUDY_HIGH` on the squares
    /// and `STUDY_LOW` elsewhere.
    pub fn two_peak_default() -> Self {
        let area = (1.0 - STUDY_LOW) / (2.0 * (STUDY_HIGH - STUDY_LOW));
        let half = 0.5 * area.sqrt();
        let weight = (STUDY_HIGH - STUDY_LOW) * area;
        let mut components = vec![Component { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0], weight: STUDY_LOW }];
        for c in STUDY_MODES {
            components.push(Component {
                lower: c.iter().map(|v| v - half).collect(),
                upper: c.iter().map(|v| v + half).collect(),
                weight,
            });
        }
        Self { domain: BoxDomain::unit(2), components }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.domain.dim();
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if c.lower.len() != d || c.upper.len() != d {
                return Err(Error::InvalidConfig(format!("component {i} must have {d} coordinates")));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!("component {i} has an invalid weight")));
            }
            if !(c.volume() > 0.0) {
                return Err(Error::InvalidConfig(format!("component {i} has no volume")));
            }
            let inside = (0..d).all(|a| c.lower[a] >= self.domain.lower[a] && c.upper[a] <= self.domain.upper[a]);
            if !inside {
                return Err(Error::InvalidConfig(format!("component {i} leaves the box")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components.iter().filter(|c| c.contains(x)).map(|c| c.weight / c.volume()).sum()
    }

    /// Exact decomposition into cells of constant density, from the grid of
    /// all component faces.
    pub fn cells(&self) -> Vec<LevelCell> {
        let d = self.dim();
        let cuts: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let mut v: Vec<f64> = self
                    .components
                    .iter()
                    .flat_map(|c| [c.lower[a], c.upper[a]])
                    .chain([self.domain.lower[a], self.domain.upper[a]])
                    .collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let counts: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mid: Vec<f64> = (0..d).map(|a| 0.5 * (cuts[a][idx[a]] + cuts[a][idx[a] + 1])).collect();
            let volume: f64 = (0..d).map(|a| cuts[a][idx[a] + 1] - cuts[a][idx[a]]).product();
            if volume > 0.0 {
                out.push(LevelCell { volume, density: self.density(&mid) });
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }

    /// `∫ f0` from the exact cell decomposition.
    pub fn total_mass(&self) -> f64 {
        self.cells().iter().map(|c| c.volume * c.density).sum()
    }

    /// Probability of `{f0 ≥ level}`.
    pub fn mass_above(&self, level: f64) -> f64 {
        self.cells().iter().filter(|c| c.density >= level).map(|c| c.volume * c.density).sum()
    }

    /// `K(f0; c)` for the constant function `c`.
    pub fn kl_to_constant(&self, c: f64) -> f64 {
        self.cells()
            .iter()
            .filter(|cell| cell.density > 0.0)
            .map(|cell| cell.volume * cell.density * (cell.density.ln() - c.ln()))
            .sum()
    }

    fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let pick = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidConfig(format!("mixture weights: {e}")))?;
        Ok((0..n)
            .map(|_| {
                let c = &self.components[pick.sample(rng)];
                c.lower.iter().zip(&c.upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect()
            })
            .collect())
    }
}

/// `n` independent draws; the same `(n, seed)` always gives the same sample.
pub fn sample_mixture(mix: &MixtureOfUniforms, n: usize, seed: u64) -> Result<Sample> {
    mix.validate()?;
    if n == 0 {
        return Err(Error::InvalidSample("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sample::new(mix.draw(n, &mut rng)?, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `K(f0; f) = E[log f0(Z) - log f(Z)]`, `Z ~ f0`.
/// Infinite when `f` vanishes at a draw.
pub fn kl_monte_carlo(mix: &MixtureOfUniforms, f: &EpiSpline, m: usize, seed: u64) -> Result<KlEstimate> {
    mix.validate()?;
    if m < 2 {
        return Err(Error::InvalidConfig("at least two Monte Carlo draws are needed".into()));
    }
    if f.complex().domain() != &mix.domain {
        return Err(Error::ComplexMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = mix.draw(m, &mut rng)?;
    let terms = z.par_iter().map(|x| Ok(mix.density(x).ln() - f.evaluate(x)?.ln())).collect::<Result<Vec<f64>>>()?;
    if terms.iter().any(|t| t.is_nan() || *t == f64::INFINITY) {
        return Ok(KlEstimate { estimate: f64::INFINITY, std_error: f64::INFINITY });
    }
    let mf = m as f64;
    let mean = terms.iter().sum::<f64>() / mf;
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (mf - 1.0);
    Ok(KlEstimate { estimate: mean, std_error: (var / mf).sqrt() })
}

/// Constraint class of the two-peak study.
pub fn study_constraints(kappa: f64) -> Vec<ConstraintSpec> {
    vec![
        ConstraintSpec::IntegralEquals { target: 1.0 },
        ConstraintSpec::PointwiseBounds {
            lower: Some(BoundValue::Uniform(1e-4)),
            upper: Some(BoundValue::Uniform(1e4)),
        },
        ConstraintSpec::LipschitzBound { kappa, norm: GradientNorm::Euclidean },
        ConstraintSpec::ArgmaxCovers { points: STUDY_MODES.iter().map(|p| p.to_vec()).collect() },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub mixture: MixtureOfUniforms,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Cells per axis at each refinement level.
    pub schedule: Vec<usize>,
    pub lambda: f64,
    pub constraints: Vec<ConstraintSpec>,
    pub epsilon: f64,
    pub kl_samples: usize,
    pub kl_seed: u64,
    /// Size of the large sample whose estimate stands in for the limit of
    /// the estimators; dl is measured against it.
    pub reference_size: usize,
    pub reference_seed: u64,
    pub hypodist: HypoDistanceConfig,
    pub solver: SolverConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureOfUniforms::two_peak_default(),
            sample_sizes: vec![100, 1000, 10000],
            seeds: (0..10).collect(),
            schedule: vec![5, 10],
            lambda: 0.0,
            constraints: study_constraints(100.0),
            epsilon: 1e-6,
            kl_samples: 100_000,
            kl_seed: 7,
            reference_size: 200_000,
            reference_seed: 99,
            hypodist: HypoDistanceConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn estimation(&self) -> EstimationConfig {
        let mut e = EstimationConfig::new(
            self.mixture.domain.clone(),
            LossKind::MlDensity,
            self.constraints.clone(),
            self.schedule.clone(),
        );
        e.lambda = self.lambda;
        e.epsilon = self.epsilon;
        e.hypodist = self.hypodist.clone();
        e.solver = self.solver;
        e.compare_cold_start = false;
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        self.estimation().validate()?;
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::InvalidConfig("sample_sizes must be nonempty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        if self.reference_size == 0 || self.kl_samples < 2 {
            return Err(Error::InvalidConfig("reference_size and kl_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub seed: u64,
    pub n_simplices: usize,
    pub lambda: f64,
    pub kl: f64,
    pub kl_std_error: f64,
    pub dl_to_reference: f64,
    pub n_variables: usize,
    pub n_penalty_aux: usize,
    pub status: SolveStatus,
    /// Every level passed its semantic constraint checks.
    pub feasible: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyMedian {
    pub n: usize,
    pub kl: f64,
    pub dl_to_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

impl StudyResult {
    /// Medians over seeds for each sample size, in increasing `n`.
    pub fn medians(&self) -> Vec<StudyMedian> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let rows: Vec<&StudyRow> = self.rows.iter().filter(|r| r.n == n).collect();
                StudyMedian {
                    n,
                    kl: median(rows.iter().map(|r| r.kl).collect()),
                    dl_to_reference: median(rows.iter().map(|r| r.dl_to_reference).collect()),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "seed",
            "N",
            "lambda",
            "kl",
            "kl_std_error",
            "dl_to_reference",
            "n_variables",
            "n_penalty_aux",
            "status",
            "feasible",
            "wall_time",
        ])?;
        for r in &self.rows {
            let status = serde_json::to_value(r.status)?;
            w.write_record([
                r.n.to_string(),
                r.seed.to_string(),
                r.n_simplices.to_string(),
                format_float(r.lambda),
                format_float(r.kl),
                format_float(r.kl_std_error),
                format_float(r.dl_to_reference),
                r.n_variables.to_string(),
                r.n_penalty_aux.to_string(),
                status.as_str().unwrap_or_default().to_string(),
                r.feasible.to_string(),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed of the sample used for cell `(n, seed)`.
fn cell_seed(n: usize, seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64)
}

/// Estimate from a large reference sample.
pub fn reference_estimate(cfg: &StudyConfig) -> Result<EpiSpline> {
    let sample = sample_mixture(&cfg.mixture, cfg.reference_size, cfg.reference_seed)?;
    Ok(run(&cfg.estimation(), &sample)?.model)
}

/// Runs every `(n, seed)` cell of the grid, in parallel. Rows come back
/// sorted by `(n, seed)`.
pub fn consistency_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let reference = reference_estimate(cfg)?;
    let est = cfg.estimation();
    let cells: Vec<(usize, u64)> =
        cfg.sample_sizes.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let mut rows = cells
        .par_iter()
        .map(|&(n, seed)| {
            let started = Instant::now();
            let sample = sample_mixture(&cfg.mixture, n, cell_seed(n, seed))?;
            let res = run(&est, &sample)?;
            let kl = kl_monte_carlo(&cfg.mixture, &res.model, cfg.kl_samples, cfg.kl_seed)?;
            let dist = dl(&res.model, &reference, &cfg.hypodist)?.dl_value;
            let last = res.final_level();
            log::info!("study cell n = {n} seed = {seed}: kl {:.5} dl {:.5}", kl.estimate, dist);
            Ok(StudyRow {
                n,
                seed,
                n_simplices: last.n_simplices,
                lambda: cfg.lambda,
                kl: kl.estimate,
                kl_std_error: kl.std_error,
                dl_to_reference: dist,
                n_variables: last.n_variables,
                n_penalty_aux: last.n_penalty_aux,
                status: last.solve.status,
                feasible: res.levels.iter().all(|l| l.feasibility.is_clean()),
                wall_time: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<StudyRow>>>()?;
    rows.sort_by_key(|r| (r.n, r.seed));
    Ok(StudyResult { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub mixture: MixtureOfUniforms,
    /// Cells per axis; `N = 2 c²` simplices in the plane.
    pub cells: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub lambda: f64,
    pub constraints: Vec<ConstraintSpec>,
    pub seed: u64,
    /// Each timing is the fastest of this many runs.
    pub repeats: usize,
    pub solver: SolverConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureOfUniforms::two_peak_default(),
            cells: vec![10, 20],
            sample_sizes: vec![100, 1000, 10000],
            lambda: 0.0,
            constraints: study_constraints(100.0),
            seed: 0,
            repeats: 3,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_simplices: usize,
    pub n: usize,
    pub n_variables: usize,
    pub n_penalty_aux: usize,
    pub iterations: usize,
    pub status: SolveStatus,
    pub wall_time: f64,
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "n", "n_variables", "n_penalty_aux", "iterations", "status", "wall_time"])?;
    for r in rows {
        let status = serde_json::to_value(r.status)?;
        w.write_record([
            r.n_simplices.to_string(),
            r.n.to_string(),
            r.n_variables.to_string(),
            r.n_penalty_aux.to_string(),
            r.iterations.to_string(),
            status.as_str().unwrap_or_default().to_string(),
            format!("{:.6}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Times single-level estimates (sampling excluded) sequentially.
pub fn scaling_study(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    cfg.mixture.validate()?;
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let mut rows = Vec::new();
    for &cells in &cfg.cells {
        for &n in &cfg.sample_sizes {
            let sample = sample_mixture(&cfg.mixture, n, cell_seed(n, cfg.seed))?;
            let mut est = EstimationConfig::new(
                cfg.mixture.domain.clone(),
                LossKind::MlDensity,
                cfg.constraints.clone(),
                vec![cells],
            );
            est.lambda = cfg.lambda;
            est.solver = cfg.solver;
            let mut best = f64::INFINITY;
            let mut last = None;
            for _ in 0..cfg.repeats {
                let t = Instant::now();
                let res = run(&est, &sample)?;
                best = best.min(t.elapsed().as_secs_f64());
                last = Some(res);
            }
            let res = last.expect("at least one repeat");
            let lvl = res.final_level();
            rows.push(ScalingRow {
                n_simplices: lvl.n_simplices,
                n,
                n_variables: lvl.n_variables,
                n_penalty_aux: lvl.n_penalty_aux,
                iterations: lvl.solve.iterations,
                status: lvl.solve.status,
                wall_time: best,
            });
        }
    }
    Ok(rows)
}
