//! Estimation over a schedule of refining partitions.
//!
//! Each level builds a Kuhn complex, compiles the loss, the constraints and
//! the penalty, and solves to the level's tolerance starting from the
//! previous estimate carried onto the finer complex.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constraints::{
    assemble, assemble_penalty, check_semantics, ConstraintSpec, SemanticTolerance, StandardForm,
};
use crate::epispline::EpiSpline;
use crate::error::{Error, Result};
use crate::geometry::{kuhn_triangulation, BoxDomain, SimplicialComplex};
use crate::hypodist::{dl, HypoDistanceConfig};
use crate::losses::{CompiledLoss, LossKind, Sample};
use crate::solver::{objective_value, phase1, solve, SolveReport, SolveStatus, SolverConfig};

/// Both quantities must fall below their tolerance between two consecutive
/// levels for the run to stop before the schedule is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub objective_tol: f64,
    pub dl_tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { objective_tol: 1e-6, dl_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub domain: BoxDomain,
    pub loss: LossKind,
    pub lambda: f64,
    pub constraints: Vec<ConstraintSpec>,
    /// Cells per axis at each level.
    pub schedule: Vec<usize>,
    /// Target tolerance `ε`.
    pub epsilon: f64,
    /// Per-level tolerances; `None` gives `ε (1 + 2^(1-ν))`.
    pub epsilon_schedule: Option<Vec<f64>>,
    pub stop_rule: StopRule,
    pub hypodist: HypoDistanceConfig,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Half-width of the band replacing an integral equality when phase 1
    /// finds no interior point with the equality; `0` disables the retry.
    pub integral_band_fallback: f64,
    /// Also evaluate the objective at a cold phase-1 start on each refined
    /// level, for comparison with the warm start.
    pub compare_cold_start: bool,
}

impl EstimationConfig {
    pub fn new(domain: BoxDomain, loss: LossKind, constraints: Vec<ConstraintSpec>, schedule: Vec<usize>) -> Self {
        Self {
            domain,
            loss,
            lambda: 0.0,
            constraints,
            schedule,
            epsilon: 1e-6,
            epsilon_schedule: None,
            stop_rule: StopRule::default(),
            hypodist: HypoDistanceConfig::default(),
            seed: 0,
            solver: SolverConfig::default(),
            integral_band_fallback: 1e-6,
            compare_cold_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.solver.validate()?;
        self.hypodist.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schedule.is_empty() {
            return bad("schedule must contain at least one level".into());
        }
        if self.schedule[0] == 0 {
            return bad("cells per axis must be positive".into());
        }
        for w in self.schedule.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return bad(format!("schedule must refine strictly: {} is not a proper multiple of {}", w[1], w[0]));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("penalty lambda must be finite and >= 0".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and >= 0".into());
        }
        if let Some(eps) = &self.epsilon_schedule {
            if eps.len() != self.schedule.len() {
                return bad(format!("epsilon_schedule has {} entries for {} levels", eps.len(), self.schedule.len()));
            }
            if eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return bad("epsilon_schedule entries must be finite and >= 0".into());
            }
            if eps.windows(2).any(|w| w[1] > w[0]) {
                return bad("epsilon_schedule must be nonincreasing".into());
            }
            if eps[eps.len() - 1] > self.epsilon {
                return bad("the last epsilon_schedule entry must not exceed epsilon".into());
            }
        }
        if !(self.integral_band_fallback >= 0.0 && self.integral_band_fallback.is_finite()) {
            return bad("integral_band_fallback must be finite and >= 0".into());
        }
        for (field, v) in [("objective_tol", self.stop_rule.objective_tol), ("dl_tol", self.stop_rule.dl_tol)] {
            if !(v >= 0.0) {
                return bad(format!("stop_rule.{field} must be >= 0"));
            }
        }
        Ok(())
    }

    /// Tolerance at level `nu` (1-based).
    pub fn epsilon_at(&self, nu: usize) -> f64 {
        match &self.epsilon_schedule {
            Some(e) => e[nu - 1],
            None => self.epsilon * (1.0 + 2f64.powi(1 - nu as i32)),
        }
    }
}

/// Evidence that a level's estimate satisfies its constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    /// Largest violation of the compiled rows at the returned point.
    pub max_violation: f64,
    /// Failures of the semantic checks against the constraint specs.
    pub violations: Vec<String>,
    /// Band half-width substituted for the integral equality, if any.
    pub integral_band: Option<f64>,
}

impl FeasibilityCertificate {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub cells_per_dim: usize,
    pub n_simplices: usize,
    pub n_variables: usize,
    /// All variables beyond the heights.
    pub n_aux: usize,
    pub n_penalty_aux: usize,
    pub epsilon: f64,
    pub objective: f64,
    pub solve: SolveReport,
    /// Objective at a cold phase-1 start, when requested.
    pub cold_initial_objective: Option<f64>,
    pub dl_to_previous: Option<f64>,
    pub feasibility: FeasibilityCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ScheduleExhausted,
    StopRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub model: EpiSpline,
    pub levels: Vec<LevelReport>,
    pub termination: Termination,
}

impl EstimateResult {
    pub fn final_level(&self) -> &LevelReport {
        self.levels.last().expect("at least one level")
    }
}

struct Compiled {
    form: StandardForm,
    specs: Vec<ConstraintSpec>,
    band: Option<f64>,
}

fn compile_form(specs: &[ConstraintSpec], complex: &SimplicialComplex, lambda: f64) -> Result<StandardForm> {
    let mut form = assemble(specs, complex)?;
    if lambda > 0.0 {
        form.attach_penalty(&assemble_penalty(lambda, complex)?);
    }
    Ok(form)
}

fn with_band(specs: &[ConstraintSpec], delta: f64) -> Option<Vec<ConstraintSpec>> {
    let mut changed = false;
    let out = specs
        .iter()
        .map(|s| match s {
            ConstraintSpec::IntegralEquals { target } => {
                changed = true;
                ConstraintSpec::IntegralBand { target: *target, delta }
            }
            other => other.clone(),
        })
        .collect();
    changed.then_some(out)
}

/// Compiles the level and checks that phase 1 succeeds, retrying with the
/// integral band if needed. Infeasibility is reported with the level.
fn compile_level(
    cfg: &EstimationConfig,
    level: usize,
    complex: &SimplicialComplex,
    loss: &CompiledLoss,
) -> Result<Compiled> {
    let infeasible = |e: Error| match e {
        Error::Infeasible(c) | Error::InfeasibleSpec(c) => Error::InfeasibleLevel { level, certificate: c },
        other => other,
    };
    let form = compile_form(&cfg.constraints, complex, cfg.lambda).map_err(infeasible)?;
    match phase1(&form, Some(loss), None, &cfg.solver) {
        Ok(_) => Ok(Compiled { form, specs: cfg.constraints.clone(), band: None }),
        Err(Error::Infeasible(cert)) => {
            let delta = cfg.integral_band_fallback;
            let Some(specs) = (delta > 0.0).then(|| with_band(&cfg.constraints, delta)).flatten() else {
                return Err(Error::InfeasibleLevel { level, certificate: cert });
            };
            log::warn!(
                "level {level}: no interior point with the integral equality ({cert}); using a band of {delta:e}"
            );
            let form = compile_form(&specs, complex, cfg.lambda).map_err(infeasible)?;
            phase1(&form, Some(loss), None, &cfg.solver).map_err(infeasible)?;
            Ok(Compiled { form, specs, band: Some(delta) })
        }
        Err(e) => Err(e),
    }
}

/// Runs the refinement schedule on `sample`.
pub fn run(cfg: &EstimationConfig, sample: &Sample) -> Result<EstimateResult> {
    cfg.validate()?;
    sample.validate()?;
    if cfg.loss.needs_response() && sample.responses.is_none() {
        return Err(Error::InvalidSample("the loss needs responses".into()));
    }
    let d = cfg.domain.dim();
    let hd = HypoDistanceConfig { seed: cfg.seed, ..cfg.hypodist.clone() };
    let sem_tol = SemanticTolerance { seed: cfg.seed, ..SemanticTolerance::default() };

    let mut levels: Vec<LevelReport> = Vec::new();
    let mut previous: Option<EpiSpline> = None;
    let mut termination = Termination::ScheduleExhausted;
    for (idx, &cells) in cfg.schedule.iter().enumerate() {
        let level = idx + 1;
        let complex = Arc::new(kuhn_triangulation(&cfg.domain, &vec![cells; d])?);
        let loss = CompiledLoss::compile(cfg.loss, sample, &complex)?;
        let compiled = compile_level(cfg, level, &complex, &loss)?;
        let form = &compiled.form;
        let eps = cfg.epsilon_at(level);
        let solver_cfg = SolverConfig { epsilon_argmin: eps, ..cfg.solver };

        let warm = match &previous {
            Some(prev) => Some(prev.prolongate(complex.clone())?.into_heights()),
            None => None,
        };
        let cold_initial_objective = match (&warm, cfg.compare_cold_start) {
            (Some(_), true) => {
                let p1 = phase1(form, Some(&loss), None, &solver_cfg)?;
                Some(objective_value(&loss, form, &p1.x))
            }
            _ => None,
        };
        let (x, report) = match solve(&loss, form, warm.as_deref(), &solver_cfg) {
            Ok(r) => r,
            Err(Error::Infeasible(c)) => return Err(Error::InfeasibleLevel { level, certificate: c }),
            Err(e) => return Err(e),
        };
        if let Some(cold) = cold_initial_objective {
            log::info!("level {level}: initial objective warm {:.6e} cold {:.6e}", report.initial_objective, cold);
        }
        let f = EpiSpline::new(complex.clone(), x[..form.n_heights].to_vec())?;
        let feasibility = FeasibilityCertificate {
            max_violation: form.max_violation(&x),
            violations: check_semantics(&compiled.specs, &f, &sem_tol),
            integral_band: compiled.band,
        };
        let dl_to_previous = match &previous {
            Some(prev) => Some(dl(&f, prev, &hd)?.dl_value),
            None => None,
        };
        log::info!(
            "level {level}: N = {} objective {:.9e} status {:?} iterations {}",
            complex.n_simplices(),
            report.objective,
            report.status,
            report.iterations
        );
        let stop = match (levels.last(), dl_to_previous) {
            (Some(prev), Some(dist)) => {
                report.status != SolveStatus::MaxIters
                    && (report.objective - prev.objective).abs() <= cfg.stop_rule.objective_tol
                    && dist <= cfg.stop_rule.dl_tol
            }
            _ => false,
        };
        levels.push(LevelReport {
            level,
            cells_per_dim: cells,
            n_simplices: complex.n_simplices(),
            n_variables: form.n_vars(),
            n_aux: form.n_aux(),
            n_penalty_aux: form.n_penalty_aux(),
            epsilon: eps,
            objective: report.objective,
            solve: report,
            cold_initial_objective,
            dl_to_previous,
            feasibility,
        });
        previous = Some(f);
        if stop && level < cfg.schedule.len() {
            termination = Termination::StopRule;
            break;
        }
    }
    Ok(EstimateResult { model: previous.expect("at least one level"), levels, termination })
}
