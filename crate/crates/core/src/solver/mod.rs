//! Interior-point solver for the compiled estimation problems.
//!
//! The loss plus the linear penalty term is minimized over a
//! [`StandardForm`] with a log barrier on the inequality rows and on the
//! cone blocks (written as `‖M x‖² ≤ κ²`). Equalities enter the Newton
//! system directly. Each Newton system is a sparse quasi-definite matrix
//! factored by [`kkt::QuasiDefinite`].

mod barrier;
pub mod kkt;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{StandardForm, VarRole};
use crate::error::{Error, Result};
use crate::losses::CompiledLoss;

use barrier::{project_equalities, Objective, Outcome, Problem, Quad, Row, Settings};

/// Half-width of the implicit box on every variable used by phase 1.
pub const PHASE1_BOX: f64 = 1e6;

/// Phase 1 stops as soon as every normalized slack exceeds this.
pub const PHASE1_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_gap: f64,
    pub max_iters: usize,
    /// Initial duality gap of the barrier path.
    pub barrier_init: f64,
    pub barrier_reduction: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub epsilon_argmin: f64,
    /// Initial gap relative to `barrier_init` when starting from a warm point.
    pub warm_barrier_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_gap: 1e-7,
            max_iters: 200,
            barrier_init: 1.0,
            barrier_reduction: 0.2,
            backtrack: 0.5,
            armijo: 1e-4,
            epsilon_argmin: 0.0,
            warm_barrier_scale: 1e-2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("solver: {m}")));
        if !(self.tol_gap > 0.0 && self.tol_gap.is_finite()) {
            return bad("tol_gap must be positive");
        }
        if !(self.epsilon_argmin >= 0.0 && self.epsilon_argmin.is_finite()) {
            return bad("epsilon_argmin must be >= 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.barrier_init > 0.0 && self.barrier_init.is_finite()) {
            return bad("barrier_init must be positive");
        }
        if !(self.barrier_reduction > 0.0 && self.barrier_reduction < 1.0) {
            return bad("barrier_reduction must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("armijo must lie in (0, 0.5)");
        }
        if !(self.warm_barrier_scale > 0.0 && self.warm_barrier_scale <= 1.0) {
            return bad("warm_barrier_scale must lie in (0, 1]");
        }
        Ok(())
    }

    fn settings(&self, mu0: f64, target_gap: f64) -> Settings {
        Settings {
            max_iters: self.max_iters,
            mu0,
            reduction: self.barrier_reduction,
            armijo: self.armijo,
            backtrack: self.backtrack,
            center_tol: 1e-3,
            final_center_tol: 1e-12,
            target_gap,
            reg: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    EpsilonOptimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// Warm point projected onto the equalities was already interior.
    Warm,
    /// Warm point moved toward the phase-1 center.
    Pushed,
    /// Phase-1 point.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub barrier: f64,
    pub objective: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    pub phase1_iterations: usize,
    pub start: StartKind,
    /// Objective at the strictly feasible starting point.
    pub initial_objective: f64,
    pub path: Vec<PathRecord>,
    /// Seconds; not serialized so that outputs stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Strictly feasible point from [`phase1`].
#[derive(Debug, Clone)]
pub struct Phase1Point {
    /// All variables of the standard form.
    pub x: Vec<f64>,
    /// Smallest normalized slack over inequality rows, cones and positivity rows.
    pub margin: f64,
    pub iterations: usize,
}

fn to_rows(rows: &[crate::constraints::LinearRow]) -> Vec<Row> {
    rows.iter().map(|r| Row { coeffs: r.coeffs.clone(), rhs: r.rhs }).collect()
}

/// Finds a strictly feasible point of `form` (also making the ML density
/// positive at the data when `positivity` is given), starting from `start`.
/// Fails with [`Error::Infeasible`] carrying the certificate.
pub fn phase1(
    form: &StandardForm,
    positivity: Option<&CompiledLoss>,
    start: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<Phase1Point> {
    cfg.validate()?;
    let n = form.n_vars();
    let eq = to_rows(&form.equalities);
    let x0 = match start {
        Some(s) => s.to_vec(),
        None => vec![0.0; n],
    };
    let xp = project_equalities(n, &eq, &x0, 1e-10)?;
    let eq_scale = 1.0 + eq.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let res = eq.iter().map(|r| (r.eval(&xp) - r.rhs).abs()).fold(0.0, f64::max);
    if res > 1e-8 * eq_scale {
        return Err(Error::Infeasible(format!(
            "equality constraints are inconsistent (least-squares residual {res:e})"
        )));
    }

    let s_var = n;
    let mut ineq = Vec::new();
    for r in form.inequalities.iter().filter(|r| !form.is_penalty_row(r)) {
        let row = Row { coeffs: r.coeffs.clone(), rhs: r.rhs };
        let norm = row.norm();
        if norm == 0.0 {
            if r.rhs < 0.0 {
                return Err(Error::Infeasible(format!("row 0 ≤ {} cannot hold", r.rhs)));
            }
            continue;
        }
        let mut coeffs: Vec<(usize, f64)> = row.coeffs.iter().map(|&(j, c)| (j, c / norm)).collect();
        coeffs.push((s_var, 1.0));
        ineq.push(Row { coeffs, rhs: r.rhs / norm });
    }
    if let Some(loss) = positivity.filter(|l| l.kind() == crate::losses::LossKind::MlDensity) {
        let d1 = loss.rows().first().map_or(1, |r| r.mu.len());
        for w in loss.rows() {
            let norm = w.mu.iter().map(|m| m * m).sum::<f64>().sqrt();
            let mut coeffs: Vec<(usize, f64)> =
                w.mu.iter()
                    .enumerate()
                    .filter(|(_, m)| **m != 0.0)
                    .map(|(i, m)| (w.simplex * d1 + i, -m / norm))
                    .collect();
            coeffs.push((s_var, 1.0));
            ineq.push(Row { coeffs, rhs: 0.0 });
        }
    }
    let n_margin_rows = ineq.len();
    let mut quads = Vec::new();
    for c in &form.cones {
        quads.push(Quad::new(c.rows.clone(), 0.5 / c.bound, vec![(s_var, 1.0)], 0.5 * c.bound));
    }
    let finish = |mut x: Vec<f64>, margin: f64, iterations: usize| {
        form.refresh_penalty_aux(&mut x, 1e-2);
        Ok(Phase1Point { x, margin, iterations })
    };
    if n_margin_rows + quads.len() == 0 {
        return finish(xp, f64::INFINITY, 0);
    }
    for j in (0..n).filter(|&j| !matches!(form.var_roles[j], VarRole::PenaltyAux { .. })) {
        ineq.push(Row { coeffs: vec![(j, 1.0)], rhs: PHASE1_BOX });
        ineq.push(Row { coeffs: vec![(j, -1.0)], rhs: PHASE1_BOX });
    }
    ineq.push(Row { coeffs: vec![(s_var, 1.0)], rhs: 1.0 });

    let mut x = xp.clone();
    x.push(0.0);
    let margin_of = |x: &[f64], ineq: &[Row], quads: &[Quad]| -> f64 {
        let lin = ineq[..n_margin_rows].iter().map(|r| r.rhs - (r.eval(x) - x[s_var])).fold(f64::INFINITY, f64::min);
        quads.iter().map(|q| -(q.value(x) - x[s_var])).fold(lin, f64::min)
    };
    let m0 = margin_of(&x, &ineq, &quads);
    x[s_var] = m0.min(1.0) - 1.0;
    if xp.iter().any(|v| v.abs() >= PHASE1_BOX) {
        return Err(Error::NumericalBreakdown("phase 1 start lies outside the variable box".into()));
    }
    if m0 >= PHASE1_MARGIN {
        // already interior with a usable margin
        return finish(xp, m0, 0);
    }

    let obj = vec![(s_var, -1.0)];
    let problem = Problem { n: n + 1, eq: eq.clone(), ineq, quads, obj: Objective::Linear(obj) };
    let m = problem.n_barrier() as f64;
    let st = cfg.settings(cfg.barrier_init / m, 1e-12);
    let mut verdict: Option<std::result::Result<(), String>> = None;
    let run = problem.run(x, &st, |x, _mu, gap| {
        let s = x[s_var];
        let Some(gap) = gap else {
            if s >= PHASE1_MARGIN {
                verdict = Some(Ok(()));
            }
            return verdict.is_some();
        };
        if s > 0.0 && s >= gap {
            verdict = Some(Ok(()));
        } else if s + gap < 0.0 {
            verdict = Some(Err(format!("largest attainable margin is at most {:e}", s + gap)));
        } else if gap < 1e-11 && s <= 1e-11 {
            verdict = Some(Err(format!("largest attainable margin is {s:e}; no strictly feasible point")));
        }
        verdict.is_some()
    })?;
    match verdict {
        Some(Ok(())) => {
            let mut x = run.x;
            let margin = x.pop().expect("margin variable");
            finish(x, margin, run.iterations)
        }
        Some(Err(cert)) => Err(Error::Infeasible(cert)),
        None => {
            let s = run.x[s_var];
            if s > 0.0 {
                let mut x = run.x;
                x.pop();
                finish(x, s, run.iterations)
            } else {
                Err(Error::Infeasible(format!(
                    "phase 1 ended ({:?}) with margin {s:e} and gap {:e}",
                    run.outcome, run.gap
                )))
            }
        }
    }
}

fn main_problem<'a>(loss: &'a CompiledLoss, form: &StandardForm) -> Problem<'a> {
    Problem {
        n: form.n_vars(),
        eq: to_rows(&form.equalities),
        ineq: to_rows(&form.inequalities),
        quads: form.cones.iter().map(|c| Quad::new(c.rows.clone(), 1.0, Vec::new(), c.bound * c.bound)).collect(),
        obj: Objective::Loss { loss, linear: form.objective.clone() },
    }
}

/// Objective `loss(h) + linear term` at a full variable vector.
pub fn objective_value(loss: &CompiledLoss, form: &StandardForm, x: &[f64]) -> f64 {
    loss.value(&x[..form.n_heights]) + form.linear_objective(x)
}

/// Minimizes `loss + penalty` over `form`. `warm` holds heights only.
/// Returns all variables (heights first) and the report.
pub fn solve(
    loss: &CompiledLoss,
    form: &StandardForm,
    warm: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    if loss.n_heights() != form.n_heights {
        return Err(Error::ComplexMismatch);
    }
    let started = Instant::now();
    let problem = main_problem(loss, form);
    let m = problem.n_barrier().max(1) as f64;

    let mut phase1_iterations = 0;
    let (x0, start) = match warm {
        Some(h) => {
            if h.len() != form.n_heights {
                return Err(Error::ComplexMismatch);
            }
            let mut lifted = form.lift_heights(h);
            form.refresh_penalty_aux(&mut lifted, 1e-6);
            let xp = project_equalities(form.n_vars(), &problem.eq, &lifted, 1e-10)?;
            if problem.strictly_feasible(&xp) {
                (xp, StartKind::Warm)
            } else {
                let p1 = phase1(form, Some(loss), Some(&xp), cfg)?;
                phase1_iterations = p1.iterations;
                let mut chosen = None;
                for theta in [1e-4, 1e-3, 1e-2, 1e-1, 0.5] {
                    let cand: Vec<f64> = xp.iter().zip(&p1.x).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
                    if problem.strictly_feasible(&cand) {
                        chosen = Some(cand);
                        break;
                    }
                }
                match chosen {
                    Some(c) => (c, StartKind::Pushed),
                    None => (p1.x, StartKind::Center),
                }
            }
        }
        None => {
            let p1 = phase1(form, Some(loss), None, cfg)?;
            phase1_iterations = p1.iterations;
            (p1.x, StartKind::Center)
        }
    };
    if !problem.strictly_feasible(&x0) {
        return Err(Error::NumericalBreakdown("no strictly feasible start for the barrier".into()));
    }
    let initial_objective = problem.obj.value(&x0);
    let mu0 = match start {
        StartKind::Center => cfg.barrier_init / m,
        _ => cfg.barrier_init * cfg.warm_barrier_scale / m,
    };
    let target = cfg.tol_gap.max(cfg.epsilon_argmin);
    let st = cfg.settings(mu0, target);
    let run = problem.run(x0, &st, |_, _, _| false)?;

    let mut x = run.x;
    polish(form, &mut x);
    let objective = problem.obj.value(&x);
    let primal = form.max_violation(&x);
    if !objective.is_finite() {
        return Err(Error::NumericalBreakdown("objective is not finite at the solution".into()));
    }
    let status = if run.outcome == Outcome::MaxIters && run.gap > target {
        SolveStatus::MaxIters
    } else if run.gap <= cfg.tol_gap {
        SolveStatus::Optimal
    } else if run.gap <= target {
        SolveStatus::EpsilonOptimal
    } else {
        SolveStatus::MaxIters
    };
    let report = SolveReport {
        status,
        objective,
        kkt_residuals: KktResiduals { stationarity: run.stationarity, primal, dual: run.centrality, gap: run.gap },
        iterations: run.iterations,
        phase1_iterations,
        start,
        initial_objective,
        path: run.path.iter().map(|p| PathRecord { barrier: p.mu, objective: p.objective, gap: p.gap }).collect(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

/// Removes round-off left by the interior-point iterations: heights tied by
/// `h_a = h_b` rows are set to a common value, and penalty epigraph
/// variables are lowered onto `|g|`.
fn polish(form: &StandardForm, x: &mut [f64]) {
    let nh = form.n_heights;
    let mut parent: Vec<usize> = (0..nh).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut any = false;
    for r in &form.equalities {
        if r.rhs == 0.0 && r.coeffs.len() == 2 {
            let ((a, ca), (b, cb)) = (r.coeffs[0], r.coeffs[1]);
            if a < nh && b < nh && ca == -cb && ca != 0.0 {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                    any = true;
                }
            }
        }
    }
    if any {
        let mut sum = vec![0.0; nh];
        let mut count = vec![0usize; nh];
        for j in 0..nh {
            let r = root(&mut parent, j);
            sum[r] += x[j];
            count[r] += 1;
        }
        for j in 0..nh {
            let r = root(&mut parent, j);
            x[j] = sum[r] / count[r] as f64;
        }
    }
    form.refresh_penalty_aux(x, 0.0);
}
