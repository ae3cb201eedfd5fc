//! Log-barrier path following on `min φ(x) s.t. A x = b, c_i(x) ≤ 0`, with
//! each `c_i` linear or a convex quadratic `a‖M x‖² + lᵀx − r`.

use crate::error::{Error, Result};
use crate::losses::CompiledLoss;

use super::kkt::QuasiDefinite;

/// Rows with more nonzeros than this stay in the augmented KKT block
/// instead of being condensed into the Hessian.
const DENSE_ROW: usize = 32;

/// Largest regularization tried when a factorization breaks down.
const MAX_REG: f64 = 1e-4;

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c * c).sum::<f64>().sqrt()
    }
}

/// `a ‖M x‖² + lin·x − r ≤ 0`.
#[derive(Debug, Clone)]
pub(crate) struct Quad {
    pub m: Vec<Vec<(usize, f64)>>,
    pub a: f64,
    pub r: f64,
    vars: Vec<usize>,
    /// `M` restricted to `vars`, row-major `rows × vars.len()`.
    dense_m: Vec<f64>,
    dense_lin: Vec<f64>,
}

impl Quad {
    pub fn new(m: Vec<Vec<(usize, f64)>>, a: f64, lin: Vec<(usize, f64)>, r: f64) -> Self {
        let mut vars: Vec<usize> = m.iter().flatten().map(|e| e.0).chain(lin.iter().map(|e| e.0)).collect();
        vars.sort_unstable();
        vars.dedup();
        let pos = |j: usize| vars.binary_search(&j).unwrap();
        let mut dense_m = vec![0.0; m.len() * vars.len()];
        for (r_i, row) in m.iter().enumerate() {
            for &(j, c) in row {
                dense_m[r_i * vars.len() + pos(j)] += c;
            }
        }
        let mut dense_lin = vec![0.0; vars.len()];
        for &(j, c) in &lin {
            dense_lin[pos(j)] += c;
        }
        Self { m, a, r, vars, dense_m, dense_lin }
    }

    fn image(&self, x: &[f64]) -> Vec<f64> {
        let nv = self.vars.len();
        (0..self.m.len()).map(|r| (0..nv).map(|p| self.dense_m[r * nv + p] * x[self.vars[p]]).sum()).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let img = self.image(x);
        let lin: f64 = self.vars.iter().zip(&self.dense_lin).map(|(&j, c)| c * x[j]).sum();
        self.a * img.iter().map(|v| v * v).sum::<f64>() + lin - self.r
    }

    /// Gradient restricted to `vars`.
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let nv = self.vars.len();
        let img = self.image(x);
        (0..nv)
            .map(|p| {
                let mtm: f64 = (0..self.m.len()).map(|r| self.dense_m[r * nv + p] * img[r]).sum();
                2.0 * self.a * mtm + self.dense_lin[p]
            })
            .collect()
    }

    /// `∇²c` restricted to `vars`, entry `(p, q)`.
    fn hess(&self, p: usize, q: usize) -> f64 {
        let nv = self.vars.len();
        2.0 * self.a * (0..self.m.len()).map(|r| self.dense_m[r * nv + p] * self.dense_m[r * nv + q]).sum::<f64>()
    }
}

pub(crate) enum Objective<'a> {
    /// Loss over the leading heights plus a linear term over all variables.
    Loss {
        loss: &'a CompiledLoss,
        linear: Vec<(usize, f64)>,
    },
    Linear(Vec<(usize, f64)>),
}

impl Objective<'_> {
    fn linear(&self) -> &[(usize, f64)] {
        match self {
            Objective::Loss { linear, .. } => linear,
            Objective::Linear(l) => l,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear().iter().map(|&(j, c)| c * x[j]).sum();
        match self {
            Objective::Loss { loss, .. } => loss.value(&x[..loss.n_heights()]) + lin,
            Objective::Linear(_) => lin,
        }
    }

    fn eval(&self, x: &[f64], grad: &mut [f64], trip: &mut Vec<(usize, usize, f64)>) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        if let Objective::Loss { loss, .. } = self {
            let ev = loss.value_grad_hess(&x[..loss.n_heights()]);
            value = ev.value;
            grad[..ev.grad.len()].copy_from_slice(&ev.grad);
            let b = ev.hess.block;
            for k in 0..ev.hess.n_blocks() {
                for i in 0..b {
                    for j in i..b {
                        trip.push((k * b + i, k * b + j, ev.hess.get(k, i, j)));
                    }
                }
            }
        }
        for &(j, c) in self.linear() {
            grad[j] += c;
            value += c * x[j];
        }
        value
    }
}

pub(crate) struct Problem<'a> {
    pub n: usize,
    pub eq: Vec<Row>,
    pub ineq: Vec<Row>,
    pub quads: Vec<Quad>,
    pub obj: Objective<'a>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iters: usize,
    pub mu0: f64,
    pub reduction: f64,
    pub armijo: f64,
    pub backtrack: f64,
    /// Centering stops when `λ²/(2μ)` falls below this.
    pub center_tol: f64,
    /// Tighter centering tolerance used once the target gap is reached.
    pub final_center_tol: f64,
    pub target_gap: f64,
    pub reg: f64,
}

/// Termination reason of a barrier run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Converged,
    MaxIters,
    /// Stopped by the caller's check after a centering step.
    Stopped,
}

#[derive(Debug, Clone)]
pub(crate) struct PathPoint {
    pub mu: f64,
    pub objective: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Run {
    pub x: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub outcome: Outcome,
    pub path: Vec<PathPoint>,
    pub stationarity: f64,
    pub centrality: f64,
}

struct Newton {
    dx: Vec<f64>,
    grad: Vec<f64>,
    /// `-∇Fᵀ dx`.
    decrement: f64,
    stationarity: f64,
    centrality: f64,
}

impl<'a> Problem<'a> {
    pub fn n_barrier(&self) -> usize {
        self.ineq.len() + self.quads.len()
    }

    /// Slacks of all barrier rows, `None` if any is not strictly positive.
    pub fn slacks(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut ls = Vec::with_capacity(self.ineq.len());
        for r in &self.ineq {
            let s = r.rhs - r.eval(x);
            if !(s > 0.0) {
                return None;
            }
            ls.push(s);
        }
        let mut qs = Vec::with_capacity(self.quads.len());
        for q in &self.quads {
            let s = -q.value(x);
            if !(s > 0.0) {
                return None;
            }
            qs.push(s);
        }
        Some((ls, qs))
    }

    pub fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.slacks(x).is_some() && self.obj.value(x).is_finite()
    }

    pub fn barrier_value(&self, x: &[f64], mu: f64) -> f64 {
        let Some((ls, qs)) = self.slacks(x) else {
            return f64::INFINITY;
        };
        let phi = self.obj.value(x);
        if !phi.is_finite() {
            return f64::INFINITY;
        }
        let logs: f64 = ls.iter().chain(&qs).map(|s| s.ln()).sum();
        phi - mu * logs
    }

    fn dense_rows(&self) -> Vec<usize> {
        (0..self.ineq.len()).filter(|&i| self.ineq[i].coeffs.len() > DENSE_ROW).collect()
    }

    /// Newton matrix triplets; `grad` receives the barrier gradient and the
    /// objective gradient alone is returned alongside.
    fn assemble(&self, x: &[f64], mu: f64, dense: &[usize], grad: &mut [f64]) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
        let n = self.n;
        let mut trip = Vec::new();
        self.obj.eval(x, grad, &mut trip);
        let obj_grad = grad.to_vec();
        let (ls, qs) = self.slacks(x).expect("iterate is strictly feasible");
        let mut di = 0;
        for (i, r) in self.ineq.iter().enumerate() {
            let s = ls[i];
            for &(j, c) in &r.coeffs {
                grad[j] += mu * c / s;
            }
            if di < dense.len() && dense[di] == i {
                let col = n + di;
                for &(j, c) in &r.coeffs {
                    trip.push((j, col, c));
                }
                trip.push((col, col, -s * s / mu));
                di += 1;
            } else {
                let w = mu / (s * s);
                for (p, &(a, ca)) in r.coeffs.iter().enumerate() {
                    for &(b, cb) in &r.coeffs[p..] {
                        trip.push((a, b, w * ca * cb));
                    }
                }
            }
        }
        for (q, quad) in self.quads.iter().enumerate() {
            let s = qs[q];
            let g = quad.grad(x);
            for (p, &j) in quad.vars.iter().enumerate() {
                grad[j] += mu * g[p] / s;
            }
            for p in 0..quad.vars.len() {
                for t in p..quad.vars.len() {
                    let v = mu * (quad.hess(p, t) / s + g[p] * g[t] / (s * s));
                    trip.push((quad.vars[p], quad.vars[t], v));
                }
            }
        }
        let base = n + dense.len();
        for (e, r) in self.eq.iter().enumerate() {
            for &(j, c) in &r.coeffs {
                trip.push((j, base + e, c));
            }
            trip.push((base + e, base + e, 0.0));
        }
        for j in 0..n {
            trip.push((j, j, 0.0));
        }
        (trip, obj_grad)
    }

    fn newton(&self, kkt: &mut Option<QuasiDefinite>, x: &[f64], mu: f64, dense: &[usize], reg: f64) -> Result<Newton> {
        let n = self.n;
        let mut grad = vec![0.0; n];
        let (trip, obj_grad) = self.assemble(x, mu, dense, &mut grad);
        let dim = n + dense.len() + self.eq.len();
        if kkt.is_none() {
            *kkt = Some(QuasiDefinite::analyze(dim, n, &trip)?);
        }
        let k = kkt.as_mut().expect("analyzed");
        k.fill(&trip);
        let mut rhs = vec![0.0; dim];
        for j in 0..n {
            rhs[j] = -grad[j];
        }
        let base = n + dense.len();
        for (e, r) in self.eq.iter().enumerate() {
            rhs[base + e] = r.rhs - r.eval(x);
        }
        // Variables with no curvature that are tied only by equalities give
        // pivots equal to the regularization; when that is below about
        // sqrt(eps) the Schur complements cancel to noise and the factor
        // overflows. Retry with a stronger regularization.
        let mut delta = reg;
        let sol = loop {
            let failure = match k.factor(delta, 1e-13, 1e-7) {
                Ok(()) => {
                    let (sol, _) = k.solve(&rhs, 3);
                    if sol.iter().all(|v| v.is_finite()) {
                        break sol;
                    }
                    Error::NumericalBreakdown(format!(
                        "Newton system produced non-finite values (barrier {mu:e}, {} regularized pivots)",
                        k.bumped_pivots()
                    ))
                }
                Err(e) => e,
            };
            if delta >= MAX_REG {
                return Err(failure);
            }
            delta = (delta * 1e3).min(MAX_REG);
            log::debug!("refactoring with regularization {delta:e}");
        };
        let dx = sol[..n].to_vec();
        let nu = sol[base..].to_vec();
        let decrement = -grad.iter().zip(&dx).map(|(g, d)| g * d).sum::<f64>();

        // Lagrangian stationarity with the multipliers z = μ/s linearized
        // along the step
        let mut stat = obj_grad;
        let (ls, qs) = self.slacks(x).expect("feasible");
        let mut dual_infeasibility = 0.0f64;
        for (r, s) in self.ineq.iter().zip(&ls) {
            let z = mu / s * (1.0 + r.eval(&dx) / s);
            dual_infeasibility = dual_infeasibility.max(-z);
            for &(j, c) in &r.coeffs {
                stat[j] += z * c;
            }
        }
        for (q, s) in self.quads.iter().zip(&qs) {
            let g = q.grad(x);
            let gdx: f64 = q.vars.iter().zip(&g).map(|(&j, gj)| gj * dx[j]).sum();
            let z = mu / s * (1.0 + gdx / s);
            dual_infeasibility = dual_infeasibility.max(-z);
            for (&j, gj) in q.vars.iter().zip(&g) {
                stat[j] += z * gj;
            }
        }
        for (e, r) in self.eq.iter().enumerate() {
            for &(j, c) in &r.coeffs {
                stat[j] += c * nu[e];
            }
        }
        let stationarity = stat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(Newton { dx, grad, decrement, stationarity, centrality: dual_infeasibility })
    }

    fn max_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut alpha = 1.0f64;
        for r in &self.ineq {
            let rate = r.eval(dx);
            if rate > 0.0 {
                let s = r.rhs - r.eval(x);
                alpha = alpha.min(0.99 * s / rate);
            }
        }
        alpha
    }

    /// Runs the path-following loop from a strictly feasible `x0`. `stop` is
    /// called with `(x, mu, Some(gap))` after each centering and with
    /// `(x, mu, None)` after every other accepted step.
    pub fn run(
        &self,
        x0: Vec<f64>,
        st: &Settings,
        mut stop: impl FnMut(&[f64], f64, Option<f64>) -> bool,
    ) -> Result<Run> {
        if !self.strictly_feasible(&x0) {
            return Err(Error::NumericalBreakdown("barrier start is not strictly feasible".into()));
        }
        let m = self.n_barrier().max(1) as f64;
        let dense = self.dense_rows();
        let mut kkt = None;
        let mut x = x0;
        let mut mu = st.mu0;
        let mut iterations = 0;
        let mut path = Vec::new();
        let mut final_phase = false;
        let mut last: Option<Newton> = None;
        let mut current = f64::NAN;
        let finish = |x: Vec<f64>, gap: f64, iterations, outcome, path, nt: Option<Newton>| {
            let (stationarity, centrality) = nt.map(|n| (n.stationarity, n.centrality)).unwrap_or((f64::NAN, f64::NAN));
            Ok(Run { x, gap, iterations, outcome, path, stationarity, centrality })
        };
        loop {
            // centering at the current barrier weight
            let tol = if final_phase { st.final_center_tol } else { st.center_tol };
            let mut extra = 0;
            let decrement = loop {
                if iterations >= st.max_iters {
                    let gap = mu * m;
                    return finish(x, gap, iterations, Outcome::MaxIters, path, last);
                }
                let nt = self.newton(&mut kkt, &x, mu, &dense, st.reg)?;
                iterations += 1;
                let dec = nt.decrement.max(0.0);
                if dec / (2.0 * mu) <= tol || (final_phase && extra >= 15) {
                    last = Some(nt);
                    break dec;
                }
                if !current.is_finite() {
                    current = self.barrier_value(&x, mu);
                }
                let f0 = current;
                log::trace!(
                    "newton {iterations}: barrier {mu:e} decrement {:e} stationarity {:e}",
                    dec / (2.0 * mu),
                    nt.stationarity
                );
                let slope = nt.grad.iter().zip(&nt.dx).map(|(g, d)| g * d).sum::<f64>();
                let mut alpha = self.max_step(&x, &nt.dx);
                let mut accepted = None;
                for _ in 0..60 {
                    let cand: Vec<f64> = x.iter().zip(&nt.dx).map(|(a, d)| a + alpha * d).collect();
                    let f = self.barrier_value(&cand, mu);
                    if f.is_finite() && f <= f0 + st.armijo * alpha * slope.min(0.0) {
                        accepted = Some((cand, f));
                        break;
                    }
                    alpha *= st.backtrack;
                }
                match accepted {
                    Some((c, f)) => {
                        x = c;
                        current = f;
                        if stop(&x, mu, None) {
                            let gap = mu * m;
                            return finish(x, gap, iterations, Outcome::Stopped, path, Some(nt));
                        }
                    }
                    None => {
                        // no progress possible at this precision
                        last = Some(nt);
                        break dec;
                    }
                }
                if final_phase {
                    extra += 1;
                }
                last = Some(nt);
            };
            let gap = mu * (m + decrement / (2.0 * mu));
            path.push(PathPoint { mu, objective: self.obj.value(&x), gap });
            if stop(&x, mu, Some(gap)) {
                return finish(x, gap, iterations, Outcome::Stopped, path, last);
            }
            if final_phase {
                return finish(x, gap, iterations, Outcome::Converged, path, last);
            }
            if gap <= st.target_gap {
                final_phase = true;
                continue;
            }
            mu *= st.reduction;
            current = f64::NAN;
        }
    }
}

/// Least-squares projection of `x0` onto `{A x = b}`.
pub(crate) fn project_equalities(n: usize, eq: &[Row], x0: &[f64], reg: f64) -> Result<Vec<f64>> {
    if eq.is_empty() {
        return Ok(x0.to_vec());
    }
    let mut trip = Vec::new();
    for j in 0..n {
        trip.push((j, j, 1.0));
    }
    for (e, r) in eq.iter().enumerate() {
        for &(j, c) in &r.coeffs {
            trip.push((j, n + e, c));
        }
        trip.push((n + e, n + e, 0.0));
    }
    let mut k = QuasiDefinite::analyze(n + eq.len(), n, &trip)?;
    k.fill(&trip);
    k.factor(reg, 1e-13, 1e-7)?;
    let mut rhs = x0.to_vec();
    rhs.extend(eq.iter().map(|r| r.rhs));
    let (mut sol, _) = k.solve(&rhs, 10);
    sol.truncate(n);
    Ok(sol)
}
