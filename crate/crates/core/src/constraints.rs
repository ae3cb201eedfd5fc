//! Declarative shape constraints and their compilation into a standard
//! convex form over the height vector.
//!
//! Every constraint below is linear or second-order-cone representable in
//! the per-simplex heights. The compiled [`StandardForm`] keeps an audit
//! trail mapping each row back to the specification that produced it.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epispline::{first_moment_weights, gradient_coefficients, integral_weights, EpiSpline, TOL_ARGMAX};
use crate::error::{Error, Result};
use crate::geometry::{SimplicialComplex, LOCATE_TOL};

/// Either one value for every vertex or one value per vertex of the complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundValue {
    Uniform(f64),
    PerVertex(Vec<f64>),
}

impl BoundValue {
    fn at(&self, vertex: usize) -> f64 {
        match self {
            BoundValue::Uniform(v) => *v,
            BoundValue::PerVertex(vs) => vs[vertex],
        }
    }

    fn check(&self, n_vertices: usize, what: &str) -> Result<()> {
        match self {
            BoundValue::Uniform(v) if !v.is_finite() => {
                Err(Error::InvalidConstraint(format!("{what} bound must be finite")))
            }
            BoundValue::PerVertex(vs) if vs.len() != n_vertices => {
                Err(Error::InvalidConstraint(format!("{what} bound has {} values for {n_vertices} vertices", vs.len())))
            }
            BoundValue::PerVertex(vs) if vs.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidConstraint(format!("{what} bound must be finite")))
            }
            _ => Ok(()),
        }
    }
}

/// Norm applied to each piece gradient by [`ConstraintSpec::LipschitzBound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientNorm {
    #[default]
    Euclidean,
    Max,
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Nonnegativity {},
    IntegralEquals {
        target: f64,
    },
    IntegralBand {
        target: f64,
        delta: f64,
    },
    /// Each point is a global maximizer (not necessarily unique).
    ArgmaxCovers {
        points: Vec<Vec<f64>>,
    },
    /// Each point lies in the super-level set `{f ≥ alpha}`.
    LevelSetCovers {
        points: Vec<Vec<f64>>,
        alpha: f64,
    },
    /// Bounds enforced at the vertices; exact for uniform bounds.
    PointwiseBounds {
        #[serde(default)]
        lower: Option<BoundValue>,
        #[serde(default)]
        upper: Option<BoundValue>,
    },
    Continuity {},
    LipschitzBound {
        kappa: f64,
        #[serde(default)]
        norm: GradientNorm,
    },
    /// Per-coordinate direction: `1` nondecreasing, `-1` nonincreasing, `0` free.
    Monotone {
        direction: Vec<i8>,
    },
    Concavity {},
    MomentBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl ConstraintSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintSpec::Nonnegativity {} => "nonnegativity",
            ConstraintSpec::IntegralEquals { .. } => "integral_equals",
            ConstraintSpec::IntegralBand { .. } => "integral_band",
            ConstraintSpec::ArgmaxCovers { .. } => "argmax_covers",
            ConstraintSpec::LevelSetCovers { .. } => "level_set_covers",
            ConstraintSpec::PointwiseBounds { .. } => "pointwise_bounds",
            ConstraintSpec::Continuity {} => "continuity",
            ConstraintSpec::LipschitzBound { .. } => "lipschitz_bound",
            ConstraintSpec::Monotone { .. } => "monotone",
            ConstraintSpec::Concavity {} => "concavity",
            ConstraintSpec::MomentBox { .. } => "moment_box",
        }
    }

    fn implies_continuity(&self) -> bool {
        matches!(
            self,
            ConstraintSpec::Continuity {}
                | ConstraintSpec::LipschitzBound { .. }
                | ConstraintSpec::Monotone { .. }
                | ConstraintSpec::Concavity {}
        )
    }
}

/// Sparse linear row `Σ coeffs · x` compared against `rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub origin: usize,
}

impl LinearRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }
}

/// Second-order cone `‖M x‖₂ ≤ bound` with sparse rows of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub bound: f64,
    pub origin: usize,
}

impl ConeBlock {
    pub fn image(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, c)| c * x[j]).sum()).collect()
    }
}

/// What a decision variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum VarRole {
    Height {
        simplex: usize,
        vertex: usize,
    },
    /// Common value of the spline at every argmax-constrained point.
    ArgmaxLevel,
    /// Epigraph variable bounding `|g_{k,axis}|` in the gradient penalty.
    PenaltyAux {
        simplex: usize,
        axis: usize,
    },
}

/// Provenance of a group of rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowOrigin {
    pub label: String,
    /// Index into the spec list, `None` for the penalty.
    pub spec: Option<usize>,
}

/// Compiled feasible set: `A x = b`, `G x ≤ u`, `‖M_j x‖ ≤ κ_j`, plus a
/// linear objective term contributed by the penalty.
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub n_heights: usize,
    pub var_roles: Vec<VarRole>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub cones: Vec<ConeBlock>,
    pub objective: Vec<(usize, f64)>,
    pub origins: Vec<RowOrigin>,
}

impl StandardForm {
    pub fn n_vars(&self) -> usize {
        self.var_roles.len()
    }

    pub fn n_aux(&self) -> usize {
        self.n_vars() - self.n_heights
    }

    /// Epigraph variables of the gradient penalty.
    pub fn n_penalty_aux(&self) -> usize {
        self.var_roles.iter().filter(|r| matches!(r, VarRole::PenaltyAux { .. })).count()
    }

    /// `(equalities, inequalities, cones)` attributed to `origin`.
    pub fn rows_for(&self, origin: usize) -> (usize, usize, usize) {
        (
            self.equalities.iter().filter(|r| r.origin == origin).count(),
            self.inequalities.iter().filter(|r| r.origin == origin).count(),
            self.cones.iter().filter(|r| r.origin == origin).count(),
        )
    }

    /// Rows attributed to spec `spec` (including implied continuity rows).
    pub fn rows_for_spec(&self, spec: usize) -> (usize, usize, usize) {
        self.origins
            .iter()
            .enumerate()
            .filter(|(_, o)| o.spec == Some(spec))
            .map(|(i, _)| self.rows_for(i))
            .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    }

    pub fn linear_objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    pub fn argmax_level_var(&self) -> Option<usize> {
        self.var_roles.iter().position(|r| matches!(r, VarRole::ArgmaxLevel))
    }

    /// Largest violation of the equalities, inequalities and cones at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|r| (r.eval(x) - r.rhs).abs()).fold(0.0, f64::max);
        let ineq = self.inequalities.iter().map(|r| (r.eval(x) - r.rhs).max(0.0)).fold(0.0, f64::max);
        let cone = self
            .cones
            .iter()
            .map(|c| {
                let n = c.image(x).iter().map(|v| v * v).sum::<f64>().sqrt();
                (n - c.bound).max(0.0)
            })
            .fold(0.0, f64::max);
        eq.max(ineq).max(cone)
    }

    /// Sets auxiliary variables to the smallest values compatible with the
    /// heights: penalty epigraph variables to `|g|`, the argmax level to the
    /// largest height.
    pub fn lift_heights(&self, heights: &[f64]) -> Vec<f64> {
        let mut x = heights.to_vec();
        x.resize(self.n_vars(), 0.0);
        self.refresh_aux(&mut x);
        x
    }

    pub fn refresh_aux(&self, x: &mut [f64]) {
        let max_height = x[..self.n_heights].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if let Some(j) = self.argmax_level_var() {
            x[j] = max_height;
        }
        self.refresh_penalty_aux(x, 0.0);
    }

    /// True for rows that involve a penalty epigraph variable.
    pub fn is_penalty_row(&self, row: &LinearRow) -> bool {
        row.coeffs.iter().any(|(j, _)| matches!(self.var_roles[*j], VarRole::PenaltyAux { .. }))
    }

    /// Sets every penalty epigraph variable to `|g| + margin`.
    pub fn refresh_penalty_aux(&self, x: &mut [f64], margin: f64) {
        let mut abs_grad = vec![0.0f64; self.n_vars()];
        for r in &self.inequalities {
            if let Some(&(aux, c)) =
                r.coeffs.iter().find(|(j, _)| matches!(self.var_roles[*j], VarRole::PenaltyAux { .. }))
            {
                if c < 0.0 {
                    let g: f64 = r.coeffs.iter().filter(|(j, _)| *j != aux).map(|&(j, c)| c * x[j]).sum();
                    abs_grad[aux] = abs_grad[aux].max(g.abs());
                }
            }
        }
        for (j, role) in self.var_roles.iter().enumerate() {
            if matches!(role, VarRole::PenaltyAux { .. }) {
                x[j] = abs_grad[j] + margin;
            }
        }
    }

    /// Appends the penalty block, remapping its auxiliary variables after
    /// the existing ones.
    pub fn attach_penalty(&mut self, block: &PenaltyBlock) {
        if block.n_aux() == 0 {
            return;
        }
        let shift = self.n_vars() - self.n_heights;
        let remap = |j: usize| if j >= self.n_heights { j + shift } else { j };
        let origin = self.origins.len();
        self.origins.push(RowOrigin { label: "penalty".into(), spec: None });
        for r in &block.rows {
            self.inequalities.push(LinearRow {
                coeffs: r.coeffs.iter().map(|&(j, c)| (remap(j), c)).collect(),
                rhs: r.rhs,
                origin,
            });
        }
        self.objective.extend(block.objective.iter().map(|&(j, c)| (remap(j), c)));
        self.var_roles.extend(block.roles.iter().cloned());
    }
}

/// Epigraph reformulation of `λ Σ_k ‖g_k‖₁`.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub lambda: f64,
    /// Rows over heights and aux variables; aux `j` is indexed `n_heights + j`.
    pub rows: Vec<LinearRow>,
    pub objective: Vec<(usize, f64)>,
    pub roles: Vec<VarRole>,
}

impl PenaltyBlock {
    pub fn n_aux(&self) -> usize {
        self.roles.len()
    }
}

pub fn assemble_penalty(lambda: f64, complex: &SimplicialComplex) -> Result<PenaltyBlock> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig("penalty lambda must be finite and >= 0".into()));
    }
    let mut block = PenaltyBlock { lambda, rows: Vec::new(), objective: Vec::new(), roles: Vec::new() };
    if lambda == 0.0 {
        return Ok(block);
    }
    let d = complex.dim();
    let n_heights = complex.n_simplices() * (d + 1);
    for k in 0..complex.n_simplices() {
        let grad = gradient_coefficients(complex, k);
        for (axis, row) in grad.iter().enumerate() {
            let aux = n_heights + block.roles.len();
            block.roles.push(VarRole::PenaltyAux { simplex: k, axis });
            for sign in [1.0, -1.0] {
                let mut coeffs: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(i, c)| (k * (d + 1) + i, sign * c))
                    .collect();
                coeffs.push((aux, -1.0));
                block.rows.push(LinearRow { coeffs, rhs: 0.0, origin: 0 });
            }
            block.objective.push((aux, lambda));
        }
    }
    Ok(block)
}

/// Penalty value `λ Σ_k ‖g_k‖₁` computed directly from the piece gradients.
pub fn penalty_value(lambda: f64, f: &EpiSpline) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * (0..f.complex().n_simplices()).map(|k| f.piece_gradient(k).iter().map(|g| g.abs()).sum::<f64>()).sum::<f64>()
}

struct Builder<'a> {
    complex: &'a SimplicialComplex,
    d1: usize,
    form: StandardForm,
}

impl Builder<'_> {
    fn var(&self, k: usize, i: usize) -> usize {
        k * self.d1 + i
    }

    fn origin(&mut self, label: String, spec: usize) -> usize {
        self.form.origins.push(RowOrigin { label, spec: Some(spec) });
        self.form.origins.len() - 1
    }

    fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, origin: usize) {
        self.form.equalities.push(LinearRow { coeffs, rhs, origin });
    }

    fn le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, origin: usize) {
        self.form.inequalities.push(LinearRow { coeffs, rhs, origin });
    }

    fn dense(weights: &[f64]) -> Vec<(usize, f64)> {
        weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(j, w)| (j, *w)).collect()
    }

    fn scaled(coeffs: &[(usize, f64)], s: f64) -> Vec<(usize, f64)> {
        coeffs.iter().map(|&(j, c)| (j, s * c)).collect()
    }

    fn gradient_row(&self, k: usize, axis: usize) -> Vec<(usize, f64)> {
        gradient_coefficients(self.complex, k)[axis]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (self.var(k, i), *c))
            .collect()
    }

    fn continuity(&mut self, origin: usize) {
        for v in 0..self.complex.n_vertices() {
            let inc = self.complex.incidence(v);
            let (k0, i0) = inc[0];
            for &(k, i) in &inc[1..] {
                let row = vec![(self.var(k, i), 1.0), (self.var(k0, i0), -1.0)];
                self.eq(row, 0.0, origin);
            }
        }
    }

    fn locate_point(&self, p: &[f64]) -> Result<crate::geometry::Location> {
        if p.len() != self.complex.dim() || !self.complex.domain().contains(p, LOCATE_TOL) {
            return Err(Error::InvalidConstraint(format!("point {p:?} is outside the box")));
        }
        self.complex.locate(p)
    }
}

/// Compiles `specs` over the heights of `complex`.
pub fn assemble(specs: &[ConstraintSpec], complex: &SimplicialComplex) -> Result<StandardForm> {
    let d = complex.dim();
    let d1 = d + 1;
    let n_heights = complex.n_simplices() * d1;
    let var_roles = (0..complex.n_simplices())
        .flat_map(|k| (0..d1).map(move |i| VarRole::Height { simplex: k, vertex: i }))
        .collect();
    let mut b = Builder {
        complex,
        d1,
        form: StandardForm {
            n_heights,
            var_roles,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            cones: Vec::new(),
            objective: Vec::new(),
            origins: Vec::new(),
        },
    };

    let continuity_owner = specs
        .iter()
        .position(|s| matches!(s, ConstraintSpec::Continuity {}))
        .or_else(|| specs.iter().position(|s| s.implies_continuity()));
    let mut argmax_level: Option<usize> = None;
    let mut pinned: BTreeSet<usize> = BTreeSet::new();
    let mut argmax_bound_origin: Option<usize> = None;

    for (si, spec) in specs.iter().enumerate() {
        let origin = b.origin(spec.name().to_string(), si);
        if Some(si) == continuity_owner && !matches!(spec, ConstraintSpec::Continuity {}) {
            let implied = b.origin(format!("continuity (implied by {})", spec.name()), si);
            b.continuity(implied);
        }
        match spec {
            ConstraintSpec::Nonnegativity {} => {
                for j in 0..n_heights {
                    b.le(vec![(j, -1.0)], 0.0, origin);
                }
            }
            ConstraintSpec::IntegralEquals { target } => {
                finite(&[*target], "integral target")?;
                let w = Builder::dense(&integral_weights(complex));
                b.eq(w, *target, origin);
            }
            ConstraintSpec::IntegralBand { target, delta } => {
                finite(&[*target, *delta], "integral band")?;
                if *delta < 0.0 {
                    return Err(Error::InvalidConstraint("integral band delta must be >= 0".into()));
                }
                let w = Builder::dense(&integral_weights(complex));
                if *delta == 0.0 {
                    b.eq(w, *target, origin);
                } else {
                    b.le(w.clone(), target + delta, origin);
                    b.le(Builder::scaled(&w, -1.0), -(target - delta), origin);
                }
            }
            ConstraintSpec::ArgmaxCovers { points } => {
                let level = *argmax_level.get_or_insert_with(|| {
                    b.form.var_roles.push(VarRole::ArgmaxLevel);
                    b.form.var_roles.len() - 1
                });
                argmax_bound_origin.get_or_insert(origin);
                for p in points {
                    let loc = b.locate_point(p)?;
                    for (i, eta) in loc.barycentric.iter().enumerate() {
                        let var = b.var(loc.simplex, i);
                        if *eta > 0.0 && pinned.insert(var) {
                            b.eq(vec![(var, 1.0), (level, -1.0)], 0.0, origin);
                        }
                    }
                }
            }
            ConstraintSpec::LevelSetCovers { points, alpha } => {
                finite(&[*alpha], "level-set alpha")?;
                for p in points {
                    let loc = b.locate_point(p)?;
                    let coeffs = loc
                        .barycentric
                        .iter()
                        .enumerate()
                        .filter(|(_, m)| **m > 0.0)
                        .map(|(i, m)| (b.var(loc.simplex, i), -m))
                        .collect();
                    b.le(coeffs, -alpha, origin);
                }
            }
            ConstraintSpec::PointwiseBounds { lower, upper } => {
                let nv = complex.n_vertices();
                if let Some(l) = lower {
                    l.check(nv, "lower")?;
                }
                if let Some(u) = upper {
                    u.check(nv, "upper")?;
                }
                if let (Some(l), Some(u)) = (lower, upper) {
                    if let Some(v) = (0..nv).find(|&v| l.at(v) > u.at(v)) {
                        return Err(Error::InfeasibleSpec(format!(
                            "lower bound {} exceeds upper bound {} at vertex {v}",
                            l.at(v),
                            u.at(v)
                        )));
                    }
                }
                for k in 0..complex.n_simplices() {
                    for (i, &v) in complex.simplex(k).iter().enumerate() {
                        let var = b.var(k, i);
                        match (lower.as_ref().map(|l| l.at(v)), upper.as_ref().map(|u| u.at(v))) {
                            (Some(lo), Some(hi)) if lo == hi => b.eq(vec![(var, 1.0)], lo, origin),
                            (lo, hi) => {
                                if let Some(lo) = lo {
                                    b.le(vec![(var, -1.0)], -lo, origin);
                                }
                                if let Some(hi) = hi {
                                    b.le(vec![(var, 1.0)], hi, origin);
                                }
                            }
                        }
                    }
                }
            }
            ConstraintSpec::Continuity {} => {
                if Some(si) == continuity_owner {
                    b.continuity(origin);
                }
            }
            ConstraintSpec::LipschitzBound { kappa, norm } => {
                finite(&[*kappa], "Lipschitz kappa")?;
                if *kappa < 0.0 {
                    return Err(Error::InvalidConstraint("Lipschitz kappa must be >= 0".into()));
                }
                for k in 0..complex.n_simplices() {
                    let rows: Vec<Vec<(usize, f64)>> = (0..d).map(|a| b.gradient_row(k, a)).collect();
                    if *kappa == 0.0 {
                        for r in rows {
                            b.eq(r, 0.0, origin);
                        }
                        continue;
                    }
                    match norm {
                        GradientNorm::Euclidean => b.form.cones.push(ConeBlock { rows, bound: *kappa, origin }),
                        GradientNorm::Max => {
                            for r in rows {
                                b.le(r.clone(), *kappa, origin);
                                b.le(Builder::scaled(&r, -1.0), *kappa, origin);
                            }
                        }
                        GradientNorm::One => {
                            for signs in 0..(1u32 << d) {
                                let mut acc: Vec<(usize, f64)> = Vec::new();
                                for (a, r) in rows.iter().enumerate() {
                                    let s = if signs & (1 << a) != 0 { -1.0 } else { 1.0 };
                                    for &(j, c) in r {
                                        match acc.iter_mut().find(|(jj, _)| *jj == j) {
                                            Some(e) => e.1 += s * c,
                                            None => acc.push((j, s * c)),
                                        }
                                    }
                                }
                                acc.retain(|(_, c)| *c != 0.0);
                                acc.sort_by_key(|e| e.0);
                                b.le(acc, *kappa, origin);
                            }
                        }
                    }
                }
            }
            ConstraintSpec::Monotone { direction } => {
                if direction.len() != d || direction.iter().any(|s| !(-1..=1).contains(s)) {
                    return Err(Error::InvalidConstraint(format!(
                        "monotone direction needs {d} entries in {{-1, 0, 1}}"
                    )));
                }
                for k in 0..complex.n_simplices() {
                    for (a, &s) in direction.iter().enumerate() {
                        if s != 0 {
                            let r = b.gradient_row(k, a);
                            b.le(Builder::scaled(&r, -(s as f64)), 0.0, origin);
                        }
                    }
                }
            }
            ConstraintSpec::Concavity {} => {
                for k in 0..complex.n_simplices() {
                    for l in complex.adjacency(k).iter().flatten() {
                        let l = *l;
                        let sk = complex.simplex(k);
                        let j = complex
                            .simplex(l)
                            .iter()
                            .position(|v| !sk.contains(v))
                            .expect("adjacent simplices differ in one vertex");
                        let beta = complex.barycentric(k, complex.corner(l, j));
                        let mut coeffs = vec![(b.var(l, j), 1.0)];
                        coeffs.extend(
                            beta.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (b.var(k, i), -c)),
                        );
                        b.le(coeffs, 0.0, origin);
                    }
                }
            }
            ConstraintSpec::MomentBox { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::InvalidConstraint(format!("moment box needs {d} bounds per side")));
                }
                finite(lower, "moment lower bound")?;
                finite(upper, "moment upper bound")?;
                let rows = first_moment_weights(complex);
                for a in 0..d {
                    if lower[a] > upper[a] {
                        return Err(Error::InfeasibleSpec(format!(
                            "moment lower bound exceeds upper bound on axis {a}"
                        )));
                    }
                    let w = Builder::dense(&rows[a]);
                    if lower[a] == upper[a] {
                        b.eq(w, lower[a], origin);
                    } else {
                        b.le(w.clone(), upper[a], origin);
                        b.le(Builder::scaled(&w, -1.0), -lower[a], origin);
                    }
                }
            }
        }
    }

    if let (Some(level), Some(origin)) = (argmax_level, argmax_bound_origin) {
        // Heights tied to a pinned height by `h_a = h_b` rows already equal
        // the level; their bound rows would leave no interior.
        let mut parent: Vec<usize> = (0..n_heights).collect();
        for r in &b.form.equalities {
            if let [(a, ca), (c, cc)] = r.coeffs[..] {
                if r.rhs == 0.0 && a < n_heights && c < n_heights && ca == -cc && ca != 0.0 {
                    let (ra, rc) = (find_root(&mut parent, a), find_root(&mut parent, c));
                    parent[ra.max(rc)] = ra.min(rc);
                }
            }
        }
        let pinned_roots: BTreeSet<usize> = pinned.iter().map(|&v| find_root(&mut parent, v)).collect();
        for var in 0..n_heights {
            if !pinned_roots.contains(&find_root(&mut parent, var)) {
                b.le(vec![(var, 1.0), (level, -1.0)], 0.0, origin);
            }
        }
    }
    Ok(b.form)
}

fn find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidConstraint(format!("{what} must be finite")))
    }
}

/// Tolerances for [`check_semantics`].
#[derive(Debug, Clone, Copy)]
pub struct SemanticTolerance {
    pub linear: f64,
    pub argmax: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SemanticTolerance {
    fn default() -> Self {
        Self { linear: 1e-8, argmax: TOL_ARGMAX, samples: 1000, seed: 0 }
    }
}

/// Checks `f` against each specification directly (not through the
/// compiled rows). Returns one message per violated spec.
pub fn check_semantics(specs: &[ConstraintSpec], f: &EpiSpline, tol: &SemanticTolerance) -> Vec<String> {
    let complex = f.complex();
    let d = complex.dim();
    let d1 = d + 1;
    let mut violations = Vec::new();
    let mut report = |ok: bool, msg: String| {
        if !ok {
            violations.push(msg);
        }
    };
    let continuous = || {
        (0..complex.n_vertices()).all(|v| {
            let inc = complex.incidence(v);
            let (k0, i0) = inc[0];
            inc.iter().all(|&(k, i)| f.heights()[k * d1 + i] == f.heights()[k0 * d1 + i0])
        })
    };
    let value_at = |x: &[f64]| f.evaluate(x).unwrap_or(f64::NAN);

    for (si, spec) in specs.iter().enumerate() {
        let tag = format!("spec {si} ({})", spec.name());
        match spec {
            ConstraintSpec::Nonnegativity {} => {
                let m = f.heights().iter().cloned().fold(f64::INFINITY, f64::min);
                report(m >= -tol.linear, format!("{tag}: min height {m:e}"));
            }
            ConstraintSpec::IntegralEquals { target } => {
                let i = f.integral();
                report((i - target).abs() <= tol.linear, format!("{tag}: integral {i}"));
            }
            ConstraintSpec::IntegralBand { target, delta } => {
                let i = f.integral();
                report((i - target).abs() <= delta + tol.linear, format!("{tag}: integral {i}"));
            }
            ConstraintSpec::ArgmaxCovers { points } => {
                let (sup, _) = f.sup_and_argmax(tol.argmax);
                for p in points {
                    let v = value_at(p);
                    report(v >= sup - tol.argmax, format!("{tag}: f({p:?}) = {v} < sup {sup}"));
                }
            }
            ConstraintSpec::LevelSetCovers { points, alpha } => {
                for p in points {
                    let v = value_at(p);
                    report(v >= alpha - tol.linear, format!("{tag}: f({p:?}) = {v} < {alpha}"));
                }
            }
            ConstraintSpec::PointwiseBounds { lower, upper } => {
                for v in 0..complex.n_vertices() {
                    for &(k, i) in complex.incidence(v) {
                        let h = f.heights()[k * d1 + i];
                        if let Some(l) = lower {
                            report(h >= l.at(v) - tol.linear, format!("{tag}: vertex {v} below {}", l.at(v)));
                        }
                        if let Some(u) = upper {
                            report(h <= u.at(v) + tol.linear, format!("{tag}: vertex {v} above {}", u.at(v)));
                        }
                    }
                }
            }
            ConstraintSpec::Continuity {} => {
                report(continuous(), format!("{tag}: heights differ at a shared vertex"));
            }
            ConstraintSpec::LipschitzBound { kappa, norm } => {
                report(continuous(), format!("{tag}: not continuous"));
                let worst = (0..complex.n_simplices())
                    .map(|k| {
                        let g = f.piece_gradient(k);
                        match norm {
                            GradientNorm::Euclidean => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                            GradientNorm::Max => g.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
                            GradientNorm::One => g.iter().map(|v| v.abs()).sum(),
                        }
                    })
                    .fold(0.0, f64::max);
                report(worst <= kappa + tol.linear, format!("{tag}: gradient norm {worst}"));
            }
            ConstraintSpec::Monotone { direction } => {
                report(continuous(), format!("{tag}: not continuous"));
                let mut rng = ChaCha8Rng::seed_from_u64(tol.seed);
                let dom = complex.domain();
                for _ in 0..tol.samples {
                    let x: Vec<f64> = (0..d).map(|a| rng.random_range(dom.lower[a]..=dom.upper[a])).collect();
                    let mut y = x.clone();
                    for (a, &s) in direction.iter().enumerate() {
                        if s != 0 {
                            let t = rng.random::<f64>();
                            y[a] =
                                if s > 0 { x[a] + t * (dom.upper[a] - x[a]) } else { x[a] - t * (x[a] - dom.lower[a]) };
                        }
                    }
                    let (fx, fy) = (value_at(&x), value_at(&y));
                    if fy < fx - tol.linear {
                        report(false, format!("{tag}: f decreases from {x:?} to {y:?}"));
                        break;
                    }
                }
            }
            ConstraintSpec::Concavity {} => {
                report(continuous(), format!("{tag}: not continuous"));
                if let Some((x, y)) = concavity_counterexample(f, tol.samples, tol.seed, tol.linear) {
                    report(false, format!("{tag}: midpoint test fails for {x:?}, {y:?}"));
                }
            }
            ConstraintSpec::MomentBox { lower, upper } => {
                let m = f.first_moment();
                for a in 0..d {
                    report(
                        m[a] >= lower[a] - tol.linear && m[a] <= upper[a] + tol.linear,
                        format!("{tag}: moment {} outside [{}, {}]", m[a], lower[a], upper[a]),
                    );
                }
            }
        }
    }
    violations
}

/// Midpoint-concavity sampling oracle: a pair `(x, y)` with
/// `f((x+y)/2) < (f(x) + f(y))/2 - tol`, if one is found.
pub fn concavity_counterexample(f: &EpiSpline, pairs: usize, seed: u64, tol: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let dom = f.complex().domain();
    let d = dom.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let x: Vec<f64> = (0..d).map(|a| rng.random_range(dom.lower[a]..=dom.upper[a])).collect();
        let y: Vec<f64> = (0..d).map(|a| rng.random_range(dom.lower[a]..=dom.upper[a])).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (fx, fy, fm) = (
            f.evaluate(&x).unwrap_or(f64::NAN),
            f.evaluate(&y).unwrap_or(f64::NAN),
            f.evaluate(&mid).unwrap_or(f64::NAN),
        );
        if !(fm >= 0.5 * (fx + fy) - tol) {
            return Some((x, y));
        }
    }
    None
}
