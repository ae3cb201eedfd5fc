//! Reference computations written directly from the definitions, sharing
//! nothing with the library beyond the vertex coordinates and heights.

use hypofit::constraints::{BoundValue, ConstraintSpec, GradientNorm};
use hypofit::epispline::{EpiSpline, TOL_ARGMAX};
use hypofit::geometry::SimplicialComplex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corners(c: &SimplicialComplex, k: usize) -> Vec<Vec<f64>> {
    (0..=c.dim()).map(|i| c.corner(k, i).to_vec()).collect()
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let Some(piv) = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())) else {
            return 0.0;
        };
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for j in col..n {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    det
}

fn edges(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = p.len() - 1;
    // row a holds the a-th coordinate of every edge
    (0..d).map(|a| (1..=d).map(|i| p[i][a] - p[0][a]).collect()).collect()
}

pub fn volume(p: &[Vec<f64>]) -> f64 {
    let d = p.len() - 1;
    det(edges(p)).abs() / (1..=d).product::<usize>() as f64
}

/// Gradient of the affine interpolant of `h` over the simplex `p`.
pub fn gradient(p: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    let d = p.len() - 1;
    let rows: Vec<Vec<f64>> = (1..=d).map(|i| (0..d).map(|a| p[i][a] - p[0][a]).collect()).collect();
    let rhs: Vec<f64> = (1..=d).map(|i| h[i] - h[0]).collect();
    solve(rows, rhs).expect("nondegenerate simplex")
}

pub fn barycentric(p: &[Vec<f64>], x: &[f64]) -> Option<Vec<f64>> {
    let d = p.len() - 1;
    let z: Vec<f64> = (0..d).map(|a| x[a] - p[0][a]).collect();
    let w = solve(edges(p), z)?;
    let mut mu = vec![1.0 - w.iter().sum::<f64>()];
    mu.extend(w);
    Some(mu)
}

/// Value at `x`: the largest value among the pieces whose simplex holds `x`.
pub fn evaluate(f: &EpiSpline, x: &[f64]) -> f64 {
    let c = f.complex();
    let mut best = f64::NEG_INFINITY;
    for k in 0..c.n_simplices() {
        let p = corners(c, k);
        if let Some(mu) = barycentric(&p, x) {
            if mu.iter().all(|&m| m >= -1e-12) {
                let v: f64 = mu.iter().zip(f.piece(k)).map(|(m, h)| m * h).sum();
                best = best.max(v);
            }
        }
    }
    best
}

pub fn integral(f: &EpiSpline) -> f64 {
    let c = f.complex();
    (0..c.n_simplices())
        .map(|k| {
            let h = f.piece(k);
            volume(&corners(c, k)) * h.iter().sum::<f64>() / h.len() as f64
        })
        .sum()
}

pub fn gradient_norm(g: &[f64], norm: GradientNorm) -> f64 {
    match norm {
        GradientNorm::Euclidean => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        GradientNorm::Max => g.iter().fold(0.0, |m, v| m.max(v.abs())),
        GradientNorm::One => g.iter().map(|v| v.abs()).sum(),
    }
}

/// Largest value of the spline, attained at a vertex.
pub fn supremum(f: &EpiSpline) -> f64 {
    f.heights().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Audit {
    pub integral_gap: f64,
    pub argmax_gap: f64,
    pub lipschitz_excess: f64,
    pub continuity_gaps: usize,
    pub concavity_failures: usize,
    pub bound_excess: f64,
}

/// Violations of `specs` by `f` measured with the reference computations.
/// `band` widens integral equalities when the estimator fell back to a band.
pub fn audit(specs: &[ConstraintSpec], f: &EpiSpline, band: Option<f64>) -> Audit {
    let c = f.complex();
    let mut out = Audit::default();
    for spec in specs {
        match spec {
            ConstraintSpec::IntegralEquals { target } => {
                let gap = (integral(f) - target).abs() - band.unwrap_or(0.0);
                out.integral_gap = out.integral_gap.max(gap);
            }
            ConstraintSpec::IntegralBand { target, delta } => {
                out.integral_gap = out.integral_gap.max((integral(f) - target).abs() - delta);
            }
            ConstraintSpec::ArgmaxCovers { points } => {
                let sup = supremum(f);
                for p in points {
                    out.argmax_gap = out.argmax_gap.max(sup - evaluate(f, p));
                }
            }
            ConstraintSpec::LipschitzBound { kappa, norm } => {
                for k in 0..c.n_simplices() {
                    let g = gradient(&corners(c, k), f.piece(k));
                    out.lipschitz_excess = out.lipschitz_excess.max(gradient_norm(&g, *norm) - kappa);
                }
            }
            ConstraintSpec::Continuity {} => {
                for v in 0..c.n_vertices() {
                    let vals: Vec<f64> = c.incidence(v).iter().map(|&(k, i)| f.piece(k)[i]).collect();
                    if vals.iter().any(|x| *x != vals[0]) {
                        out.continuity_gaps += 1;
                    }
                }
            }
            ConstraintSpec::Concavity {} => {
                let dom = c.domain();
                let mut rng = ChaCha8Rng::seed_from_u64(17);
                let mut draw = || -> Vec<f64> {
                    dom.lower.iter().zip(&dom.upper).map(|(l, u)| rng.random_range(*l..*u)).collect()
                };
                for _ in 0..1000 {
                    let (x, y) = (draw(), draw());
                    let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                    let (fx, fy, fm) = (evaluate(f, &x), evaluate(f, &y), evaluate(f, &mid));
                    if fm < 0.5 * (fx + fy) - 1e-9 * (1.0 + fm.abs()) {
                        out.concavity_failures += 1;
                    }
                }
            }
            ConstraintSpec::Nonnegativity {} => {
                let low = f.heights().iter().cloned().fold(f64::INFINITY, f64::min);
                out.bound_excess = out.bound_excess.max(-low);
            }
            ConstraintSpec::PointwiseBounds { lower, upper } => {
                for v in 0..c.n_vertices() {
                    for &(k, i) in c.incidence(v) {
                        let h = f.piece(k)[i];
                        if let Some(b) = lower {
                            out.bound_excess = out.bound_excess.max(bound_at(b, v) - h);
                        }
                        if let Some(b) = upper {
                            out.bound_excess = out.bound_excess.max(h - bound_at(b, v));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn bound_at(b: &BoundValue, v: usize) -> f64 {
    match b {
        BoundValue::Uniform(x) => *x,
        BoundValue::PerVertex(xs) => xs[v],
    }
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.integral_gap <= 1e-8
            && self.argmax_gap <= TOL_ARGMAX
            && self.lipschitz_excess <= 1e-8
            && self.continuity_gaps == 0
            && self.concavity_failures == 0
            && self.bound_excess <= 1e-9
    }
}
