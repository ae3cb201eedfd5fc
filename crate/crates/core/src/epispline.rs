//! First-order epi-splines: piecewise-affine functions on a simplicial
//! complex, stored as per-simplex vertex heights.
//!
//! Heights are laid out row-major as `N × (d+1)`; entry `k*(d+1) + i` is the
//! value of piece `k` at its local vertex `i`. Pieces need not agree on
//! shared facets. Wherever several closed simplices contain a point, the
//! spline takes the largest of their affine values, which makes it upper
//! semicontinuous (closed hypograph).

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ComplexFile, SimplicialComplex};

/// Default tolerance for deciding which vertices attain the supremum.
pub const TOL_ARGMAX: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EpiSpline {
    complex: Arc<SimplicialComplex>,
    heights: Vec<f64>,
}

/// Values of a spline on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEvaluation {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// `∫_T λ_i λ_j dx / |T|` for barycentric coordinates on a `d`-simplex.
pub fn product_moment(d: usize, i: usize, j: usize) -> f64 {
    let diag = if i == j { 2.0 } else { 1.0 };
    diag / (((d + 1) * (d + 2)) as f64)
}

/// Coefficients of the linear map `h ↦ ∫ f`.
pub fn integral_weights(complex: &SimplicialComplex) -> Vec<f64> {
    let d1 = complex.dim() + 1;
    let mut w = Vec::with_capacity(complex.n_simplices() * d1);
    for k in 0..complex.n_simplices() {
        let a = complex.volume(k) / d1 as f64;
        w.extend(std::iter::repeat_n(a, d1));
    }
    w
}

/// Coefficients of the linear map `h ↦ ∫ x f(x) dx`, one row per coordinate.
pub fn first_moment_weights(complex: &SimplicialComplex) -> Vec<Vec<f64>> {
    let d = complex.dim();
    let d1 = d + 1;
    let mut rows = vec![vec![0.0; complex.n_simplices() * d1]; d];
    for k in 0..complex.n_simplices() {
        let alpha = complex.volume(k);
        for j in 0..d1 {
            for i in 0..d1 {
                let w = alpha * product_moment(d, i, j);
                let ci = complex.corner(k, i);
                for (axis, row) in rows.iter_mut().enumerate() {
                    row[k * d1 + j] += w * ci[axis];
                }
            }
        }
    }
    rows
}

/// Per-simplex gradient map: `gradient_coefficients(c, k)[axis][i]` is the
/// coefficient of height `h_k^i` in component `axis` of the piece gradient.
pub fn gradient_coefficients(complex: &SimplicialComplex, k: usize) -> Vec<Vec<f64>> {
    let d = complex.dim();
    let inv = complex.edge_inverse(k);
    (0..d)
        .map(|axis| {
            let mut row = vec![0.0; d + 1];
            for r in 0..d {
                let m = inv[r * d + axis];
                row[r + 1] += m;
                row[0] -= m;
            }
            row
        })
        .collect()
}

impl EpiSpline {
    pub fn new(complex: Arc<SimplicialComplex>, heights: Vec<f64>) -> Result<Self> {
        let expected = complex.n_simplices() * (complex.dim() + 1);
        if heights.len() != expected {
            return Err(Error::InvalidConfig(format!("expected {expected} heights, got {}", heights.len())));
        }
        if let Some(pos) = heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::InvalidConfig(format!("height {pos} is not finite")));
        }
        Ok(Self { complex, heights })
    }

    pub fn constant(complex: Arc<SimplicialComplex>, value: f64) -> Self {
        let n = complex.n_simplices() * (complex.dim() + 1);
        Self { complex, heights: vec![value; n] }
    }

    /// Continuous interpolant of `f` at the vertices of the complex.
    pub fn interpolate(complex: Arc<SimplicialComplex>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values: Vec<f64> = complex.vertices().iter().map(|v| f(v)).collect();
        let heights = complex.simplices().iter().flat_map(|s| s.iter().map(|&v| values[v])).collect();
        Self { complex, heights }
    }

    pub fn complex(&self) -> &Arc<SimplicialComplex> {
        &self.complex
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn into_heights(self) -> Vec<f64> {
        self.heights
    }

    pub fn dim(&self) -> usize {
        self.complex.dim()
    }

    pub fn n_params(&self) -> usize {
        self.heights.len()
    }

    pub fn piece(&self, k: usize) -> &[f64] {
        let d1 = self.dim() + 1;
        &self.heights[k * d1..(k + 1) * d1]
    }

    /// Value of piece `k`'s affine extension at any `x`.
    pub fn affine_value(&self, k: usize, x: &[f64]) -> f64 {
        let mu = self.complex.barycentric(k, x);
        mu.iter().zip(self.piece(k)).map(|(m, h)| m * h).sum()
    }

    /// Upper semicontinuous evaluation.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let locs = self.complex.containing(x)?;
        Ok(locs
            .iter()
            .map(|loc| loc.barycentric.iter().zip(self.piece(loc.simplex)).map(|(m, h)| m * h).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Value at vertex `v` of the complex (max over incident pieces).
    pub fn vertex_value(&self, v: usize) -> f64 {
        let d1 = self.dim() + 1;
        self.complex.incidence(v).iter().map(|&(k, i)| self.heights[k * d1 + i]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn piece_gradient(&self, k: usize) -> Vec<f64> {
        let piece = self.piece(k);
        gradient_coefficients(&self.complex, k)
            .iter()
            .map(|row| row.iter().zip(piece).map(|(c, h)| c * h).sum())
            .collect()
    }

    pub fn integral(&self) -> f64 {
        let d1 = (self.dim() + 1) as f64;
        (0..self.complex.n_simplices()).map(|k| self.complex.volume(k) * self.piece(k).iter().sum::<f64>()).sum::<f64>()
            / d1
    }

    pub fn first_moment(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for k in 0..self.complex.n_simplices() {
            let alpha = self.complex.volume(k);
            let piece = self.piece(k);
            for (i, _) in piece.iter().enumerate() {
                let ci = self.complex.corner(k, i);
                for (j, hj) in piece.iter().enumerate() {
                    let w = alpha * product_moment(d, i, j) * hj;
                    for axis in 0..d {
                        m[axis] += w * ci[axis];
                    }
                }
            }
        }
        m
    }

    /// Exact `∫ f g` for two splines on the same complex.
    pub fn quadratic_form(&self, other: &EpiSpline) -> Result<f64> {
        if !Arc::ptr_eq(&self.complex, &other.complex) && *self.complex != *other.complex {
            return Err(Error::ComplexMismatch);
        }
        let d = self.dim();
        let mut total = 0.0;
        for k in 0..self.complex.n_simplices() {
            let (f, g) = (self.piece(k), other.piece(k));
            let mut s = 0.0;
            for (i, fi) in f.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    s += product_moment(d, i, j) * fi * gj;
                }
            }
            total += self.complex.volume(k) * s;
        }
        Ok(total)
    }

    /// Supremum and the vertex coordinates attaining it within `tol`.
    pub fn sup_and_argmax(&self, tol: f64) -> (f64, Vec<Vec<f64>>) {
        let values: Vec<f64> = (0..self.complex.n_vertices()).map(|v| self.vertex_value(v)).collect();
        let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let points = values
            .iter()
            .enumerate()
            .filter(|(_, &val)| val >= sup - tol)
            .map(|(v, _)| self.complex.vertex(v).to_vec())
            .collect();
        (sup, points)
    }

    /// Vertices whose value is at least `alpha`.
    pub fn superlevel_points(&self, alpha: f64) -> Vec<Vec<f64>> {
        (0..self.complex.n_vertices())
            .filter(|&v| self.vertex_value(v) >= alpha)
            .map(|v| self.complex.vertex(v).to_vec())
            .collect()
    }

    /// Re-expresses the spline on a finer complex over the same box by
    /// evaluating it at the new simplices' vertices.
    pub fn prolongate(&self, finer: Arc<SimplicialComplex>) -> Result<EpiSpline> {
        if finer.domain() != self.complex.domain() {
            return Err(Error::ComplexMismatch);
        }
        let values = (0..finer.n_vertices()).map(|v| self.evaluate(finer.vertex(v))).collect::<Result<Vec<f64>>>()?;
        let heights = finer.simplices().iter().flat_map(|s| s.iter().map(|&v| values[v])).collect();
        Ok(EpiSpline { complex: finer, heights })
    }

    /// Values on a regular grid with `resolution[i]` points along axis `i`
    /// (endpoints included; a single point sits at the midpoint). The first
    /// axis varies slowest.
    pub fn eval_grid(&self, resolution: &[usize]) -> Result<GridEvaluation> {
        let dom = self.complex.domain();
        let d = dom.dim();
        if resolution.len() != d || resolution.iter().any(|&r| r == 0) {
            return Err(Error::InvalidConfig(format!("grid resolution must have {d} positive entries")));
        }
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let r = resolution[a];
                if r == 1 {
                    vec![0.5 * (dom.lower[a] + dom.upper[a])]
                } else {
                    (0..r)
                        .map(|j| {
                            if j == r - 1 {
                                dom.upper[a]
                            } else {
                                dom.lower[a] + (dom.upper[a] - dom.lower[a]) * j as f64 / (r - 1) as f64
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let total: usize = resolution.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; d];
            for a in (0..d).rev() {
                x[a] = axes[a][rem % resolution[a]];
                rem /= resolution[a];
            }
            values.push(self.evaluate(&x)?);
            points.push(x);
        }
        Ok(GridEvaluation { points, values })
    }

    pub fn to_file(&self) -> ModelFile {
        let d1 = self.dim() + 1;
        ModelFile { complex: self.complex.to_file(), heights: self.heights.chunks(d1).map(|c| c.to_vec()).collect() }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let complex = Arc::new(SimplicialComplex::from_file(&file.complex)?);
        let d1 = complex.dim() + 1;
        if file.heights.iter().any(|row| row.len() != d1) {
            return Err(Error::InvalidConfig(format!("every height row must have {d1} entries")));
        }
        EpiSpline::new(complex, file.heights.concat())
    }
}

/// Serialized model: the complex inline plus an `N × (d+1)` height table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub complex: ComplexFile,
    pub heights: Vec<Vec<f64>>,
}

impl Serialize for EpiSpline {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpiSpline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ModelFile::deserialize(d)?;
        EpiSpline::from_file(&file).map_err(serde::de::Error::custom)
    }
}

impl GridEvaluation {
    /// CSV with header `x1,...,xd,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.points.first().map_or(0, |p| p.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (p, v) in self.points.iter().zip(&self.values) {
            let mut rec: Vec<String> = p.iter().map(|x| format_float(*x)).collect();
            rec.push(format_float(*v));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}
