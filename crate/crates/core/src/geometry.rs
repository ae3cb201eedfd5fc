//! Simplicial complex partitions of box domains.
//!
//! The only partition family built here is the Kuhn (Freudenthal)
//! triangulation of a regular grid: every grid cell is split into `d!`
//! simplices, one per permutation of the coordinate axes. Simplices are
//! indexed cell-major (cells in row-major order, first axis slowest), then
//! by the lexicographic rank of the permutation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, factorial, SmallLu};

/// Default cap on the number of simplices a triangulation may produce.
pub const DEFAULT_MAX_SIMPLICES: usize = 5_000_000;

/// Absolute tolerance used for domain membership and facet ties.
pub const LOCATE_TOL: f64 = 1e-10;

/// Axis-aligned compact box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() {
            return Err(Error::InvalidDomain("dimension must be at least 1".into()));
        }
        if self.lower.len() != self.upper.len() {
            return Err(Error::InvalidDomain(format!(
                "lower has {} coordinates but upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidDomain(format!(
                    "coordinate {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Clamps `x` into the box if it is within `tol` of it.
    pub fn clamp(&self, x: &[f64], tol: f64) -> Result<Vec<f64>> {
        if !self.contains(x, tol) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect())
    }
}

/// A point located in the complex: owning simplex and barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub simplex: usize,
    pub barycentric: Vec<f64>,
}

/// Hyper-volume of the simplex spanned by `d + 1` points in `R^d`.
///
/// Fails with `DegenerateGeometry` when the volume is below `1e-14` times
/// the cube of the longest edge (in `d` dimensions).
pub fn simplex_volume(points: &[Vec<f64>]) -> Result<f64> {
    let d = points.len().saturating_sub(1);
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::DegenerateGeometry(format!("expected d+1 points in R^d, got {} points", points.len())));
    }
    let mut edges = vec![0.0; d * d];
    let mut longest: f64 = 0.0;
    for (col, p) in points[1..].iter().enumerate() {
        for row in 0..d {
            edges[row * d + col] = p[row] - points[0][row];
        }
    }
    for a in 0..=d {
        for b in a + 1..=d {
            let len = points[a].iter().zip(&points[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            longest = longest.max(len);
        }
    }
    let vol = linalg::det(&edges, d).abs() / factorial(d) as f64;
    if !(vol > 1e-14 * longest.powi(d as i32)) {
        return Err(Error::DegenerateGeometry(format!("simplex volume {vol:e} is degenerate")));
    }
    Ok(vol)
}

/// Simplicial complex partition of a box (Kuhn triangulation).
#[derive(Debug, Clone)]
pub struct SimplicialComplex {
    domain: BoxDomain,
    cells_per_dim: Vec<usize>,
    cell_width: Vec<f64>,
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Vec<usize>>,
    volumes: Vec<f64>,
    /// `adjacency[k][i]`: simplex across the facet opposite local vertex `i`.
    adjacency: Vec<Vec<Option<usize>>>,
    /// Row-major inverse of the edge matrix `[c1-c0, ..., cd-c0]`, per simplex.
    edge_inverse: Vec<Vec<f64>>,
    /// For each vertex, the `(simplex, local index)` pairs that reference it.
    incidence: Vec<Vec<(usize, usize)>>,
}

impl PartialEq for SimplicialComplex {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.cells_per_dim == other.cells_per_dim
    }
}

/// Serialized form of a complex.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexFile {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells_per_dim: Vec<usize>,
    pub vertices: Vec<Vec<f64>>,
    pub simplices: Vec<Vec<usize>>,
}

fn lexicographic_permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(factorial(d));
    let mut p: Vec<usize> = (0..d).collect();
    loop {
        out.push(p.clone());
        // next permutation in lexicographic order
        let Some(i) = (0..d.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            break;
        };
        let j = (i + 1..d).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
    out
}

/// Builds the Kuhn triangulation of `domain` with the given grid resolution.
pub fn kuhn_triangulation(domain: &BoxDomain, cells_per_dim: &[usize]) -> Result<SimplicialComplex> {
    kuhn_triangulation_capped(domain, cells_per_dim, DEFAULT_MAX_SIMPLICES)
}

pub fn kuhn_triangulation_capped(
    domain: &BoxDomain,
    cells_per_dim: &[usize],
    max_simplices: usize,
) -> Result<SimplicialComplex> {
    domain.validate()?;
    let d = domain.dim();
    if cells_per_dim.len() != d {
        return Err(Error::InfeasiblePartition(format!(
            "cells_per_dim has {} entries for a {d}-dimensional box",
            cells_per_dim.len()
        )));
    }
    if cells_per_dim.iter().any(|&c| c == 0) {
        return Err(Error::InfeasiblePartition("cells_per_dim entries must be >= 1".into()));
    }
    let n_simplices = cells_per_dim
        .iter()
        .try_fold(factorial(d), |acc, &c| acc.checked_mul(c))
        .filter(|&n| n <= max_simplices)
        .ok_or_else(|| {
            Error::InfeasiblePartition(format!("{d}! x {cells_per_dim:?} simplices exceeds the cap of {max_simplices}"))
        })?;

    let cell_width: Vec<f64> = (0..d).map(|i| (domain.upper[i] - domain.lower[i]) / cells_per_dim[i] as f64).collect();

    // Vertex grid, first axis slowest.
    let vdims: Vec<usize> = cells_per_dim.iter().map(|c| c + 1).collect();
    let mut vstride = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        vstride[i] = vstride[i + 1] * vdims[i + 1];
    }
    let n_vertices: usize = vdims.iter().product();
    let coord = |axis: usize, j: usize| -> f64 {
        if j == cells_per_dim[axis] {
            domain.upper[axis]
        } else {
            domain.lower[axis] + (domain.upper[axis] - domain.lower[axis]) * j as f64 / cells_per_dim[axis] as f64
        }
    };
    let mut vertices = Vec::with_capacity(n_vertices);
    for flat in 0..n_vertices {
        let mut rem = flat;
        let mut v = Vec::with_capacity(d);
        for axis in 0..d {
            let j = rem / vstride[axis];
            rem %= vstride[axis];
            v.push(coord(axis, j));
        }
        vertices.push(v);
    }

    let perms = lexicographic_permutations(d);
    let n_cells: usize = cells_per_dim.iter().product();
    let mut cstride = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        cstride[i] = cstride[i + 1] * cells_per_dim[i + 1];
    }
    let mut simplices = Vec::with_capacity(n_simplices);
    for cell in 0..n_cells {
        let mut rem = cell;
        let mut corner = 0usize;
        for axis in 0..d {
            let j = rem / cstride[axis];
            rem %= cstride[axis];
            corner += j * vstride[axis];
        }
        for perm in &perms {
            let mut s = Vec::with_capacity(d + 1);
            let mut v = corner;
            s.push(v);
            for &axis in perm {
                v += vstride[axis];
                s.push(v);
            }
            simplices.push(s);
        }
    }
    debug_assert_eq!(simplices.len(), n_simplices);

    let mut volumes = Vec::with_capacity(n_simplices);
    let mut edge_inverse = Vec::with_capacity(n_simplices);
    for s in &simplices {
        let pts: Vec<Vec<f64>> = s.iter().map(|&v| vertices[v].clone()).collect();
        volumes.push(simplex_volume(&pts)?);
        let mut edges = vec![0.0; d * d];
        for col in 0..d {
            for row in 0..d {
                edges[row * d + col] = pts[col + 1][row] - pts[0][row];
            }
        }
        let inv = SmallLu::new(&edges, d)
            .inverse()
            .ok_or_else(|| Error::DegenerateGeometry("singular edge matrix".into()))?;
        edge_inverse.push(inv);
    }

    let mut incidence = vec![Vec::new(); n_vertices];
    for (k, s) in simplices.iter().enumerate() {
        for (i, &v) in s.iter().enumerate() {
            incidence[v].push((k, i));
        }
    }

    let mut facets: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
    let mut adjacency = vec![vec![None; d + 1]; n_simplices];
    for (k, s) in simplices.iter().enumerate() {
        for i in 0..=d {
            let mut key: Vec<usize> = s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
            key.sort_unstable();
            if let Some((l, li)) = facets.remove(&key) {
                adjacency[k][i] = Some(l);
                adjacency[l][li] = Some(k);
            } else {
                facets.insert(key, (k, i));
            }
        }
    }

    Ok(SimplicialComplex {
        domain: domain.clone(),
        cells_per_dim: cells_per_dim.to_vec(),
        cell_width,
        vertices,
        simplices,
        volumes,
        adjacency,
        edge_inverse,
        incidence,
    })
}

impl SimplicialComplex {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells_per_dim
    }

    pub fn n_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v]
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn simplex(&self, k: usize) -> &[usize] {
        &self.simplices[k]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn volume(&self, k: usize) -> f64 {
        self.volumes[k]
    }

    pub fn adjacency(&self, k: usize) -> &[Option<usize>] {
        &self.adjacency[k]
    }

    pub fn incidence(&self, v: usize) -> &[(usize, usize)] {
        &self.incidence[v]
    }

    /// Coordinates of local vertex `i` of simplex `k`.
    pub fn corner(&self, k: usize, i: usize) -> &[f64] {
        &self.vertices[self.simplices[k][i]]
    }

    /// Row-major inverse of simplex `k`'s edge matrix.
    pub fn edge_inverse(&self, k: usize) -> &[f64] {
        &self.edge_inverse[k]
    }

    /// Longest simplex diameter (the cell diagonal for Kuhn simplices).
    pub fn mesh_size(&self) -> f64 {
        self.cell_width.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    pub fn cell_width(&self) -> &[f64] {
        &self.cell_width
    }

    /// Barycentric coordinates of `x` with respect to simplex `k`; may be
    /// negative when `x` lies outside it.
    pub fn barycentric(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let c0 = self.corner(k, 0);
        let inv = &self.edge_inverse[k];
        let mut mu = vec![0.0; d + 1];
        let mut tail = 0.0;
        for r in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += inv[r * d + c] * (x[c] - c0[c]);
            }
            mu[r + 1] = s;
            tail += s;
        }
        mu[0] = 1.0 - tail;
        mu
    }

    fn candidate_cells(&self, x: &[f64]) -> Vec<usize> {
        let d = self.dim();
        let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(d);
        for axis in 0..d {
            let c = self.cells_per_dim[axis];
            let u = (x[axis] - self.domain.lower[axis]) / self.cell_width[axis];
            let j = (u.floor().max(0.0) as usize).min(c - 1);
            let slack = LOCATE_TOL / self.cell_width[axis];
            let mut js = vec![j];
            if j > 0 && (u - j as f64).abs() <= slack {
                js.push(j - 1);
            }
            if j + 1 < c && (u - (j + 1) as f64).abs() <= slack {
                js.push(j + 1);
            }
            js.sort_unstable();
            per_axis.push(js);
        }
        let mut cells = vec![0usize];
        for (axis, js) in per_axis.iter().enumerate() {
            let stride: usize = self.cells_per_dim[axis + 1..].iter().product();
            cells = cells.iter().flat_map(|base| js.iter().map(move |j| base + j * stride)).collect();
        }
        cells.sort_unstable();
        cells
    }

    /// Every simplex whose closure contains `x`, in increasing index order.
    pub fn containing(&self, x: &[f64]) -> Result<Vec<Location>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        let x = self.domain.clamp(x, LOCATE_TOL)?;
        let per_cell = factorial(d);
        let mut found = Vec::new();
        let mut fallback: Option<(f64, usize, Vec<f64>)> = None;
        for cell in self.candidate_cells(&x) {
            for k in cell * per_cell..(cell + 1) * per_cell {
                let mu = self.barycentric(k, &x);
                let worst = mu.iter().cloned().fold(f64::INFINITY, f64::min);
                if worst >= -LOCATE_TOL {
                    found.push(Location { simplex: k, barycentric: clean_barycentric(mu) });
                } else if fallback.as_ref().is_none_or(|(w, _, _)| worst > *w) {
                    fallback = Some((worst, k, mu));
                }
            }
        }
        if found.is_empty() {
            // Rounding pushed the point marginally outside every candidate.
            let (_, k, mu) = fallback.expect("at least one candidate cell");
            found.push(Location { simplex: k, barycentric: clean_barycentric(mu) });
        }
        Ok(found)
    }

    /// Locates `x`; facet ties go to the lowest simplex index.
    pub fn locate(&self, x: &[f64]) -> Result<Location> {
        Ok(self.containing(x)?.swap_remove(0))
    }

    /// Point reconstructed from a location, `Σ μ_i c_i`.
    pub fn reconstruct(&self, loc: &Location) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for (i, mu) in loc.barycentric.iter().enumerate() {
            for (xc, cc) in x.iter_mut().zip(self.corner(loc.simplex, i)) {
                *xc += mu * cc;
            }
        }
        x
    }

    pub fn to_file(&self) -> ComplexFile {
        ComplexFile {
            dim: self.dim(),
            lower: self.domain.lower.clone(),
            upper: self.domain.upper.clone(),
            cells_per_dim: self.cells_per_dim.clone(),
            vertices: self.vertices.clone(),
            simplices: self.simplices.clone(),
        }
    }

    /// Rebuilds a complex from its serialized form, checking that the stored
    /// vertices and simplices match the regenerated triangulation.
    pub fn from_file(file: &ComplexFile) -> Result<Self> {
        let domain = BoxDomain::new(file.lower.clone(), file.upper.clone())?;
        if file.dim != domain.dim() {
            return Err(Error::InvalidConfig(format!(
                "complex dim {} does not match box dimension {}",
                file.dim,
                domain.dim()
            )));
        }
        let complex = kuhn_triangulation(&domain, &file.cells_per_dim)?;
        if complex.simplices != file.simplices || complex.vertices != file.vertices {
            return Err(Error::InvalidConfig(
                "complex vertices/simplices do not match the Kuhn triangulation of the stated grid".into(),
            ));
        }
        Ok(complex)
    }
}

impl Serialize for SimplicialComplex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimplicialComplex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ComplexFile::deserialize(d)?;
        SimplicialComplex::from_file(&file).map_err(serde::de::Error::custom)
    }
}

fn clean_barycentric(mut mu: Vec<f64>) -> Vec<f64> {
    for m in mu.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= s);
    mu
}
