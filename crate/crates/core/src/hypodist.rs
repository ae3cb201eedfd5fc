//! Attouch-Wets (hypo-) distance between epi-splines.
//!
//! The distance integrates `dl_ρ(f, g) e^{-ρ}` over `ρ ≥ 0`, where `dl_ρ` is
//! the largest discrepancy between the point-to-hypograph distance functions
//! of `f` and `g` over the `ρ`-ball around a fixed center in `R^d × R`.
//! `dl_ρ` is evaluated on a deterministic point cloud, so the reported value
//! under-approximates the exact one; the cloud is shared by every radius,
//! which makes the sampled `dl_ρ` exactly nondecreasing in `ρ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epispline::EpiSpline;
use crate::error::{Error, Result};
use crate::linalg;

/// Norm on `R^d × R` used for point-to-set distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Euclidean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypoDistanceConfig {
    /// Center in `R^d × R`; `None` selects `(box centroid, 0)`.
    pub center: Option<Vec<f64>>,
    pub norm: Norm,
    pub rho_max: f64,
    pub rho_nodes: usize,
    pub ball_samples: usize,
    pub seed: u64,
}

impl Default for HypoDistanceConfig {
    fn default() -> Self {
        Self { center: None, norm: Norm::Euclidean, rho_max: 8.0, rho_nodes: 64, ball_samples: 4096, seed: 0 }
    }
}

impl HypoDistanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > 0.0 && self.rho_max.is_finite()) {
            return Err(Error::InvalidConfig("rho_max must be positive".into()));
        }
        if self.rho_nodes < 8 {
            return Err(Error::InvalidConfig("rho_nodes must be at least 8".into()));
        }
        if self.ball_samples < 64 {
            return Err(Error::InvalidConfig("ball_samples must be at least 64".into()));
        }
        Ok(())
    }

    fn center_for(&self, f: &EpiSpline) -> Result<Vec<f64>> {
        let d = f.dim();
        match &self.center {
            Some(c) if c.len() == d + 1 && c.iter().all(|v| v.is_finite()) => Ok(c.clone()),
            Some(c) => {
                Err(Error::InvalidConfig(format!("center must have {} finite coordinates, got {}", d + 1, c.len())))
            }
            None => {
                let mut c = f.complex().domain().centroid();
                c.push(0.0);
                Ok(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub dl_value: f64,
    pub dl_rho_curve: Vec<(f64, f64)>,
    /// Upper estimate of the neglected integral over `ρ > rho_max`.
    pub truncation_bound: f64,
    /// Heuristic bound on the under-approximation caused by sampling.
    pub sampling_resolution: f64,
}

const BLOCK: usize = 16;
const MAX_DIM: usize = 3;

struct Block {
    range: std::ops::Range<usize>,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
    top: f64,
}

struct Piece {
    corners: Vec<Vec<f64>>,
    gradient: Vec<f64>,
    offset: f64,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
    /// Largest height on the piece.
    top: f64,
    edge_inverse: Vec<f64>,
}

/// Hypograph of an epi-spline, preprocessed for repeated distance queries.
pub struct Hypograph<'a> {
    spline: &'a EpiSpline,
    pieces: Vec<Piece>,
    /// Consecutive runs of pieces with their joint bounding box and top.
    blocks: Vec<Block>,
    norm: Norm,
    /// A highest vertex and its value.
    peak: (Vec<f64>, f64),
}

impl<'a> Hypograph<'a> {
    pub fn new(spline: &'a EpiSpline, norm: Norm) -> Result<Self> {
        let c = spline.complex();
        let d = c.dim();
        if d > MAX_DIM {
            return Err(Error::UnsupportedDimension(d));
        }
        let pieces: Vec<Piece> = (0..c.n_simplices())
            .map(|k| {
                let corners: Vec<Vec<f64>> = (0..=d).map(|i| c.corner(k, i).to_vec()).collect();
                let gradient = spline.piece_gradient(k);
                let offset = spline.piece(k)[0] - linalg::dot(&gradient, &corners[0]);
                let bbox_lo = (0..d).map(|a| corners.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min)).collect();
                let bbox_hi = (0..d).map(|a| corners.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
                Piece {
                    corners,
                    gradient,
                    offset,
                    bbox_lo,
                    bbox_hi,
                    top: spline.piece(k).iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    edge_inverse: c.edge_inverse(k).to_vec(),
                }
            })
            .collect();
        let mut peak = (c.vertex(0).to_vec(), spline.vertex_value(0));
        for v in 1..c.n_vertices() {
            let val = spline.vertex_value(v);
            if val > peak.1 {
                peak = (c.vertex(v).to_vec(), val);
            }
        }
        let blocks = (0..pieces.len())
            .step_by(BLOCK)
            .map(|start| {
                let range = start..(start + BLOCK).min(pieces.len());
                let run = &pieces[range.clone()];
                Block {
                    bbox_lo: (0..d).map(|a| run.iter().map(|p| p.bbox_lo[a]).fold(f64::INFINITY, f64::min)).collect(),
                    bbox_hi: (0..d)
                        .map(|a| run.iter().map(|p| p.bbox_hi[a]).fold(f64::NEG_INFINITY, f64::max))
                        .collect(),
                    top: run.iter().map(|p| p.top).fold(f64::NEG_INFINITY, f64::max),
                    range,
                }
            })
            .collect();
        Ok(Self { spline, pieces, blocks, norm, peak })
    }

    /// Distance from `p ∈ R^d × R` to the hypograph.
    pub fn distance(&self, p: &[f64]) -> f64 {
        let d = self.spline.dim();
        let (y0, beta0) = (&p[..d], p[d]);
        let dom = self.spline.complex().domain();
        let combine = |planar: f64, lift: f64| match self.norm {
            Norm::Euclidean => (planar * planar + lift * lift).sqrt(),
            Norm::Max => planar.max(lift),
        };
        // upper bounds from two hypograph points: above the nearest point of
        // the box, and at the highest vertex
        let (peak_y, peak_v) = (&self.peak.0, self.peak.1);
        let mut best = combine(point_norm(y0, peak_y, self.norm), (beta0 - peak_v).max(0.0));
        let nearest: Vec<f64> =
            y0.iter().zip(dom.lower.iter().zip(&dom.upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
        if let Ok(v) = self.spline.evaluate(&nearest) {
            let planar = point_norm(y0, &nearest, self.norm);
            if planar == 0.0 && beta0 <= v {
                return 0.0;
            }
            best = best.min(combine(planar, (beta0 - v).max(0.0)));
        }
        let lower = |lo: &[f64], hi: &[f64], top: f64| combine(bbox_gap(y0, lo, hi, self.norm), (beta0 - top).max(0.0));
        // visit blocks in order of their lower bounds
        let mut order: Vec<(f64, usize)> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| (lower(&blk.bbox_lo, &blk.bbox_hi, blk.top), b))
            .filter(|(lb, _)| *lb < best)
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (block_lb, b) in order {
            if block_lb >= best {
                break;
            }
            for piece in &self.pieces[self.blocks[b].range.clone()] {
                if lower(&piece.bbox_lo, &piece.bbox_hi, piece.top) >= best {
                    continue;
                }
                let dist = match self.norm {
                    Norm::Euclidean => piece_distance_euclidean(piece, y0, beta0),
                    Norm::Max => piece_distance_max(piece, y0, beta0),
                };
                best = best.min(dist);
            }
        }
        best
    }
}

fn bbox_gap(y: &[f64], lo: &[f64], hi: &[f64], norm: Norm) -> f64 {
    let gaps = y.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| {
        if v < l {
            l - v
        } else if v > h {
            v - h
        } else {
            0.0
        }
    });
    match norm {
        Norm::Euclidean => gaps.map(|g| g * g).sum::<f64>().sqrt(),
        Norm::Max => gaps.fold(0.0, f64::max),
    }
}

/// Euclidean distance from `(y0, beta0)` to `{(y, β): y ∈ T, β ≤ a(y)}` by
/// enumerating the faces of `T` and, on each face's affine hull, the three
/// stationarity regimes (above the graph, below it, on it).
fn piece_distance_euclidean(piece: &Piece, y0: &[f64], beta0: f64) -> f64 {
    let d = y0.len();
    let affine = |y: &[f64]| linalg::dot(&piece.gradient, y) + piece.offset;
    let objective = |y: &[f64]| -> f64 {
        let planar: f64 = y.iter().zip(y0).map(|(a, b)| (a - b) * (a - b)).sum();
        let lift = (beta0 - affine(y)).max(0.0);
        planar + lift * lift
    };
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << (d + 1)) {
        let mut face = [0usize; MAX_DIM + 1];
        let mut len = 0;
        for i in 0..=d {
            if mask & (1 << i) != 0 {
                face[len] = i;
                len += 1;
            }
        }
        let origin = &piece.corners[face[0]];
        let m = len - 1;
        if m == 0 {
            best = best.min(objective(origin));
            continue;
        }
        // Edge vectors of the face.
        let mut edges = [[0.0; MAX_DIM]; MAX_DIM];
        for (e, &v) in edges.iter_mut().zip(&face[1..len]) {
            for a in 0..d {
                e[a] = piece.corners[v][a] - origin[a];
            }
        }
        let mut z = [0.0; MAX_DIM];
        for a in 0..d {
            z[a] = y0[a] - origin[a];
        }
        let mut gram = [[0.0; MAX_DIM]; MAX_DIM];
        let mut rhs = [0.0; MAX_DIM];
        let mut q = [0.0; MAX_DIM];
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = linalg::dot(&edges[i][..d], &edges[j][..d]);
            }
            rhs[i] = linalg::dot(&edges[i][..d], &z[..d]);
            q[i] = linalg::dot(&edges[i][..d], &piece.gradient);
        }
        let r = beta0 - affine(origin);

        let mut candidates = [[0.0; MAX_DIM]; 3];
        let mut n_cand = 0;
        let Some(w_above) = solve_small(&gram, &rhs, m) else { continue };
        let ginv_q = solve_small(&gram, &q, m).unwrap_or([0.0; MAX_DIM]);
        let denom = linalg::dot(&q[..m], &ginv_q[..m]);
        if denom > 1e-300 {
            let shift = (r - linalg::dot(&q[..m], &w_above[..m])) / denom;
            for i in 0..m {
                candidates[n_cand][i] = w_above[i] + shift * ginv_q[i];
            }
            n_cand += 1;
        }
        let mut lifted = gram;
        let mut lifted_rhs = [0.0; MAX_DIM];
        for i in 0..m {
            for j in 0..m {
                lifted[i][j] += q[i] * q[j];
            }
            lifted_rhs[i] = rhs[i] + q[i] * r;
        }
        if let Some(w) = solve_small(&lifted, &lifted_rhs, m) {
            candidates[n_cand] = w;
            n_cand += 1;
        }
        candidates[n_cand] = w_above;
        n_cand += 1;

        for w in &candidates[..n_cand] {
            let w = &w[..m];
            let lead = 1.0 - w.iter().sum::<f64>();
            if lead < -1e-12 || w.iter().any(|&x| x < -1e-12) {
                continue;
            }
            let mut y = [0.0; MAX_DIM];
            for a in 0..d {
                y[a] = origin[a] + edges[..m].iter().zip(w).map(|(e, wi)| e[a] * wi).sum::<f64>();
            }
            best = best.min(objective(&y[..d]));
        }
    }
    best.sqrt()
}

/// Gaussian elimination with partial pivoting on the leading `m × m` block.
fn solve_small(a: &[[f64; MAX_DIM]; MAX_DIM], b: &[f64; MAX_DIM], m: usize) -> Option<[f64; MAX_DIM]> {
    let (mut a, mut x) = (*a, *b);
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()).then(j.cmp(&i)))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for j in col + 1..m {
                    a[row][j] -= f * a[col][j];
                }
                x[row] -= f * x[col];
            }
        }
    }
    for i in (0..m).rev() {
        let s = x[i] - (i + 1..m).map(|j| a[i][j] * x[j]).sum::<f64>();
        x[i] = s / a[i][i];
    }
    Some(x)
}

/// Max-norm distance to the piece's hypograph: a linear program in
/// `(y, t)` solved by enumerating vertices of the feasible polyhedron.
fn piece_distance_max(piece: &Piece, y0: &[f64], beta0: f64) -> f64 {
    let d = y0.len();
    let nv = d + 1;
    // rows: coeffs · (y, t) <= rhs
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(3 * d + 2);
    let c0 = &piece.corners[0];
    let inv = &piece.edge_inverse;
    let mut sum_row = vec![0.0; nv];
    let mut sum_rhs = 0.0;
    for r in 0..d {
        // λ_r(y) = Σ_c inv[r][c] (y_c - c0_c) >= 0
        let mut coeffs = vec![0.0; nv];
        let mut shift = 0.0;
        for c in 0..d {
            coeffs[c] = -inv[r * d + c];
            shift += inv[r * d + c] * c0[c];
            sum_row[c] += inv[r * d + c];
        }
        sum_rhs += shift;
        rows.push((coeffs, -shift));
    }
    // λ_0 = 1 - Σ λ_r >= 0  ⇔  Σ_c (Σ_r inv[r][c]) y_c <= 1 + Σ shift
    rows.push((sum_row, 1.0 + sum_rhs));
    for a in 0..d {
        let mut up = vec![0.0; nv];
        up[a] = 1.0;
        up[d] = -1.0;
        rows.push((up, y0[a]));
        let mut down = vec![0.0; nv];
        down[a] = -1.0;
        down[d] = -1.0;
        rows.push((down, -y0[a]));
    }
    let mut graph = vec![0.0; nv];
    for a in 0..d {
        graph[a] = -piece.gradient[a];
    }
    graph[d] = -1.0;
    rows.push((graph, piece.offset - beta0));

    let scale = 1.0 + y0.iter().map(|v| v.abs()).fold(beta0.abs(), f64::max);
    let mut best = f64::INFINITY;
    let n_rows = rows.len();
    let mut pick: Vec<usize> = (0..nv).collect();
    loop {
        let mut a = vec![0.0; nv * nv];
        let mut b = vec![0.0; nv];
        for (ri, &row) in pick.iter().enumerate() {
            a[ri * nv..(ri + 1) * nv].copy_from_slice(&rows[row].0);
            b[ri] = rows[row].1;
        }
        if let Some(z) = linalg::solve(&a, nv, &b) {
            let ok = z.iter().all(|v| v.is_finite())
                && rows.iter().all(|(c, rhs)| linalg::dot(c, &z) <= rhs + 1e-11 * scale);
            if ok {
                best = best.min(z[d]);
            }
        }
        // next combination
        let Some(i) = (0..nv).rev().find(|&i| pick[i] < n_rows - nv + i) else {
            break;
        };
        pick[i] += 1;
        for j in i + 1..nv {
            pick[j] = pick[j - 1] + 1;
        }
    }
    best.max(0.0)
}

/// Distance from `p` to the hypograph of `f`.
pub fn dist_point_to_hypo(p: &[f64], f: &EpiSpline, norm: Norm) -> Result<f64> {
    if p.len() != f.dim() + 1 {
        return Err(Error::InvalidConfig(format!("point must have {} coordinates", f.dim() + 1)));
    }
    Ok(Hypograph::new(f, norm)?.distance(p))
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Deterministic sample cloud: the center, then one block of
/// `ball_samples` Halton points (randomly shifted by `seed`) in each ball of
/// radius `ρ_j`, `j = 1..rho_nodes`.
fn sample_cloud(center: &[f64], cfg: &HypoDistanceConfig) -> Vec<(f64, Vec<f64>)> {
    let dim = center.len();
    let primes = first_primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut cloud = Vec::with_capacity(1 + (cfg.rho_nodes - 1) * cfg.ball_samples);
    cloud.push((0.0, center.to_vec()));
    let mut index = 1u64;
    for j in 1..cfg.rho_nodes {
        let rho = cfg.rho_max * j as f64 / (cfg.rho_nodes - 1) as f64;
        let mut accepted = 0;
        while accepted < cfg.ball_samples {
            let u: Vec<f64> = (0..dim)
                .map(|a| {
                    let v = radical_inverse(index, primes[a]) + shift[a];
                    2.0 * (v - v.floor()) - 1.0
                })
                .collect();
            index += 1;
            let inside = match cfg.norm {
                Norm::Euclidean => linalg::norm2(&u) <= 1.0,
                Norm::Max => true,
            };
            if !inside {
                continue;
            }
            let p: Vec<f64> = center.iter().zip(&u).map(|(c, v)| c + rho * v).collect();
            let radius = point_norm(&p, center, cfg.norm);
            cloud.push((radius, p));
            accepted += 1;
        }
    }
    cloud
}

fn point_norm(p: &[f64], c: &[f64], norm: Norm) -> f64 {
    let diffs = p.iter().zip(c).map(|(a, b)| (a - b).abs());
    match norm {
        Norm::Euclidean => diffs.map(|v| v * v).sum::<f64>().sqrt(),
        Norm::Max => diffs.fold(0.0, f64::max),
    }
}

/// Discrepancy between the two distance functions at every cloud point.
fn discrepancies(f: &EpiSpline, g: &EpiSpline, cloud: &[(f64, Vec<f64>)], norm: Norm) -> Result<Vec<f64>> {
    let hf = Hypograph::new(f, norm)?;
    let hg = Hypograph::new(g, norm)?;
    Ok(cloud.par_iter().map(|(_, p)| (hf.distance(p) - hg.distance(p)).abs()).collect())
}

fn check_compatible(f: &EpiSpline, g: &EpiSpline) -> Result<()> {
    if f.complex().domain() != g.complex().domain() {
        return Err(Error::ComplexMismatch);
    }
    Ok(())
}

/// Sampled `ρ`-localized distance.
pub fn dl_rho(f: &EpiSpline, g: &EpiSpline, rho: f64, cfg: &HypoDistanceConfig) -> Result<f64> {
    cfg.validate()?;
    check_compatible(f, g)?;
    if rho < 0.0 {
        return Err(Error::InvalidConfig("rho must be nonnegative".into()));
    }
    let center = cfg.center_for(f)?;
    let cloud: Vec<(f64, Vec<f64>)> = sample_cloud(&center, cfg).into_iter().filter(|(r, _)| *r <= rho).collect();
    let diffs = discrepancies(f, g, &cloud, cfg.norm)?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Trapezoidal approximation of the exponentially weighted integral of
/// `dl_ρ` over `[0, rho_max]`.
pub fn dl(f: &EpiSpline, g: &EpiSpline, cfg: &HypoDistanceConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    check_compatible(f, g)?;
    let center = cfg.center_for(f)?;
    let cloud = sample_cloud(&center, cfg);
    let diffs = discrepancies(f, g, &cloud, cfg.norm)?;

    let nodes: Vec<f64> = (0..cfg.rho_nodes).map(|j| cfg.rho_max * j as f64 / (cfg.rho_nodes - 1) as f64).collect();
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| cloud[a].0.total_cmp(&cloud[b].0).then(a.cmp(&b)));
    let mut curve = Vec::with_capacity(nodes.len());
    let mut running = 0.0f64;
    let mut cursor = 0;
    for &rho in &nodes {
        while cursor < order.len() && cloud[order[cursor]].0 <= rho {
            running = running.max(diffs[order[cursor]]);
            cursor += 1;
        }
        curve.push((rho, running));
    }

    let trapezoid = |vals: &dyn Fn(f64, f64) -> f64| -> f64 {
        curve
            .windows(2)
            .map(|w| {
                let (r0, v0) = w[0];
                let (r1, v1) = w[1];
                0.5 * (r1 - r0) * (vals(r0, v0) + vals(r1, v1))
            })
            .sum()
    };
    let dl_value = trapezoid(&|r, v| v * (-r).exp());

    let hf = Hypograph::new(f, cfg.norm)?;
    let hg = Hypograph::new(g, cfg.norm)?;
    let c0 = hf.distance(&center).max(hg.distance(&center));
    let truncation_bound = (-cfg.rho_max).exp() * (c0 + cfg.rho_max + 1.0);

    // |dist_f - dist_g| is 2-Lipschitz; fill distance of M points in a
    // (d+1)-ball of radius ρ scales like ρ M^{-1/(d+1)}.
    let fill = (cfg.ball_samples as f64).powf(-1.0 / center.len() as f64);
    let sampling_resolution = trapezoid(&|r, _| 2.0 * r * fill * (-r).exp());

    Ok(DistanceReport { dl_value, dl_rho_curve: curve, truncation_bound, sampling_resolution })
}
