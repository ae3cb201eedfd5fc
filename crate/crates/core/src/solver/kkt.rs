//! Sparse quasi-definite LDLᵀ for the Newton systems.
//!
//! The matrix is supplied as a list of symmetric triplets whose positions
//! repeat from one iteration to the next. The first assembly fixes the
//! sparsity pattern, an approximate minimum degree ordering and the
//! elimination tree; later assemblies only refill values.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Symmetric matrix `[[H, Bᵀ], [B, -C]]` with `H` positive (semi)definite
/// and `C` positive: the first `n_pos` pivots are expected positive, the
/// rest negative.
#[derive(Debug, Clone)]
pub struct QuasiDefinite {
    n: usize,
    n_pos: usize,
    perm: Vec<usize>,
    // Upper triangle of the permuted matrix, CSC.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    slots: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    reg: Vec<f64>,
    n_bumped: usize,
}

impl QuasiDefinite {
    /// Builds the pattern from triplets `(i, j, v)` (either triangle; entries
    /// are summed). Every diagonal position is included implicitly.
    pub fn analyze(n: usize, n_pos: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        // full symmetric pattern in the original ordering, for the ordering
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::NumericalBreakdown(format!("triplet ({i}, {j}) outside {n}")));
            }
            if i != j {
                cols[j].push(i);
                cols[i].push(j);
            }
        }
        let mut a_p = vec![0usize; n + 1];
        let mut a_i = Vec::new();
        for (j, c) in cols.iter_mut().enumerate() {
            c.sort_unstable();
            c.dedup();
            a_i.extend_from_slice(c);
            a_p[j + 1] = a_i.len();
        }
        let (perm, pinv) = if n > 1 && !a_i.is_empty() {
            let (p, pi, _) = amd::order::<usize>(n, &a_p, &a_i, &amd::Control::default())
                .map_err(|s| Error::NumericalBreakdown(format!("ordering failed: {s:?}")))?;
            (p, pi)
        } else {
            ((0..n).collect(), (0..n).collect())
        };

        // upper-triangular pattern of the permuted matrix
        let mut upper: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for &(i, j, _) in triplets {
            let (a, b) = (pinv[i], pinv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            upper[c].push(r);
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::new();
        for (j, c) in upper.iter_mut().enumerate() {
            c.sort_unstable();
            c.dedup();
            ai.extend_from_slice(c);
            ap[j + 1] = ai.len();
        }
        let find = |r: usize, c: usize| -> usize {
            let col = &ai[ap[c]..ap[c + 1]];
            ap[c] + col.binary_search(&r).expect("entry present in pattern")
        };
        let slots = triplets
            .iter()
            .map(|&(i, j, _)| {
                let (a, b) = (pinv[i], pinv[j]);
                if a <= b {
                    find(a, b)
                } else {
                    find(b, a)
                }
            })
            .collect();

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &ai[ap[j]..ap[j + 1]] {
                let mut i = i0;
                while i != j && work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        Ok(Self {
            n,
            n_pos,
            perm,
            ax: vec![0.0; ai.len()],
            ap,
            ai,
            slots,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            reg: vec![0.0; n],
            n_bumped: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.lp[self.n]
    }

    /// Number of pivots replaced by the dynamic regularization in the last
    /// factorization.
    pub fn bumped_pivots(&self) -> usize {
        self.n_bumped
    }

    fn sign(&self, orig: usize) -> f64 {
        if orig < self.n_pos {
            1.0
        } else {
            -1.0
        }
    }

    /// Refills values; `triplets` must have the same positions as in
    /// [`QuasiDefinite::analyze`].
    pub fn fill(&mut self, triplets: &[(usize, usize, f64)]) {
        assert_eq!(triplets.len(), self.slots.len(), "triplet pattern changed");
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (t, &(_, _, v)) in triplets.iter().enumerate() {
            self.ax[self.slots[t]] += v;
        }
    }

    /// Factors `K + diag(reg)` where `reg` is `+delta` on positive pivots and
    /// `-delta` on negative ones. Pivots with the wrong sign or magnitude
    /// below `eps` are replaced by `±bump`.
    pub fn factor(&mut self, delta: f64, eps: f64, bump: f64) -> Result<()> {
        let n = self.n;
        for j in 0..n {
            self.reg[j] = self.sign(self.perm[j]) * delta;
        }
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next = self.lp[..n].to_vec();
        self.n_bumped = 0;
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = self.reg[k];
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] += self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[n_e] = nx;
                        n_e += 1;
                        nx = self.etree[nx];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let tmp = next[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            let s = self.sign(self.perm[k]);
            if !(s * self.d[k] > eps) {
                if !self.d[k].is_finite() {
                    return Err(Error::NumericalBreakdown(format!("non-finite pivot at column {k}")));
                }
                self.d[k] = s * bump;
                self.n_bumped += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    fn solve_factored(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let bi = b[i];
            for j in self.lp[i]..self.lp[i + 1] {
                b[self.li[j]] -= self.lx[j] * bi;
            }
        }
        for i in 0..n {
            b[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * b[self.li[j]];
            }
            b[i] = s;
        }
    }

    /// `K x` for the unregularized matrix, in permuted coordinates.
    fn mul_permuted(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.ap[c]..self.ap[c + 1] {
                let r = self.ai[p];
                let v = self.ax[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// `K x` in the original ordering.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let xp: Vec<f64> = self.perm.iter().map(|&o| x[o]).collect();
        let yp = self.mul_permuted(&xp);
        let mut y = vec![0.0; self.n];
        for (k, &o) in self.perm.iter().enumerate() {
            y[o] = yp[k];
        }
        y
    }

    /// Solves `K x = rhs` with up to `refine` steps of iterative refinement
    /// against the unregularized matrix. Returns the solution and the final
    /// residual infinity norm.
    pub fn solve(&self, rhs: &[f64], refine: usize) -> (Vec<f64>, f64) {
        let bp: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        let mut x = bp.clone();
        self.solve_factored(&mut x);
        let residual = |x: &[f64]| -> Vec<f64> {
            let kx = self.mul_permuted(x);
            bp.iter().zip(&kx).map(|(b, k)| b - k).collect()
        };
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut r = residual(&x);
        let mut best = norm(&r);
        for _ in 0..refine {
            if best == 0.0 {
                break;
            }
            let mut dx = r.clone();
            self.solve_factored(&mut dx);
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let rc = residual(&cand);
            let nc = norm(&rc);
            if !(nc < best) {
                break;
            }
            x = cand;
            r = rc;
            best = nc;
        }
        let mut out = vec![0.0; self.n];
        for (k, &o) in self.perm.iter().enumerate() {
            out[o] = x[k];
        }
        (out, best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let flat: Vec<f64> = a.iter().flatten().cloned().collect();
        crate::linalg::solve(&flat, n, b).unwrap()
    }

    #[test]
    fn matches_dense_solution_on_random_quasidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let n_pos = 6 + trial % 5;
            let n_neg = 1 + trial % 4;
            let n = n_pos + n_neg;
            let mut trip = Vec::new();
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n_pos {
                trip.push((i, i, 2.0 + rng.random::<f64>()));
            }
            for _ in 0..n_pos {
                let (i, j) = (rng.random_range(0..n_pos), rng.random_range(0..n_pos));
                if i != j {
                    let v = 0.3 * rng.random_range(-1.0..1.0);
                    trip.push((i, j, v));
                    trip.push((i, i, v.abs()));
                    trip.push((j, j, v.abs()));
                }
            }
            for r in n_pos..n {
                trip.push((r, r, -0.5 * rng.random::<f64>()));
                for _ in 0..3 {
                    trip.push((r, rng.random_range(0..n_pos), rng.random_range(-1.0..1.0)));
                }
            }
            for &(i, j, v) in &trip {
                dense[i][j] += v;
                if i != j {
                    dense[j][i] += v;
                }
            }
            let mut k = QuasiDefinite::analyze(n, n_pos, &trip).unwrap();
            k.fill(&trip);
            k.factor(0.0, 1e-14, 1e-8).unwrap();
            assert_eq!(k.bumped_pivots(), 0);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (x, res) = k.solve(&b, 2);
            let xd = dense_solve(&dense, &b);
            for (a, e) in x.iter().zip(&xd) {
                assert!((a - e).abs() < 1e-10, "{a} vs {e}");
            }
            assert!(res < 1e-12);
            let kx = k.mul(&x);
            for (a, e) in kx.iter().zip(&b) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn refill_reuses_pattern() {
        let trip = vec![(0, 0, 4.0), (1, 1, 3.0), (0, 1, 1.0), (2, 0, 1.0), (2, 2, 0.0)];
        let mut k = QuasiDefinite::analyze(3, 2, &trip).unwrap();
        k.fill(&trip);
        k.factor(1e-9, 1e-14, 1e-8).unwrap();
        let (x, _) = k.solve(&[1.0, 2.0, 0.5], 3);
        let kx = k.mul(&x);
        assert!((kx[0] - 1.0).abs() < 1e-8 && (kx[1] - 2.0).abs() < 1e-8 && (kx[2] - 0.5).abs() < 1e-8);
        let trip2: Vec<_> = trip.iter().map(|&(i, j, v)| (i, j, 2.0 * v)).collect();
        k.fill(&trip2);
        k.factor(1e-9, 1e-14, 1e-8).unwrap();
        let (y, _) = k.solve(&[1.0, 2.0, 0.5], 3);
        assert!((y[0] - x[0] / 2.0).abs() < 1e-6);
    }
}
