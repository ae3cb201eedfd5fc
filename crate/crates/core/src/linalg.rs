//! Small dense kernels for the per-simplex systems (d ≤ a handful).
//!
//! Matrices are row-major `Vec<f64>` / `&[f64]` with an explicit order `n`.

/// LU factorization with partial pivoting, stored in place.
#[derive(Debug, Clone)]
pub struct SmallLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl SmallLu {
    pub fn new(a: &[f64], n: usize) -> Self {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut singular = false;
        for col in 0..n {
            let mut piv = col;
            let mut best = lu[col * n + col].abs();
            for row in col + 1..n {
                let v = lu[row * n + col].abs();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best == 0.0 {
                singular = true;
                continue;
            }
            if piv != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
                sign = -sign;
            }
            let d = lu[col * n + col];
            for row in col + 1..n {
                let f = lu[row * n + col] / d;
                lu[row * n + col] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        lu[row * n + j] -= f * lu[col * n + j];
                    }
                }
            }
        }
        Self { n, lu, perm, sign, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn det(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        let n = self.n;
        (0..n).fold(self.sign, |acc, i| acc * self.lu[i * n + i])
    }

    /// Solves `A x = b`. Returns `None` if the factorization is singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        if self.singular {
            return None;
        }
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for col in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[col] = 1.0;
            let x = self.solve(&e)?;
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        Some(inv)
    }
}

pub fn det(a: &[f64], n: usize) -> f64 {
    SmallLu::new(a, n).det()
}

pub fn solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    SmallLu::new(a, n).solve(b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}
