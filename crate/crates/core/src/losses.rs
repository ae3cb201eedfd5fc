//! Empirical loss functionals as convex functions of the height vector.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epispline::{format_float, product_moment};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, SimplicialComplex, LOCATE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-(1/n) Σ log f(x_j)`.
    MlDensity,
    /// `-(2/n) Σ f(x_j) + ∫ f²`.
    LsDensity,
    /// `(1/n) Σ (y_j - f(x_j))²`.
    LsRegression,
}

impl LossKind {
    pub fn needs_response(self) -> bool {
        self == LossKind::LsRegression
    }
}

/// Observations: covariates in the box and, for regression, responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub covariates: Vec<Vec<f64>>,
    pub responses: Option<Vec<f64>>,
}

/// Result of reading a sample file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub sample: Sample,
    /// Rows dropped because the covariates fell outside the box.
    pub rejected: usize,
}

impl Sample {
    pub fn new(covariates: Vec<Vec<f64>>, responses: Option<Vec<f64>>) -> Result<Self> {
        let s = Self { covariates, responses };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::InvalidSample("sample is empty".into()));
        }
        let d = self.covariates[0].len();
        if d == 0 {
            return Err(Error::InvalidSample("covariates have no coordinates".into()));
        }
        if let Some(j) = self.covariates.iter().position(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidSample(format!("row {j} is malformed")));
        }
        if let Some(y) = &self.responses {
            if y.len() != self.covariates.len() {
                return Err(Error::InvalidSample(format!(
                    "{} responses for {} covariate rows",
                    y.len(),
                    self.covariates.len()
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSample("non-finite response".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.first().map_or(0, |x| x.len())
    }

    /// Reads `d` columns (or `d + 1` with the response last). A header row is
    /// detected by failing to parse as numbers. Rows outside `domain` are
    /// dropped and counted; rows within [`LOCATE_TOL`] are clamped.
    pub fn read_csv<R: Read>(reader: R, domain: &BoxDomain, with_response: bool) -> Result<Ingested> {
        let d = domain.dim();
        let width = d + usize::from(with_response);
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut covariates = Vec::new();
        let mut responses = Vec::new();
        let mut rejected = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::InvalidSample(format!("line {}: {e}", line + 1)));
                }
            };
            if values.len() != width {
                return Err(Error::InvalidSample(format!(
                    "line {}: expected {width} columns, found {}",
                    line + 1,
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSample(format!("line {}: non-finite value", line + 1)));
            }
            match domain.clamp(&values[..d], LOCATE_TOL) {
                Ok(x) => {
                    covariates.push(x);
                    if with_response {
                        responses.push(values[d]);
                    }
                }
                Err(_) => rejected += 1,
            }
        }
        let sample = Sample::new(covariates, with_response.then_some(responses))?;
        Ok(Ingested { sample, rejected })
    }

    pub fn from_csv_path(path: &Path, domain: &BoxDomain, with_response: bool) -> Result<Ingested> {
        Self::read_csv(std::fs::File::open(path)?, domain, with_response)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (j, x) in self.covariates.iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| format_float(*v)).collect();
            if let Some(y) = &self.responses {
                row.push(format_float(y[j]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetric block-diagonal matrix with one `(d+1) × (d+1)` block per simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHessian {
    pub block: usize,
    /// Row-major blocks, concatenated.
    pub data: Vec<f64>,
}

impl BlockHessian {
    pub fn zeros(n_blocks: usize, block: usize) -> Self {
        Self { block, data: vec![0.0; n_blocks * block * block] }
    }

    pub fn n_blocks(&self) -> usize {
        self.data.len() / (self.block * self.block)
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let b = self.block;
        self.data[k * b * b + i * b + j]
    }

    fn add_outer(&mut self, k: usize, w: &[f64], scale: f64) {
        let b = self.block;
        let base = k * b * b;
        for i in 0..b {
            for j in 0..b {
                self.data[base + i * b + j] += scale * w[i] * w[j];
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let b = self.block;
        let mut out = vec![0.0; v.len()];
        for k in 0..self.n_blocks() {
            for i in 0..b {
                let mut s = 0.0;
                for j in 0..b {
                    s += self.data[k * b * b + i * b + j] * v[k * b + j];
                }
                out[k * b + i] = s;
            }
        }
        out
    }
}

/// Loss value with derivatives. `value` is `+∞` when an ML density is not
/// positive at some datum; gradient and Hessian are then meaningless.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: BlockHessian,
}

/// A datum reduced to its simplex and barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub simplex: usize,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CompiledLoss {
    kind: LossKind,
    n_heights: usize,
    block: usize,
    rows: Vec<WeightRow>,
    responses: Option<Vec<f64>>,
    /// Constant Hessian of the quadratic part (LS variants).
    quadratic: Option<BlockHessian>,
    /// Constant gradient term `-(2/n) Σ w_j` for LS density.
    linear: Option<Vec<f64>>,
}

impl CompiledLoss {
    pub fn compile(kind: LossKind, sample: &Sample, complex: &SimplicialComplex) -> Result<Self> {
        sample.validate()?;
        if sample.dim() != complex.dim() {
            return Err(Error::InvalidSample(format!(
                "sample has dimension {}, complex {}",
                sample.dim(),
                complex.dim()
            )));
        }
        if kind.needs_response() != sample.responses.is_some() {
            return Err(Error::InvalidSample(if kind.needs_response() {
                "regression needs responses".into()
            } else {
                "density losses take covariates only".into()
            }));
        }
        let d1 = complex.dim() + 1;
        let n_heights = complex.n_simplices() * d1;
        let rows = sample
            .covariates
            .iter()
            .map(|x| {
                if !complex.domain().contains(x, LOCATE_TOL) {
                    return Err(Error::OutOfDomain { point: x.clone() });
                }
                let loc = complex.locate(x)?;
                Ok(WeightRow { simplex: loc.simplex, mu: loc.barycentric })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = rows.len() as f64;

        let (quadratic, linear) = match kind {
            LossKind::MlDensity => (None, None),
            LossKind::LsDensity => {
                let d = complex.dim();
                let mut q = BlockHessian::zeros(complex.n_simplices(), d1);
                for k in 0..complex.n_simplices() {
                    let a = complex.volume(k);
                    for i in 0..d1 {
                        for j in 0..d1 {
                            q.data[k * d1 * d1 + i * d1 + j] = 2.0 * a * product_moment(d, i, j);
                        }
                    }
                }
                let mut lin = vec![0.0; n_heights];
                for r in &rows {
                    for (i, m) in r.mu.iter().enumerate() {
                        lin[r.simplex * d1 + i] -= 2.0 * m / n;
                    }
                }
                (Some(q), Some(lin))
            }
            LossKind::LsRegression => {
                let mut q = BlockHessian::zeros(complex.n_simplices(), d1);
                for r in &rows {
                    q.add_outer(r.simplex, &r.mu, 2.0 / n);
                }
                (Some(q), None)
            }
        };
        Ok(Self { kind, n_heights, block: d1, rows, responses: sample.responses.clone(), quadratic, linear })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn n_heights(&self) -> usize {
        self.n_heights
    }

    pub fn n_data(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[WeightRow] {
        &self.rows
    }

    /// `f(x_j)` for every datum.
    pub fn fitted(&self, h: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| self.row_value(r, h)).collect()
    }

    fn row_value(&self, r: &WeightRow, h: &[f64]) -> f64 {
        let base = r.simplex * self.block;
        r.mu.iter().enumerate().map(|(i, m)| m * h[base + i]).sum()
    }

    pub fn value(&self, h: &[f64]) -> f64 {
        let n = self.rows.len() as f64;
        match self.kind {
            LossKind::MlDensity => {
                let mut s = 0.0;
                for r in &self.rows {
                    let f = self.row_value(r, h);
                    if !(f > 0.0) {
                        return f64::INFINITY;
                    }
                    s += f.ln();
                }
                -s / n
            }
            LossKind::LsDensity => {
                let lin = self.linear.as_ref().expect("ls density has a linear term");
                let q = self.quadratic.as_ref().expect("ls density has a quadratic term");
                let qh = q.apply(h);
                let mut s = 0.0;
                for j in 0..h.len() {
                    s += lin[j] * h[j] + 0.5 * h[j] * qh[j];
                }
                s
            }
            LossKind::LsRegression => {
                let y = self.responses.as_ref().expect("regression has responses");
                let mut s = 0.0;
                for (r, yj) in self.rows.iter().zip(y) {
                    let e = yj - self.row_value(r, h);
                    s += e * e;
                }
                s / n
            }
        }
    }

    pub fn value_grad_hess(&self, h: &[f64]) -> LossEval {
        let n = self.rows.len() as f64;
        let b = self.block;
        let mut grad = vec![0.0; self.n_heights];
        match self.kind {
            LossKind::MlDensity => {
                let mut hess = BlockHessian::zeros(self.n_heights / b, b);
                let mut s = 0.0;
                for r in &self.rows {
                    let f = self.row_value(r, h);
                    if !(f > 0.0) {
                        return LossEval { value: f64::INFINITY, grad, hess };
                    }
                    s += f.ln();
                    for (i, m) in r.mu.iter().enumerate() {
                        grad[r.simplex * b + i] -= m / (f * n);
                    }
                    hess.add_outer(r.simplex, &r.mu, 1.0 / (f * f * n));
                }
                LossEval { value: -s / n, grad, hess }
            }
            LossKind::LsDensity => {
                let q = self.quadratic.clone().expect("ls density has a quadratic term");
                let lin = self.linear.as_ref().expect("ls density has a linear term");
                let qh = q.apply(h);
                let mut value = 0.0;
                for j in 0..h.len() {
                    value += lin[j] * h[j] + 0.5 * h[j] * qh[j];
                    grad[j] = lin[j] + qh[j];
                }
                LossEval { value, grad, hess: q }
            }
            LossKind::LsRegression => {
                let q = self.quadratic.clone().expect("regression has a quadratic term");
                let y = self.responses.as_ref().expect("regression has responses");
                let mut value = 0.0;
                for (r, yj) in self.rows.iter().zip(y) {
                    let e = yj - self.row_value(r, h);
                    value += e * e;
                    for (i, m) in r.mu.iter().enumerate() {
                        grad[r.simplex * b + i] -= 2.0 * e * m / n;
                    }
                }
                LossEval { value: value / n, grad, hess: q }
            }
        }
    }
}
