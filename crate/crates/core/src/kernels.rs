//! Product kernels on treatment/confounder histories and per-period gram matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};
use crate::exec::Execution;
use crate::panel::{history_view, HistoryBundle, HistoryView, LongitudinalPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentKernel {
    /// `sum_s a_s a'_s` over the lag window; 1 when the window is empty.
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConfounderKernel {
    /// `theta * z'z`
    Linear,
    /// `(1 + theta * z'z)^degree`
    #[default]
    Poly,
    /// `exp(-|z - z'|^2 / (2 gamma^2))`
    Gaussian,
}

/// Product kernel configuration for one analysis.
///
/// `lags = None` uses the full history (`l = T`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub treatment: TreatmentKernel,
    pub confounder: ConfounderKernel,
    pub degree: u32,
    pub theta: f64,
    pub gamma: f64,
    pub lags: Option<usize>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            treatment: TreatmentKernel::Linear,
            confounder: ConfounderKernel::Poly,
            degree: 2,
            theta: 1.0,
            gamma: 1.0,
            lags: None,
        }
    }
}

impl KernelSpec {
    /// Linear treatment kernel times linear confounder kernel.
    pub fn linear() -> Self {
        Self {
            confounder: ConfounderKernel::Linear,
            degree: 1,
            ..Self::default()
        }
    }

    /// Linear treatment kernel times polynomial confounder kernel of `degree`.
    pub fn poly(degree: u32) -> Self {
        Self {
            confounder: ConfounderKernel::Poly,
            degree,
            ..Self::default()
        }
    }

    pub fn gaussian(gamma: f64) -> Self {
        Self {
            confounder: ConfounderKernel::Gaussian,
            gamma,
            ..Self::default()
        }
    }

    pub fn with_lags(mut self, lags: usize) -> Self {
        self.lags = Some(lags);
        self
    }

    /// Copy with the tunable scale replaced: `theta` for linear/poly, `gamma` for gaussian.
    pub fn with_scale(mut self, scale: f64) -> Self {
        match self.confounder {
            ConfounderKernel::Gaussian => self.gamma = scale,
            _ => self.theta = scale,
        }
        self
    }

    pub fn scale(&self) -> f64 {
        match self.confounder {
            ConfounderKernel::Gaussian => self.gamma,
            _ => self.theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.confounder == ConfounderKernel::Poly && self.degree == 0 {
            return Err(KowError::InvalidKernel("polynomial degree must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(KowError::InvalidKernel(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(KowError::InvalidKernel(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.lags == Some(0) {
            return Err(KowError::InvalidKernel("lags must be at least 1".into()));
        }
        Ok(())
    }

    /// Lag window for a panel with `periods` periods.
    pub fn lag_window(&self, periods: usize) -> usize {
        self.lags.unwrap_or(periods).max(1)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.confounder {
            ConfounderKernel::Linear => write!(f, "linear")?,
            ConfounderKernel::Poly => write!(f, "poly:{}", self.degree)?,
            ConfounderKernel::Gaussian => write!(f, "gaussian:{}", self.gamma)?,
        }
        if let Some(l) = self.lags {
            write!(f, "@{l}")?;
        }
        Ok(())
    }
}

/// Shorthand used on the command line: `linear`, `poly:D`, `gaussian:GAMMA`,
/// optionally followed by `@LAGS`.
impl FromStr for KernelSpec {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || KowError::InvalidKernel(format!("cannot parse kernel `{s}`"));
        let (body, lags) = match s.split_once('@') {
            Some((b, l)) => (b, Some(l.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let (name, arg) = match body.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (body, None),
        };
        let mut spec = match (name.trim().to_ascii_lowercase().as_str(), arg) {
            ("linear", None) => Self::linear(),
            ("poly", None) => Self::poly(2),
            ("poly", Some(d)) => Self::poly(d.parse().map_err(|_| bad())?),
            ("gaussian", None) => Self::gaussian(1.0),
            ("gaussian", Some(g)) => Self::gaussian(g.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        spec.lags = lags;
        spec.validate()?;
        Ok(spec)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn treatment_factor(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        1.0
    } else {
        dot(a, b)
    }
}

fn confounder_factor(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match spec.confounder {
        ConfounderKernel::Linear => spec.theta * dot(x, y),
        ConfounderKernel::Poly => (1.0 + spec.theta * dot(x, y)).powi(spec.degree as i32),
        ConfounderKernel::Gaussian => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * spec.gamma * spec.gamma)).exp()
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, hi: HistoryBundle<'_>, hj: HistoryBundle<'_>) -> Result<f64> {
    if hi.treatments.len() != hj.treatments.len() || hi.confounders.len() != hj.confounders.len() {
        return Err(KowError::DimensionMismatch(format!(
            "history bundles differ: ({}, {}) vs ({}, {})",
            hi.treatments.len(),
            hi.confounders.len(),
            hj.treatments.len(),
            hj.confounders.len()
        )));
    }
    Ok(treatment_factor(hi.treatments, hj.treatments) * confounder_factor(spec, hi.confounders, hj.confounders))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub period: usize,
    pub matrix: DMatrix<f64>,
    pub spec: KernelSpec,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Check symmetry and `min eig >= -1e-8 * |K|_F`. The eigenvalue bound is
    /// certified by a Cholesky factorization of `K + 1e-8 |K|_F I`.
    pub fn verify_psd(&self) -> Result<()> {
        let k = &self.matrix;
        let n = k.nrows();
        let norm = k.norm();
        for i in 0..n {
            for j in 0..i {
                if (k[(i, j)] - k[(j, i)]).abs() > 1e-12 * norm.max(1.0) {
                    return Err(KowError::NotPositiveSemidefinite { period: self.period, bound: 0.0 });
                }
            }
        }
        if norm == 0.0 {
            return Ok(());
        }
        let bound = 1e-8 * norm;
        let shifted = k + DMatrix::identity(n, n) * bound;
        match shifted.cholesky() {
            Some(_) => Ok(()),
            None => Err(KowError::NotPositiveSemidefinite { period: self.period, bound: -bound }),
        }
    }
}

fn gram_from_view(view: &HistoryView, spec: &KernelSpec, exec: Execution) -> DMatrix<f64> {
    let n = view.n_units();
    // Upper-triangle rows, each entry computed once.
    let rows: Vec<Vec<f64>> = exec.map(n, |i| {
        if !view.at_risk[i] {
            return Vec::new();
        }
        let hi = view.unit(i);
        (i..n)
            .map(|j| {
                if view.at_risk[j] {
                    let hj = view.unit(j);
                    treatment_factor(hi.treatments, hj.treatments)
                        * confounder_factor(spec, hi.confounders, hj.confounders)
                } else {
                    0.0
                }
            })
            .collect()
    });
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    k
}

/// Gram matrix `K_t` over all units; rows and columns of units censored
/// before `period` are zero.
pub fn gram(panel: &LongitudinalPanel, spec: &KernelSpec, period: usize) -> Result<GramMatrix> {
    gram_with(panel, spec, period, Execution::default())
}

pub fn gram_with(
    panel: &LongitudinalPanel,
    spec: &KernelSpec,
    period: usize,
    exec: Execution,
) -> Result<GramMatrix> {
    spec.validate()?;
    let view = history_view(panel, period, spec.lag_window(panel.periods()))?;
    Ok(GramMatrix {
        period,
        matrix: gram_from_view(&view, spec, exec),
        spec: *spec,
    })
}

/// Gram matrices for every period `1..=T`.
pub fn grams(panel: &LongitudinalPanel, specs: &[KernelSpec], exec: Execution) -> Result<Vec<GramMatrix>> {
    if specs.len() != panel.periods() {
        return Err(KowError::DimensionMismatch(format!(
            "{} kernel specs for {} periods",
            specs.len(),
            panel.periods()
        )));
    }
    specs
        .iter()
        .enumerate()
        .map(|(t, spec)| gram_with(panel, spec, t + 1, exec))
        .collect()
}

/// Gram over a view together with its derivative in the log of the tunable
/// scale (`theta` for linear/poly, `gamma` for gaussian).
pub fn gram_and_scale_derivative(view: &HistoryView, spec: &KernelSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = view.n_units();
    let mut k = DMatrix::zeros(n, n);
    let mut dk = DMatrix::zeros(n, n);
    for i in 0..n {
        if !view.at_risk[i] {
            continue;
        }
        let hi = view.unit(i);
        for j in i..n {
            if !view.at_risk[j] {
                continue;
            }
            let hj = view.unit(j);
            let a = treatment_factor(hi.treatments, hj.treatments);
            let (v, dv) = match spec.confounder {
                ConfounderKernel::Linear => {
                    let v = spec.theta * dot(hi.confounders, hj.confounders);
                    (v, v)
                }
                ConfounderKernel::Poly => {
                    let s = spec.theta * dot(hi.confounders, hj.confounders);
                    let d = spec.degree as i32;
                    let base = 1.0 + s;
                    (base.powi(d), f64::from(spec.degree) * base.powi(d - 1) * s)
                }
                ConfounderKernel::Gaussian => {
                    let d2: f64 = hi
                        .confounders
                        .iter()
                        .zip(hj.confounders)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    let g2 = spec.gamma * spec.gamma;
                    let v = (-d2 / (2.0 * g2)).exp();
                    (v, v * d2 / g2)
                }
            };
            k[(i, j)] = a * v;
            k[(j, i)] = a * v;
            dk[(i, j)] = a * dv;
            dk[(j, i)] = a * dv;
        }
    }
    (k, dk)
}

/// Degree-`k` monomials of `z` with coefficients `sqrt(k! / prod(m_i!))`, so that
/// `phi_k(z) . phi_k(z') = (z . z')^k`.
pub fn monomial_features(z: &[f64], k: u32) -> Vec<f64> {
    fn rec(z: &[f64], start: usize, left: u32, value: f64, counts: &mut Vec<u32>, out: &mut Vec<f64>, k: u32) {
        if left == 0 {
            let mut coef = factorial(k);
            for &c in counts.iter() {
                coef /= factorial(c);
            }
            out.push(coef.sqrt() * value);
            return;
        }
        for i in start..z.len() {
            counts[i] += 1;
            rec(z, i, left - 1, value * z[i], counts, out, k);
            counts[i] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0u32; z.len()];
    rec(z, 0, k, 1.0, &mut counts, &mut out, k);
    out
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).map(|i| f64::from(n - i) / f64::from(i + 1)).product()
}

/// Explicit feature blocks with `K(theta) = sum_k theta^k Phi_k Phi_k^T`.
#[derive(Debug, Clone)]
pub struct GradedFeatures {
    /// `(power of theta, n x r_k feature block)`
    pub blocks: Vec<(u32, DMatrix<f64>)>,
}

impl GradedFeatures {
    pub fn rank(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.ncols()).sum()
    }

    /// Concatenated `n x r` feature matrix at scale `theta`, with the power of
    /// each column.
    pub fn scaled(&self, theta: f64) -> (DMatrix<f64>, Vec<u32>) {
        let n = self.blocks.first().map_or(0, |(_, b)| b.nrows());
        let mut phi = DMatrix::zeros(n, self.rank());
        let mut powers = Vec::with_capacity(self.rank());
        let mut col = 0;
        for (k, block) in &self.blocks {
            let s = theta.powf(f64::from(*k) / 2.0);
            for c in 0..block.ncols() {
                phi.set_column(col, &(block.column(c) * s));
                powers.push(*k);
                col += 1;
            }
        }
        (phi, powers)
    }
}

/// Explicit features of a linear or polynomial product kernel; `None` for
/// gaussian kernels.
pub fn graded_features(view: &HistoryView, spec: &KernelSpec) -> Option<GradedFeatures> {
    let degrees: Vec<(u32, f64)> = match spec.confounder {
        ConfounderKernel::Linear => vec![(1, 1.0)],
        ConfounderKernel::Poly => (0..=spec.degree).map(|k| (k, binomial(spec.degree, k))).collect(),
        ConfounderKernel::Gaussian => return None,
    };
    let n = view.n_units();
    let mut blocks = Vec::new();
    for (k, coef) in degrees {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let h = view.unit(i);
            let a: Vec<f64> = if h.treatments.is_empty() { vec![1.0] } else { h.treatments.to_vec() };
            let m = monomial_features(h.confounders, k);
            let scale = coef.sqrt();
            let mut row = Vec::with_capacity(a.len() * m.len());
            for &ai in &a {
                for &mj in &m {
                    row.push(if view.at_risk[i] { scale * ai * mj } else { 0.0 });
                }
            }
            rows.push(row);
        }
        let r = rows.first().map_or(0, Vec::len);
        let block = DMatrix::from_fn(n, r, |i, j| rows[i][j]);
        blocks.push((k, block));
    }
    Some(GradedFeatures { blocks })
}
