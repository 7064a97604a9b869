//! Gaussian-process marginal-likelihood tuning of the kernel scale, the noise
//! level `lambda_t` and the constant mean `c_t` for each period.
//!
//! Linear and polynomial kernels have finite feature maps, so the likelihood is
//! evaluated through the Woodbury identity on an `r x r` system whenever the
//! feature rank `r` is below the number of observations. Gaussian kernels (and
//! high-rank feature maps) use the dense `n x n` path.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};
use crate::exec::Execution;
use crate::kernels::{gram_and_scale_derivative, graded_features, KernelSpec};
use crate::panel::{history_view, HistoryView, LongitudinalPanel};

/// Log marginal likelihood and its gradient in `(log scale, log lambda, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmlGradient {
    pub value: f64,
    pub d_log_scale: f64,
    pub d_log_lambda: f64,
    pub d_mean: f64,
}

fn factor_error(lambda: f64, scale: f64) -> KowError {
    KowError::Factorization(format!("K + lambda I not positive definite (lambda = {lambda:e}, scale = {scale:e})"))
}

/// `-1/2 r'(K + lambda I)^{-1} r - 1/2 log det(K + lambda I) - n/2 log 2 pi`, `r = y - c`.
pub fn log_marginal_likelihood(k: &DMatrix<f64>, y: &[f64], c: f64, lambda: f64) -> Result<f64> {
    let n = y.len();
    if k.shape() != (n, n) {
        return Err(KowError::DimensionMismatch(format!("gram {:?} for {n} outcomes", k.shape())));
    }
    if !(lambda > 0.0) {
        return Err(KowError::Tuning(format!("noise level must be positive, got {lambda}")));
    }
    let ky = k + DMatrix::identity(n, n) * lambda;
    let chol = ky.cholesky().ok_or_else(|| factor_error(lambda, f64::NAN))?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - c));
    let alpha = chol.solve(&r);
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln())
}

/// Dense evaluation with gradient, given `K` and `dK/dlog(scale)`.
pub fn lml_dense(k: &DMatrix<f64>, dk: &DMatrix<f64>, y: &[f64], c: f64, lambda: f64) -> Result<LmlGradient> {
    let n = y.len();
    let ky = k + DMatrix::identity(n, n) * lambda;
    let chol = ky.cholesky().ok_or_else(|| factor_error(lambda, f64::NAN))?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - c));
    let alpha = chol.solve(&r);
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let kinv = chol.inverse();
    let value = -0.5 * r.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln();
    let tr_kinv = kinv.trace();
    let tr_kinv_dk = kinv.component_mul(dk).sum();
    let dk_alpha = dk * &alpha;
    Ok(LmlGradient {
        value,
        d_log_scale: 0.5 * (alpha.dot(&dk_alpha) - tr_kinv_dk),
        d_log_lambda: 0.5 * lambda * (alpha.dot(&alpha) - tr_kinv),
        d_mean: alpha.sum(),
    })
}

/// Sufficient statistics of a graded feature model `K(theta) = sum_k theta^k Phi_k Phi_k'`.
#[derive(Debug, Clone)]
pub struct LowRankModel {
    n: usize,
    powers: Vec<u32>,
    gram0: DMatrix<f64>,
    phi_y: DVector<f64>,
    phi_one: DVector<f64>,
    yy: f64,
    sum_y: f64,
}

impl LowRankModel {
    /// `phi0` holds the features at `theta = 1`; `powers[j]` is the power of
    /// `theta` carried by column `j`.
    pub fn new(phi0: &DMatrix<f64>, powers: Vec<u32>, y: &[f64]) -> Self {
        let yv = DVector::from_column_slice(y);
        Self {
            n: y.len(),
            gram0: phi0.transpose() * phi0,
            phi_y: phi0.transpose() * &yv,
            phi_one: phi0.transpose() * DVector::from_element(y.len(), 1.0),
            yy: yv.dot(&yv),
            sum_y: yv.sum(),
            powers,
        }
    }

    pub fn rank(&self) -> usize {
        self.powers.len()
    }

    pub fn evaluate(&self, theta: f64, lambda: f64, c: f64) -> Result<LmlGradient> {
        let r = self.rank();
        let n = self.n as f64;
        let d: Vec<f64> = self.powers.iter().map(|&k| theta.powf(f64::from(k) / 2.0)).collect();
        let g = DMatrix::from_fn(r, r, |i, j| d[i] * self.gram0[(i, j)] * d[j]);
        let a = &g + DMatrix::identity(r, r) * lambda;
        let chol = a.cholesky().ok_or_else(|| factor_error(lambda, theta))?;
        let phi_r = DVector::from_fn(r, |i, _| d[i] * (self.phi_y[i] - c * self.phi_one[i]));
        let phi_one = DVector::from_fn(r, |i, _| d[i] * self.phi_one[i]);
        let b = chol.solve(&phi_r);
        let rr = self.yy - 2.0 * c * self.sum_y + n * c * c;
        let one_r = self.sum_y - n * c;

        let quad = (rr - phi_r.dot(&b)) / lambda;
        let logdet_a = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let logdet = (n - r as f64) * lambda.ln() + logdet_a;
        let value = -0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln();

        let ainv = chol.inverse();
        let alpha_alpha = (rr - 2.0 * phi_r.dot(&b) + b.dot(&(&g * &b))) / (lambda * lambda);
        let tr_kinv = (n - ainv.component_mul(&g).sum()) / lambda;
        let mut d_scale = 0.0;
        for j in 0..r {
            let e = f64::from(self.powers[j]);
            d_scale += e * (b[j] * b[j] - (1.0 - lambda * ainv[(j, j)]));
        }
        Ok(LmlGradient {
            value,
            d_log_scale: 0.5 * d_scale,
            d_log_lambda: 0.5 * lambda * (alpha_alpha - tr_kinv),
            d_mean: (one_r - phi_one.dot(&b)) / lambda,
        })
    }
}

/// Likelihood of one period's GP model as a function of `(scale, lambda, c)`.
pub enum PeriodModel {
    LowRank(LowRankModel),
    Dense { view: HistoryView, spec: KernelSpec, y: Vec<f64> },
}

impl PeriodModel {
    pub fn new(view: HistoryView, spec: &KernelSpec, y: Vec<f64>) -> Self {
        if let Some(features) = graded_features(&view, spec) {
            if features.rank() < y.len() {
                let (phi0, powers) = features.scaled(1.0);
                return PeriodModel::LowRank(LowRankModel::new(&phi0, powers, &y));
            }
        }
        PeriodModel::Dense { view, spec: *spec, y }
    }

    pub fn evaluate(&self, scale: f64, lambda: f64, c: f64) -> Result<LmlGradient> {
        match self {
            PeriodModel::LowRank(m) => m.evaluate(scale, lambda, c),
            PeriodModel::Dense { view, spec, y } => {
                let (k, dk) = gram_and_scale_derivative(view, &spec.with_scale(scale));
                lml_dense(&k, &dk, y, c, lambda)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub lambda_start: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTuning {
    pub period: usize,
    /// `theta` for linear/poly kernels, `gamma` for gaussian.
    pub scale: f64,
    pub lambda: f64,
    pub mean: f64,
    pub log_likelihood: f64,
    pub starts: Vec<StartTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub horizon: usize,
    pub periods: Vec<PeriodTuning>,
    /// `sum_t lambda_t`
    pub lambda: f64,
}

impl TuneResult {
    /// Per-period kernel specs with the tuned scales.
    pub fn specs(&self, template: &KernelSpec) -> Vec<KernelSpec> {
        self.periods.iter().map(|p| template.with_scale(p.scale)).collect()
    }
}

/// Multipliers of `Var(y)` used as starting noise levels.
pub const LAMBDA_START_FACTORS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

struct Fit {
    x: [f64; 3],
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Maximize the likelihood over `x = (log scale, log lambda, c)` by BFGS with
/// a backtracking line search, keeping the log parameters inside `bounds`.
fn maximize(model: &PeriodModel, x0: [f64; 3], bounds: [(f64, f64); 2]) -> Result<Fit> {
    let eval = |x: &[f64; 3]| -> Option<(f64, [f64; 3])> {
        if x[0] < bounds[0].0 || x[0] > bounds[0].1 || x[1] < bounds[1].0 || x[1] > bounds[1].1 {
            return None;
        }
        let g = model.evaluate(x[0].exp(), x[1].exp(), x[2]).ok()?;
        let grad = [-g.d_log_scale, -g.d_log_lambda, -g.d_mean];
        (g.value.is_finite() && grad.iter().all(|v| v.is_finite())).then_some((-g.value, grad))
    };
    let (mut f, mut g) =
        eval(&x0).ok_or_else(|| KowError::Tuning("likelihood not finite at the starting point".into()))?;
    let mut x = x0;
    let mut h = [[0.0; 3]; 3];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= 1e-6 * (1.0 + f.abs()).min(1e3) {
            converged = true;
            break;
        }
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = -(0..3).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = (0..3).map(|i| p[i] * g[i]).sum();
        if slope >= 0.0 {
            // Lost descent; restart from steepest descent.
            h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            first = true;
            p = [-g[0], -g[1], -g[2]];
            slope = -(0..3).map(|i| g[i] * g[i]).sum::<f64>();
        }
        if first {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                for v in &mut p {
                    *v /= norm;
                }
                slope /= norm;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [x[0] + step * p[0], x[1] + step * p[1], x[2] + step * p[2]];
            if let Some((ft, gt)) = eval(&trial) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            converged = true;
            break;
        };
        let s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]];
        let yv = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]];
        let sy: f64 = (0..3).map(|i| s[i] * yv[i]).sum();
        let df = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        if sy > 1e-12 {
            if first {
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h = [[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, scale]];
                first = false;
            }
            let rho = 1.0 / sy;
            let mut hy = [0.0; 3];
            for i in 0..3 {
                hy[i] = (0..3).map(|j| h[i][j] * yv[j]).sum();
            }
            let yhy: f64 = (0..3).map(|i| yv[i] * hy[i]).sum();
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        if df.abs() <= 1e-13 * (1.0 + f.abs()) {
            converged = true;
            break;
        }
    }
    Ok(Fit {
        x,
        value: -f,
        iterations,
        converged,
    })
}

fn tune_period(model: &PeriodModel, period: usize, y: &[f64], start_scale: f64) -> Result<PeriodTuning> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let var = if var > 0.0 { var } else { 1.0 };
    let bounds = [(-20.0, 20.0), (var.ln() - 30.0, var.ln() + 20.0)];
    let mut best: Option<Fit> = None;
    let mut starts = Vec::new();
    for factor in LAMBDA_START_FACTORS {
        let x0 = [start_scale.ln(), (factor * var).ln(), mean];
        match maximize(model, x0, bounds) {
            Ok(fit) => {
                starts.push(StartTrace {
                    lambda_start: factor * var,
                    log_likelihood: fit.value,
                    iterations: fit.iterations,
                    converged: fit.converged,
                });
                if best.as_ref().is_none_or(|b| fit.value > b.value) {
                    best = Some(fit);
                }
            }
            Err(_) => starts.push(StartTrace {
                lambda_start: factor * var,
                log_likelihood: f64::NEG_INFINITY,
                iterations: 0,
                converged: false,
            }),
        }
    }
    let best = best.ok_or_else(|| KowError::Tuning(format!("no start produced a finite likelihood at period {period}")))?;
    Ok(PeriodTuning {
        period,
        scale: best.x[0].exp(),
        lambda: best.x[1].exp(),
        mean: best.x[2],
        log_likelihood: best.value,
        starts,
    })
}

/// Tune every period `1..=horizon` against the outcome used for `horizon`
/// (the final outcome, or the period-`horizon` outcome in repeated mode).
/// Only units with that outcome observed enter the likelihood.
pub fn tune(panel: &LongitudinalPanel, template: &KernelSpec, horizon: usize, exec: Execution) -> Result<TuneResult> {
    template.validate()?;
    panel.check_period(horizon)?;
    let units: Vec<usize> = (0..panel.n_units())
        .filter(|&i| panel.horizon_outcome(i, horizon).is_some())
        .collect();
    if units.len() < 2 {
        return Err(KowError::Tuning(format!("only {} observed outcomes at horizon {horizon}", units.len())));
    }
    let y: Vec<f64> = units.iter().filter_map(|&i| panel.horizon_outcome(i, horizon)).collect();
    let lags = template.lag_window(panel.periods());
    let views = (1..=horizon)
        .map(|t| history_view(panel, t, lags).map(|v| v.subset(&units)))
        .collect::<Result<Vec<_>>>()?;
    let periods = exec
        .map(horizon, |k| {
            let model = PeriodModel::new(views[k].clone(), template, y.clone());
            tune_period(&model, k + 1, &y, template.scale())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let lambda = periods.iter().map(|p| p.lambda).sum();
    Ok(TuneResult { horizon, periods, lambda })
}
