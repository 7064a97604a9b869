//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};

/// Fitted probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]`; an
/// unclipped fitted value outside that band flags separation.
pub const PROB_CLIP: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-8;
pub const RIDGE: f64 = 1e-8;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the (penalized) score at the returned coefficients.
    pub gradient_norm: f64,
    /// Deviance after each line-searched step, starting from the zero vector.
    /// Final Newton polishing steps below rounding resolution are not logged.
    pub deviance: Vec<f64>,
    pub separation: bool,
    /// Ridge strength used when the design was rank deficient.
    pub ridge: Option<f64>,
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Clipped `P(y = 1 | row)`.
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row)).clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    }
}

fn penalized_deviance(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let dev: f64 = eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum();
    2.0 * dev + ridge * beta.norm_squared()
}

/// Maximum-likelihood fit of `P(y = 1 | x) = sigmoid(x' beta)`. Rows of `x`
/// are observations; `y` holds 0/1 labels.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(KowError::DimensionMismatch(format!("{n} design rows for {} labels", y.len())));
    }
    if n == 0 {
        return Err(KowError::InvalidData("logistic fit on zero observations".into()));
    }
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(KowError::InvalidData(format!("logistic label {v} is not binary")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KowError::InvalidData("non-finite logistic feature".into()));
    }
    let xtx = x.transpose() * x;
    let full_rank = xtx.clone().cholesky().is_some_and(|c| {
        let d = c.l_dirty().diagonal();
        let max = d.amax();
        d.iter().all(|&v| v > 1e-7 * max)
    });
    let ridge = if full_rank { 0.0 } else { RIDGE };

    let mut beta = DVector::zeros(p);
    let mut dev = penalized_deviance(x, y, &beta, ridge);
    let mut trace = vec![dev];
    let yv = DVector::from_column_slice(y);
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    while iterations < MAX_ITER {
        let eta = x * &beta;
        let prob = eta.map(sigmoid);
        let score = x.transpose() * (&yv - &prob) - &beta * ridge;
        gnorm = score.amax();
        if gnorm <= GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let w = prob[i] * (1.0 - prob[i]);
            if w > 0.0 {
                let row = x.row(i);
                h.ger(w, &row.transpose(), &row.transpose(), 1.0);
            }
        }
        for j in 0..p {
            h[(j, j)] += ridge.max(1e-12 * h[(j, j)].abs());
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&score),
            None => {
                let mut hr = h;
                for j in 0..p {
                    hr[(j, j)] += RIDGE;
                }
                match hr.cholesky() {
                    Some(c) => c.solve(&score),
                    None => break,
                }
            }
        };
        let score_at = |b: &DVector<f64>| {
            let prob = (x * b).map(sigmoid);
            (x.transpose() * (&yv - &prob) - b * ridge).amax()
        };
        // Below this predicted decrease the deviance cannot resolve progress,
        // so full Newton steps are taken while the score keeps shrinking.
        let predicted = score.dot(&step);
        if predicted <= 1e-12 * dev.abs().max(1.0) {
            let trial = &beta + &step;
            if score_at(&trial) < gnorm {
                dev = dev.min(penalized_deviance(x, y, &trial, ridge));
                beta = trial;
                continue;
            }
            gnorm = score_at(&beta);
            converged = gnorm <= GRADIENT_TOL;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &beta + &step * t;
            let d = penalized_deviance(x, y, &trial, ridge);
            if d <= dev {
                accepted = dev - d > 1e-15 * dev.abs().max(1.0) || score_at(&trial) < gnorm;
                beta = trial;
                dev = d;
                trace.push(dev);
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let prob = (x * &beta).map(sigmoid);
            gnorm = (x.transpose() * (&yv - &prob) - &beta * ridge).amax();
            converged = gnorm <= GRADIENT_TOL;
            break;
        }
    }
    let eta = x * &beta;
    let all_same = y.iter().all(|&v| v == y[0]);
    let separation = all_same
        || eta.iter().any(|&e| {
            let p = sigmoid(e);
            !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p)
        });
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        iterations,
        converged,
        gradient_norm: gnorm,
        deviance: trace,
        separation,
        ridge: (!full_rank).then_some(RIDGE),
    })
}
