//! Weighted least-squares fits of the marginal structural model with
//! cluster-robust (HC0) sandwich standard errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::balance::{imbalance_report, indicators, BalanceMode, ImbalanceReport};
use crate::error::{KowError, Result, Stage, StageExt};
use crate::exec::Execution;
use crate::optimal::{kow_weights, period_grams, HorizonFit, KowConfig};
use crate::panel::{standardize, LongitudinalPanel};
use crate::kernels::KernelSpec;
use crate::weights::{iptw_weights, outcome_horizons, IpwConfig, Method, ModelSummary, WeightSet};

pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsmDesign {
    /// `beta_1 + beta_2 sum_t a_t`
    #[default]
    Cumulative,
    /// Intercept plus one coefficient per period.
    PerPeriod,
}

impl std::str::FromStr for MsmDesign {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(MsmDesign::Cumulative),
            "per-period" | "per_period" => Ok(MsmDesign::PerPeriod),
            other => Err(KowError::Config(format!("unknown MSM design `{other}`"))),
        }
    }
}

/// Least-squares coefficients and sandwich covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

fn bread(xtwx: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let max = xtwx.diagonal().amax();
    let chol = xtwx
        .cholesky()
        .ok_or_else(|| KowError::RankDeficient("weighted cross-product is not positive definite".into()))?;
    let d = chol.l_dirty().diagonal();
    if d.iter().any(|&v| v * v <= 1e-12 * max) {
        return Err(KowError::RankDeficient("weighted design is numerically singular".into()));
    }
    Ok(chol.inverse())
}

fn sandwich(x: &DMatrix<f64>, resid_w: &[f64], clusters: &[usize], inv: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let groups = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = DMatrix::zeros(groups, p);
    for (i, &g) in clusters.iter().enumerate() {
        for j in 0..p {
            scores[(g, j)] += x[(i, j)] * resid_w[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let cov = inv * meat * inv;
    (&cov + cov.transpose()) * 0.5
}

/// Weighted least squares with a sandwich covariance clustered by `clusters`
/// (one cluster per row gives HC0).
pub fn weighted_least_squares(x: &DMatrix<f64>, y: &[f64], w: &[f64], clusters: &[usize]) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != n || clusters.len() != n {
        return Err(KowError::DimensionMismatch(format!(
            "design {n}x{p} with {} outcomes, {} weights, {} cluster labels",
            y.len(),
            w.len(),
            clusters.len()
        )));
    }
    if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(KowError::NegativeWeight { index: i, value: v });
    }
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        for a in 0..p {
            let wx = w[i] * x[(i, a)];
            xtwy[a] += wx * y[i];
            for b in 0..p {
                xtwx[(a, b)] += wx * x[(i, b)];
            }
        }
    }
    let inv = bread(xtwx)?;
    let beta = &inv * xtwy;
    let fitted = x * &beta;
    let resid_w: Vec<f64> = (0..n).map(|i| w[i] * (y[i] - fitted[i])).collect();
    Ok(LeastSquares {
        covariance: sandwich(x, &resid_w, clusters, &inv),
        coefficients: beta,
    })
}

/// Unweighted least squares with the same accumulation order as
/// [`weighted_least_squares`].
pub fn ordinary_least_squares(x: &DMatrix<f64>, y: &[f64], clusters: &[usize]) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if y.len() != n || clusters.len() != n {
        return Err(KowError::DimensionMismatch(format!("design {n}x{p} with {} outcomes", y.len())));
    }
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for i in 0..n {
        for a in 0..p {
            let xa = x[(i, a)];
            xty[a] += xa * y[i];
            for b in 0..p {
                xtx[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    let inv = bread(xtx)?;
    let beta = &inv * xty;
    let fitted = x * &beta;
    let resid: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    Ok(LeastSquares {
        covariance: sandwich(x, &resid, clusters, &inv),
        coefficients: beta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmFit {
    pub design: MsmDesign,
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub observations: usize,
    pub clusters: usize,
    /// `sum W / max W`
    pub effective_sample_size: f64,
}

impl MsmFit {
    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.se).collect()
    }

    /// Human-readable coefficient table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>12} {:>12} {:>9} {:>9} {:>12} {:>12}\n",
            "term", "estimate", "se", "z", "p", "ci_lower", "ci_upper"
        );
        for c in &self.coefficients {
            s.push_str(&format!(
                "{:<12} {:>12.6} {:>12.6} {:>9.3} {:>9.4} {:>12.6} {:>12.6}\n",
                c.name, c.estimate, c.se, c.z, c.p, c.ci_lower, c.ci_upper
            ));
        }
        s.push_str(&format!(
            "observations {}  clusters {}  effective sample size {:.2}\n",
            self.observations, self.clusters, self.effective_sample_size
        ));
        s
    }
}

/// Regression rows `(x, y, weight, cluster)` for every observed outcome.
pub fn msm_design(
    panel: &LongitudinalPanel,
    weights: &WeightSet,
    design: MsmDesign,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<usize>)> {
    if weights.unit_ids.len() != panel.n_units() {
        return Err(KowError::DimensionMismatch(format!(
            "{} weights for {} units",
            weights.unit_ids.len(),
            panel.n_units()
        )));
    }
    weights.validate()?;
    let periods = panel.periods();
    let cols = match design {
        MsmDesign::Cumulative => 2,
        MsmDesign::PerPeriod => periods + 1,
    };
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut clusters = Vec::new();
    for (k, &h) in weights.horizons.iter().enumerate() {
        for i in 0..panel.n_units() {
            let Some(v) = panel.horizon_outcome(i, h) else { continue };
            let mut row = vec![0.0; cols];
            row[0] = 1.0;
            match design {
                MsmDesign::Cumulative => row[1] = panel.cumulative_treatment(i, h),
                MsmDesign::PerPeriod => {
                    for t in 1..=h {
                        row[t] = panel.treatment_or_zero(i, t);
                    }
                }
            }
            rows.push(row);
            y.push(v);
            w.push(weights.weights[k][i]);
            clusters.push(i);
        }
    }
    if rows.is_empty() {
        return Err(KowError::InvalidData("no observed outcomes".into()));
    }
    let x = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    Ok((x, y, w, clusters))
}

fn names(design: MsmDesign, periods: usize) -> Vec<String> {
    match design {
        MsmDesign::Cumulative => vec!["intercept".into(), "cum_treat".into()],
        MsmDesign::PerPeriod => std::iter::once("intercept".to_string())
            .chain((1..=periods).map(|t| format!("treat_{t}")))
            .collect(),
    }
}

fn summarize(ls: LeastSquares, design: MsmDesign, periods: usize, w: &[f64], clusters: &[usize]) -> MsmFit {
    let normal = Normal::standard();
    let p = ls.coefficients.len();
    let coefficients = names(design, periods)
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = ls.coefficients[j];
            let se = ls.covariance[(j, j)].max(0.0).sqrt();
            let z = estimate / se;
            Coefficient {
                name,
                estimate,
                se,
                z,
                p: if z.is_nan() { f64::NAN } else { 2.0 * normal.sf(z.abs()) },
                ci_lower: estimate - Z_95 * se,
                ci_upper: estimate + Z_95 * se,
            }
        })
        .collect();
    let max = w.iter().copied().fold(0.0, f64::max);
    let mut groups = clusters.to_vec();
    groups.sort_unstable();
    groups.dedup();
    MsmFit {
        design,
        coefficients,
        covariance: (0..p).map(|i| (0..p).map(|j| ls.covariance[(i, j)]).collect()).collect(),
        observations: w.len(),
        clusters: groups.len(),
        effective_sample_size: if max > 0.0 { w.iter().sum::<f64>() / max } else { 0.0 },
    }
}

/// Weighted MSM fit; clustered by unit when a unit contributes several rows.
pub fn fit_msm(panel: &LongitudinalPanel, weights: &WeightSet, design: MsmDesign) -> Result<MsmFit> {
    let (x, y, w, clusters) = msm_design(panel, weights, design)?;
    let ls = weighted_least_squares(&x, &y, &w, &clusters)?;
    Ok(summarize(ls, design, panel.periods(), &w, &clusters))
}

/// Unweighted MSM fit through [`ordinary_least_squares`].
pub fn fit_ols(panel: &LongitudinalPanel, design: MsmDesign) -> Result<MsmFit> {
    let uniform = WeightSet::uniform(panel);
    let (x, y, w, clusters) = msm_design(panel, &uniform, design)?;
    let ls = ordinary_least_squares(&x, &y, &clusters)?;
    Ok(summarize(ls, design, panel.periods(), &w, &clusters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub method: Method,
    pub design: MsmDesign,
    pub kow: KowConfig,
    pub ipw: IpwConfig,
    /// Rescale baseline weights to mean one per horizon.
    pub normalize: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            method: Method::Kow,
            design: MsmDesign::Cumulative,
            kow: KowConfig::default(),
            ipw: IpwConfig::default(),
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub fit: MsmFit,
    pub weights: WeightSet,
    /// Imbalance of uniform and fitted weights at the last horizon.
    pub imbalance_before: ImbalanceReport,
    pub imbalance_after: ImbalanceReport,
    pub kow: Option<Vec<HorizonFit>>,
    pub propensity_models: Option<Vec<ModelSummary>>,
}

/// Imbalance of uniform weights and of `weights` at the last outcome horizon,
/// measured with `kernel` on the standardized panel.
pub fn balance_diagnostics(
    panel: &LongitudinalPanel,
    weights: &[f64],
    kernel: &KernelSpec,
    exec: Execution,
) -> Result<(ImbalanceReport, ImbalanceReport)> {
    if weights.len() != panel.n_units() {
        return Err(KowError::DimensionMismatch(format!("{} weights for {} units", weights.len(), panel.n_units())));
    }
    let (std_panel, _) = standardize(panel);
    let horizon = *outcome_horizons(panel).last().expect("at least one horizon");
    let specs = vec![*kernel; horizon];
    let grams = period_grams(&std_panel, &specs, exec).stage(Stage::Gram)?;
    let mode = if panel.has_censoring() { BalanceMode::Censored } else { BalanceMode::Uncensored };
    let inds = indicators(&std_panel, horizon, mode).stage(Stage::Assemble)?;
    let uniform = vec![1.0; panel.n_units()];
    Ok((
        imbalance_report(&uniform, &grams, &inds).stage(Stage::Assemble)?,
        imbalance_report(weights, &grams, &inds).stage(Stage::Assemble)?,
    ))
}

/// Weights by the configured method, the MSM fit and balance diagnostics.
pub fn estimate_effect(panel: &LongitudinalPanel, cfg: &EstimateConfig, exec: Execution) -> Result<Estimate> {
    let mut kow = None;
    let mut models = None;
    let mut weights = match cfg.method {
        Method::Kow => {
            let res = kow_weights(panel, &cfg.kow, exec)?;
            kow = Some(res.horizons);
            res.weights
        }
        Method::Ols => WeightSet::uniform(panel),
        m => {
            let res = iptw_weights(panel, m, &cfg.ipw).stage(Stage::Propensity)?;
            models = Some(res.models);
            res.weights
        }
    };
    if cfg.normalize && cfg.method != Method::Kow {
        weights.normalize_mean_one(panel);
    }
    let fit = fit_msm(panel, &weights, cfg.design).stage(Stage::Fit)?;

    let (before, after) = match kow.as_ref().and_then(|h| h.last()) {
        Some(last) => (last.imbalance_before.clone(), last.imbalance_after.clone()),
        None => balance_diagnostics(panel, weights.last(), &cfg.kow.kernel, exec)?,
    };
    Ok(Estimate {
        fit,
        weights,
        imbalance_before: before,
        imbalance_after: after,
        kow,
        propensity_models: models,
    })
}
