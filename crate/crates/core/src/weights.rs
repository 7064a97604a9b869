//! Weight sets and the inverse-probability baselines (IPTW, sIPTW and their
//! censoring-augmented variants) built from per-period logistic fits.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};
use crate::logistic::{fit_logistic, LogisticFit};
use crate::panel::{history_view, HistoryBundle, LongitudinalPanel, OutcomeMode};

/// Denominators below this abort the weight computation.
pub const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kow,
    Iptw,
    Siptw,
    Iptcw,
    Siptcw,
    /// Uniform weights.
    Ols,
}

impl Method {
    pub fn is_stabilized(self) -> bool {
        matches!(self, Method::Siptw | Method::Siptcw)
    }

    pub fn uses_censoring(self) -> bool {
        matches!(self, Method::Iptcw | Method::Siptcw)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Kow => "kow",
            Method::Iptw => "iptw",
            Method::Siptw => "siptw",
            Method::Iptcw => "iptcw",
            Method::Siptcw => "siptcw",
            Method::Ols => "ols",
        })
    }
}

impl FromStr for Method {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "kow" => Method::Kow,
            "iptw" => Method::Iptw,
            "siptw" => Method::Siptw,
            "iptcw" => Method::Iptcw,
            "siptcw" => Method::Siptcw,
            "ols" | "uniform" => Method::Ols,
            other => return Err(KowError::Config(format!("unknown weighting method `{other}`"))),
        })
    }
}

/// Weights per unit for each outcome horizon. In final-outcome mode there is a
/// single horizon `T`; in repeated-outcome mode horizons are `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub method: Method,
    pub lambda: Option<f64>,
    pub unit_ids: Vec<String>,
    pub horizons: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    /// Non-fatal conditions met while computing the weights.
    pub flags: Vec<String>,
}

impl WeightSet {
    pub fn uniform(panel: &LongitudinalPanel) -> Self {
        let horizons = outcome_horizons(panel);
        Self {
            method: Method::Ols,
            lambda: None,
            unit_ids: panel.unit_ids().to_vec(),
            weights: vec![vec![1.0; panel.n_units()]; horizons.len()],
            horizons,
            flags: Vec::new(),
        }
    }

    pub fn for_horizon(&self, horizon: usize) -> Option<&[f64]> {
        let k = self.horizons.iter().position(|&h| h == horizon)?;
        Some(&self.weights[k])
    }

    /// Weights of the last horizon (the only one in final-outcome mode).
    pub fn last(&self) -> &[f64] {
        self.weights.last().map_or(&[], Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        for w in &self.weights {
            if w.len() != self.unit_ids.len() {
                return Err(KowError::DimensionMismatch(format!(
                    "{} weights for {} units",
                    w.len(),
                    self.unit_ids.len()
                )));
            }
            if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(KowError::NegativeWeight { index: i, value: v });
            }
        }
        Ok(())
    }

    /// Rescale each horizon so the weights of units with an observed outcome
    /// at that horizon average one.
    pub fn normalize_mean_one(&mut self, panel: &LongitudinalPanel) {
        for (k, &h) in self.horizons.iter().enumerate() {
            let observed: Vec<usize> = (0..panel.n_units())
                .filter(|&i| panel.horizon_outcome(i, h).is_some())
                .collect();
            let total: f64 = observed.iter().map(|&i| self.weights[k][i]).sum();
            if total > 0.0 {
                let scale = observed.len() as f64 / total;
                for w in &mut self.weights[k] {
                    *w *= scale;
                }
            }
        }
    }

    /// CSV `unit,weight`, or `unit,time,weight` when there are several horizons.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let repeated = self.horizons.len() > 1;
        if repeated {
            out.write_record(["unit", "time", "weight"])?;
        } else {
            out.write_record(["unit", "weight"])?;
        }
        for (k, &h) in self.horizons.iter().enumerate() {
            for (id, w) in self.unit_ids.iter().zip(&self.weights[k]) {
                if repeated {
                    out.write_record([id.as_str(), &h.to_string(), &w.to_string()])?;
                } else {
                    out.write_record([id.as_str(), &w.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Horizons at which outcomes are modelled.
pub fn outcome_horizons(panel: &LongitudinalPanel) -> Vec<usize> {
    match panel.outcome_mode() {
        OutcomeMode::Final => vec![panel.periods()],
        OutcomeMode::Repeated => (1..=panel.periods()).collect(),
    }
}

/// Covariate map of the propensity models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    /// Intercept, lagged treatments, confounder history and `A_{t-1}` times
    /// each confounder.
    #[default]
    Linear,
    /// Linear terms plus squares and within-period products of the
    /// confounders, each also interacted with `A_{t-1}`.
    Nonlinear,
}

impl FromStr for FeatureMap {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(FeatureMap::Linear),
            "nonlinear" | "quadratic" => Ok(FeatureMap::Nonlinear),
            other => Err(KowError::Config(format!("unknown feature map `{other}`"))),
        }
    }
}

fn design_row(h: HistoryBundle<'_>, p: usize, map: FeatureMap) -> Vec<f64> {
    let mut row = vec![1.0];
    row.extend_from_slice(h.treatments);
    row.extend_from_slice(h.confounders);
    let mut terms: Vec<f64> = h.confounders.to_vec();
    if map == FeatureMap::Nonlinear && p > 0 {
        let mut quad = Vec::new();
        for block in h.confounders.chunks(p) {
            for j in 0..p {
                for k in j..p {
                    quad.push(block[j] * block[k]);
                }
            }
        }
        row.extend_from_slice(&quad);
        terms.extend(quad);
    }
    if let Some(&last) = h.treatments.last() {
        row.extend(terms.iter().map(|x| last * x));
    }
    row
}

/// Design rows of the period-`t` treatment model for the listed units.
pub fn treatment_design(
    panel: &LongitudinalPanel,
    period: usize,
    lags: usize,
    map: FeatureMap,
    units: &[usize],
) -> Result<DMatrix<f64>> {
    let view = history_view(panel, period, lags)?;
    let p = panel.n_confounders();
    let rows: Vec<Vec<f64>> = units.iter().map(|&i| design_row(view.unit(i), p, map)).collect();
    Ok(to_matrix(&rows))
}

/// Intercept plus lagged treatments: the stabilizing numerator model.
pub fn numerator_design(panel: &LongitudinalPanel, period: usize, lags: usize, units: &[usize]) -> Result<DMatrix<f64>> {
    let view = history_view(panel, period, lags)?;
    let rows: Vec<Vec<f64>> = units
        .iter()
        .map(|&i| {
            let mut r = vec![1.0];
            r.extend_from_slice(view.unit(i).treatments);
            r
        })
        .collect();
    Ok(to_matrix(&rows))
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Per-unit, per-period probabilities (unit-major, `i * T + t - 1`). Entries
/// for cells where the quantity is undefined are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Probabilities {
    /// `P(A_t = 1 | history, uncensored at t)`
    pub treated: Vec<f64>,
    /// `P(C_t = 0 | history, C_{t-1} = 0)`; `None` ignores censoring.
    pub uncensored: Option<Vec<f64>>,
    pub numerator_treated: Option<Vec<f64>>,
    pub numerator_uncensored: Option<Vec<f64>>,
}

/// `prod_{t <= horizon} h_t / P(observed path at t)`; zero for units censored
/// by `horizon` when censoring probabilities are supplied.
pub fn ipw_from_probabilities(panel: &LongitudinalPanel, horizon: usize, probs: &Probabilities) -> Result<Vec<f64>> {
    panel.check_period(horizon)?;
    let periods = panel.periods();
    let cells = panel.n_units() * periods;
    let check = |v: &[f64], what: &str| {
        if v.len() == cells {
            Ok(())
        } else {
            Err(KowError::DimensionMismatch(format!("{what}: {} probabilities for {cells} cells", v.len())))
        }
    };
    check(&probs.treated, "treatment")?;
    for (v, what) in [
        (&probs.uncensored, "censoring"),
        (&probs.numerator_treated, "treatment numerator"),
        (&probs.numerator_uncensored, "censoring numerator"),
    ] {
        if let Some(v) = v {
            check(v, what)?;
        }
    }
    if probs.uncensored.is_none() && (0..panel.n_units()).any(|i| panel.is_censored(i, horizon)) {
        return Err(KowError::Config("panel has censoring; censoring probabilities are required".into()));
    }
    let small = |i: usize, t: usize, value: f64| KowError::SmallDenominator {
        unit: panel.unit_ids()[i].clone(),
        period: t,
        value,
    };
    let mut out = vec![0.0; panel.n_units()];
    'units: for (i, w) in out.iter_mut().enumerate() {
        let mut acc = 1.0;
        for t in 1..=horizon {
            let cell = i * periods + t - 1;
            if let Some(pu) = &probs.uncensored {
                if panel.is_censored(i, t) {
                    *w = 0.0;
                    continue 'units;
                }
                if pu[cell] < MIN_DENOMINATOR {
                    return Err(small(i, t, pu[cell]));
                }
                let num = probs.numerator_uncensored.as_ref().map_or(1.0, |v| v[cell]);
                acc *= num / pu[cell];
            }
            let a = panel.treatment(i, t).unwrap_or(0);
            let arm = |p: f64| if a == 1 { p } else { 1.0 - p };
            let den = arm(probs.treated[cell]);
            if den < MIN_DENOMINATOR {
                return Err(small(i, t, den));
            }
            let num = probs.numerator_treated.as_ref().map_or(1.0, |v| arm(v[cell]));
            acc *= num / den;
        }
        *w = acc;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpwConfig {
    pub features: FeatureMap,
    /// History window; `None` uses the whole history.
    pub lags: Option<usize>,
}

impl Default for IpwConfig {
    fn default() -> Self {
        Self {
            features: FeatureMap::Linear,
            lags: None,
        }
    }
}

/// Summary of one per-period logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub period: usize,
    pub model: String,
    pub observations: usize,
    pub fit: LogisticFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwResult {
    pub weights: WeightSet,
    pub models: Vec<ModelSummary>,
}

fn fit_period(
    x: &DMatrix<f64>,
    labels: &[f64],
    period: usize,
    model: &str,
    summaries: &mut Vec<ModelSummary>,
    flags: &mut Vec<String>,
) -> Result<Vec<f64>> {
    let fit = fit_logistic(x, labels)?;
    if fit.separation {
        flags.push(format!("separation in {model} model at t={period}; probabilities clipped at {}", crate::logistic::PROB_CLIP));
    }
    if fit.ridge.is_some() {
        flags.push(format!("rank-deficient {model} design at t={period}; ridge {}", crate::logistic::RIDGE));
    }
    if !fit.converged {
        flags.push(format!("{model} model at t={period} stopped before the gradient tolerance"));
    }
    let probs = x.row_iter().map(|r| fit.predict(r.transpose().as_slice())).collect();
    summaries.push(ModelSummary {
        period,
        model: model.to_string(),
        observations: labels.len(),
        fit,
    });
    Ok(probs)
}

/// Fitted probabilities for every period (see [`Probabilities`]).
pub fn fitted_probabilities(
    panel: &LongitudinalPanel,
    method: Method,
    cfg: &IpwConfig,
) -> Result<(Probabilities, Vec<ModelSummary>, Vec<String>)> {
    let periods = panel.periods();
    let lags = cfg.lags.unwrap_or(periods).max(1);
    let n = panel.n_units();
    let censoring = method.uses_censoring();
    if panel.has_censoring() && !censoring {
        return Err(KowError::Config(format!(
            "panel has censored units; use {} instead of {method}",
            if method.is_stabilized() { "siptcw" } else { "iptcw" }
        )));
    }
    let mut probs = Probabilities {
        treated: vec![0.5; n * periods],
        uncensored: censoring.then(|| vec![1.0; n * periods]),
        numerator_treated: method.is_stabilized().then(|| vec![0.5; n * periods]),
        numerator_uncensored: (censoring && method.is_stabilized()).then(|| vec![1.0; n * periods]),
    };
    let mut models = Vec::new();
    let mut flags = Vec::new();
    for t in 1..=periods {
        let at_risk: Vec<usize> = (0..n).filter(|&i| panel.at_risk(i, t)).collect();
        if censoring {
            let labels: Vec<f64> = at_risk.iter().map(|&i| f64::from(u8::from(!panel.is_censored(i, t)))).collect();
            // Without dropout at t the maximum-likelihood probability is exactly one.
            if labels.iter().any(|&v| v == 0.0) {
                let x = treatment_design(panel, t, lags, FeatureMap::Linear, &at_risk)?;
                let p = fit_period(&x, &labels, t, "censoring", &mut models, &mut flags)?;
                let dst = probs.uncensored.as_mut().expect("censoring enabled");
                for (&i, v) in at_risk.iter().zip(p) {
                    dst[i * periods + t - 1] = v;
                }
                if let Some(dst) = probs.numerator_uncensored.as_mut() {
                    let x = numerator_design(panel, t, lags, &at_risk)?;
                    let p = fit_period(&x, &labels, t, "censoring numerator", &mut models, &mut flags)?;
                    for (&i, v) in at_risk.iter().zip(p) {
                        dst[i * periods + t - 1] = v;
                    }
                }
            }
        }
        let units: Vec<usize> = at_risk.into_iter().filter(|&i| !panel.is_censored(i, t)).collect();
        if units.is_empty() {
            continue;
        }
        let labels: Vec<f64> = units.iter().map(|&i| f64::from(panel.treatment(i, t).unwrap_or(0))).collect();
        let x = treatment_design(panel, t, lags, cfg.features, &units)?;
        let p = fit_period(&x, &labels, t, "treatment", &mut models, &mut flags)?;
        for (&i, v) in units.iter().zip(p) {
            probs.treated[i * periods + t - 1] = v;
        }
        if let Some(dst) = probs.numerator_treated.as_mut() {
            let x = numerator_design(panel, t, lags, &units)?;
            let p = fit_period(&x, &labels, t, "treatment numerator", &mut models, &mut flags)?;
            for (&i, v) in units.iter().zip(p) {
                dst[i * periods + t - 1] = v;
            }
        }
    }
    Ok((probs, models, flags))
}

/// IPTW-family weights from per-period pooled logistic fits.
pub fn iptw_weights(panel: &LongitudinalPanel, method: Method, cfg: &IpwConfig) -> Result<IpwResult> {
    if matches!(method, Method::Kow | Method::Ols) {
        return Err(KowError::Config(format!("`{method}` is not an inverse-probability method")));
    }
    let (probs, models, flags) = fitted_probabilities(panel, method, cfg)?;
    let horizons = outcome_horizons(panel);
    let weights = horizons
        .iter()
        .map(|&h| ipw_from_probabilities(panel, h, &probs))
        .collect::<Result<Vec<_>>>()?;
    Ok(IpwResult {
        weights: WeightSet {
            method,
            lambda: None,
            unit_ids: panel.unit_ids().to_vec(),
            horizons,
            weights,
            flags,
        },
        models,
    })
}
