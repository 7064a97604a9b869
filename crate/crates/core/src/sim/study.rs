//! Replication studies: bias and MSE of the effect estimate across sample
//! sizes or penalty values, with common random numbers across methods.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgp::{draw, DgpSpec, Scenario};
use crate::balance::{assemble_problem, indicators, BalanceMode};
use crate::error::{KowError, Result};
use crate::exec::Execution;
use crate::kernels::KernelSpec;
use crate::msm::{fit_msm, fit_ols, MsmDesign};
use crate::optimal::{kow_weights, period_grams, KowConfig};
use crate::panel::{standardize, LongitudinalPanel};
use crate::qp::{solve_from, SolveOptions};
use crate::tuner::tune;
use crate::weights::{iptw_weights, FeatureMap, IpwConfig, Method, WeightSet};

/// How the kernel and propensity models relate to the scenario's truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Specification {
    Correct,
    Overspecified,
    Misspecified,
}

impl FromStr for Specification {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(Specification::Correct),
            "overspecified" => Ok(Specification::Overspecified),
            "misspecified" => Ok(Specification::Misspecified),
            other => Err(KowError::Config(format!("unknown specification `{other}`"))),
        }
    }
}

/// Whether the working models are the nonlinear (quadratic) ones.
pub fn uses_nonlinear_models(scenario: Scenario, spec: Specification) -> Result<bool> {
    match (scenario.is_nonlinear(), spec) {
        (false, Specification::Correct) | (true, Specification::Misspecified) => Ok(false),
        (false, Specification::Overspecified) | (true, Specification::Correct) => Ok(true),
        (nl, s) => Err(KowError::Config(format!(
            "specification {s:?} is not defined for the {} scenario",
            if nl { "nonlinear" } else { "linear" }
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimMethod {
    /// Degree-one polynomial confounder kernel.
    KowK1,
    /// Quadratic confounder kernel.
    KowK2,
    Iptw(FeatureMap),
    Siptw(FeatureMap),
    Iptcw(FeatureMap),
    Siptcw(FeatureMap),
    Ols,
}

impl SimMethod {
    /// Methods compared under a scenario/specification pair.
    pub fn defaults(scenario: Scenario, spec: Specification) -> Result<Vec<SimMethod>> {
        let nl = uses_nonlinear_models(scenario, spec)?;
        let map = if nl { FeatureMap::Nonlinear } else { FeatureMap::Linear };
        let kow = if nl { SimMethod::KowK2 } else { SimMethod::KowK1 };
        Ok(if scenario == Scenario::LinearCensored {
            vec![kow, SimMethod::Iptcw(map), SimMethod::Siptcw(map), SimMethod::Ols]
        } else {
            vec![kow, SimMethod::Iptw(map), SimMethod::Siptw(map), SimMethod::Ols]
        })
    }

    pub fn is_kow(self) -> bool {
        matches!(self, SimMethod::KowK1 | SimMethod::KowK2)
    }

    pub fn kernel(self) -> Option<KernelSpec> {
        match self {
            SimMethod::KowK1 => Some(KernelSpec::poly(1)),
            SimMethod::KowK2 => Some(KernelSpec::poly(2)),
            _ => None,
        }
    }
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let map = |m: &FeatureMap| match m {
            FeatureMap::Linear => "linear",
            FeatureMap::Nonlinear => "nonlinear",
        };
        match self {
            SimMethod::KowK1 => f.write_str("KOW-K1"),
            SimMethod::KowK2 => f.write_str("KOW-K2"),
            SimMethod::Iptw(m) => write!(f, "IPTW-{}", map(m)),
            SimMethod::Siptw(m) => write!(f, "sIPTW-{}", map(m)),
            SimMethod::Iptcw(m) => write!(f, "IPTCW-{}", map(m)),
            SimMethod::Siptcw(m) => write!(f, "sIPTCW-{}", map(m)),
            SimMethod::Ols => f.write_str("OLS"),
        }
    }
}

impl FromStr for SimMethod {
    type Err = KowError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "kow-k1" {
            return Ok(SimMethod::KowK1);
        }
        if lower == "kow-k2" {
            return Ok(SimMethod::KowK2);
        }
        if lower == "ols" {
            return Ok(SimMethod::Ols);
        }
        let (name, map) = lower
            .split_once('-')
            .ok_or_else(|| KowError::Config(format!("unknown simulation method `{s}`")))?;
        let map: FeatureMap = map.parse()?;
        match name {
            "iptw" => Ok(SimMethod::Iptw(map)),
            "siptw" => Ok(SimMethod::Siptw(map)),
            "iptcw" => Ok(SimMethod::Iptcw(map)),
            "siptcw" => Ok(SimMethod::Siptcw(map)),
            _ => Err(KowError::Config(format!("unknown simulation method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub specification: Specification,
    /// Empty means the defaults for the scenario and specification.
    pub methods: Vec<SimMethod>,
    pub n_grid: Vec<usize>,
    /// Fixed KOW penalties; when set the study sweeps them at `n_grid[0]`.
    pub lambda_grid: Option<Vec<f64>>,
    pub reps: usize,
    pub seed: u64,
    pub periods: usize,
    pub confounders: usize,
    pub qp: SolveOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Linear,
            specification: Specification::Correct,
            methods: Vec::new(),
            n_grid: vec![500],
            lambda_grid: None,
            reps: 200,
            seed: 20_240_101,
            periods: 3,
            confounders: 3,
            qp: SolveOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn resolved_methods(&self) -> Result<Vec<SimMethod>> {
        if self.methods.is_empty() {
            SimMethod::defaults(self.scenario, self.specification)
        } else {
            Ok(self.methods.clone())
        }
    }

    fn dgp(&self, n: usize, rep: usize) -> DgpSpec {
        let mut spec = DgpSpec::new(self.scenario, n, self.seed).with_stream(rep as u64);
        spec.periods = self.periods;
        spec.confounders = self.confounders;
        spec
    }
}

/// `geomspace(lo, hi, points - 1)` preceded by zero.
pub fn lambda_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    let m = points.saturating_sub(1);
    for k in 0..m {
        let f = if m == 1 { 0.0 } else { k as f64 / (m - 1) as f64 };
        grid.push((lo.ln() + f * (hi.ln() - lo.ln())).exp());
    }
    grid
}

/// One estimate of the cumulative-treatment coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub method: String,
    pub n: usize,
    pub lambda: Option<f64>,
    pub estimate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub n: usize,
    pub lambda: Option<f64>,
    pub reps: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub bias_mc_se: f64,
    pub variance_mc_se: f64,
    pub mse_mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub truth: f64,
    pub summaries: Vec<Summary>,
    pub records: Vec<Record>,
}

/// Moments of `estimates - truth` with divisor `R`.
pub fn summarize(method: &str, n: usize, lambda: Option<f64>, estimates: &[f64], failures: usize, truth: f64) -> Summary {
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let bias = mean - truth;
    let dev2: Vec<f64> = estimates.iter().map(|e| (e - mean).powi(2)).collect();
    let err2: Vec<f64> = estimates.iter().map(|e| (e - truth).powi(2)).collect();
    let variance = dev2.iter().sum::<f64>() / r;
    let mse = err2.iter().sum::<f64>() / r;
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / r;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r).sqrt()
    };
    Summary {
        method: method.to_string(),
        n,
        lambda,
        reps: estimates.len(),
        failures,
        mean,
        bias,
        variance,
        mse,
        bias_mc_se: variance.sqrt() / r.sqrt(),
        variance_mc_se: sd(&dev2) / r.sqrt(),
        mse_mc_se: sd(&err2) / r.sqrt(),
    }
}

fn effect(panel: &LongitudinalPanel, weights: &WeightSet) -> Result<f64> {
    Ok(fit_msm(panel, weights, MsmDesign::Cumulative)?.coefficients[1].estimate)
}

fn baseline(panel: &LongitudinalPanel, method: SimMethod) -> Result<f64> {
    let (m, map) = match method {
        SimMethod::Iptw(f) => (Method::Iptw, f),
        SimMethod::Siptw(f) => (Method::Siptw, f),
        SimMethod::Iptcw(f) => (Method::Iptcw, f),
        SimMethod::Siptcw(f) => (Method::Siptcw, f),
        SimMethod::Ols => return Ok(fit_ols(panel, MsmDesign::Cumulative)?.coefficients[1].estimate),
        _ => unreachable!("KOW handled separately"),
    };
    let res = iptw_weights(
        panel,
        m,
        &IpwConfig {
            features: map,
            lags: None,
        },
    )?;
    effect(panel, &res.weights)
}

fn kow_config(kernel: KernelSpec, censoring: bool, qp: SolveOptions) -> KowConfig {
    KowConfig {
        kernel,
        lambda: None,
        censoring,
        mean_one: false,
        standardize: true,
        qp,
    }
}

/// KOW estimates along a penalty grid with the kernel scales tuned once.
fn kow_sweep(panel: &LongitudinalPanel, kernel: KernelSpec, censoring: bool, lambdas: &[f64], qp: &SolveOptions) -> Result<Vec<f64>> {
    let (work, _) = standardize(panel);
    let horizon = work.periods();
    let tuned = tune(&work, &kernel, horizon, Execution::Sequential)?;
    let grams = period_grams(&work, &tuned.specs(&kernel), Execution::Sequential)?;
    let mode = if censoring { BalanceMode::Censored } else { BalanceMode::Uncensored };
    let inds = indicators(&work, horizon, mode)?;
    let base = assemble_problem(&grams, &inds, 0.0, None)?;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut start: Option<Vec<f64>> = None;
    for &lambda in lambdas {
        let problem = base.with_lambda(lambda);
        let sol = solve_from(&problem, start.as_deref(), qp)?;
        let ws = WeightSet {
            method: Method::Kow,
            lambda: Some(lambda),
            unit_ids: panel.unit_ids().to_vec(),
            horizons: vec![horizon],
            weights: vec![sol.weights.clone()],
            flags: Vec::new(),
        };
        out.push(effect(panel, &ws)?);
        start = Some(sol.weights);
    }
    Ok(out)
}

fn one_replication(cfg: &StudyConfig, methods: &[SimMethod], n: usize, rep: usize) -> Vec<Record> {
    let record = |method: SimMethod, lambda: Option<f64>, res: std::result::Result<f64, String>| Record {
        rep,
        method: method.to_string(),
        n,
        lambda,
        estimate: res.as_ref().ok().copied(),
        error: res.err(),
    };
    let data = match draw(&cfg.dgp(n, rep)) {
        Ok(d) => d,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| record(m, None, Err(format!("draw failed: {e}"))))
                .collect()
        }
    };
    let panel = &data.panel;
    let censoring = panel.has_censoring();
    let mut out = Vec::new();
    for &m in methods {
        match (m.kernel(), &cfg.lambda_grid) {
            (Some(kernel), Some(grid)) => match kow_sweep(panel, kernel, censoring, grid, &cfg.qp) {
                Ok(est) => out.extend(grid.iter().zip(est).map(|(&l, e)| record(m, Some(l), Ok(e)))),
                Err(e) => out.extend(grid.iter().map(|&l| record(m, Some(l), Err(e.to_string())))),
            },
            (Some(kernel), None) => {
                let res = kow_weights(panel, &kow_config(kernel, censoring, cfg.qp), Execution::Sequential)
                    .and_then(|r| effect(panel, &r.weights));
                out.push(record(m, None, res.map_err(|e| e.to_string())));
            }
            (None, _) => out.push(record(m, None, baseline(panel, m).map_err(|e| e.to_string()))),
        }
    }
    out
}

/// Run every replication (in parallel when requested) and aggregate in
/// replication order.
pub fn replicate(cfg: &StudyConfig, exec: Execution) -> Result<StudyResult> {
    if cfg.reps == 0 || cfg.n_grid.is_empty() {
        return Err(KowError::Config("study needs at least one replication and one sample size".into()));
    }
    let methods = cfg.resolved_methods()?;
    let ns: Vec<usize> = if cfg.lambda_grid.is_some() { vec![cfg.n_grid[0]] } else { cfg.n_grid.clone() };
    let truth = super::dgp::Coefficients::for_scenario(cfg.scenario).effect;
    let mut records = Vec::new();
    for &n in &ns {
        let per_rep = exec.map(cfg.reps, |rep| one_replication(cfg, &methods, n, rep));
        records.extend(per_rep.into_iter().flatten());
    }
    let mut keys: Vec<(String, usize, Option<f64>)> = Vec::new();
    for r in &records {
        let key = (r.method.clone(), r.n, r.lambda);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let summaries = keys
        .into_iter()
        .map(|(method, n, lambda)| {
            let sel: Vec<&Record> = records
                .iter()
                .filter(|r| r.method == method && r.n == n && r.lambda == lambda)
                .collect();
            let est: Vec<f64> = sel.iter().filter_map(|r| r.estimate).collect();
            let failures = sel.len() - est.len();
            summarize(&method, n, lambda, &est, failures, truth)
        })
        .collect();
    Ok(StudyResult {
        config: StudyConfig {
            methods,
            ..cfg.clone()
        },
        truth,
        summaries,
        records,
    })
}

impl StudyResult {
    pub fn summary(&self, method: &str, n: usize, lambda: Option<f64>) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.n == n && s.lambda == lambda)
    }

    /// Estimates of one method keyed by replication.
    pub fn estimates(&self, method: &str, n: usize, lambda: Option<f64>) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.n == n && r.lambda == lambda)
            .filter_map(|r| r.estimate.map(|e| (r.rep, e)))
            .collect()
    }

    /// `summary.csv`: method, grid, bias, mse, var, Monte Carlo SEs, reps.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "method", "n", "lambda", "bias", "mse", "var", "bias_mc_se", "mse_mc_se", "var_mc_se", "reps", "failures",
        ])?;
        for s in &self.summaries {
            out.write_record([
                s.method.clone(),
                s.n.to_string(),
                s.lambda.map_or_else(String::new, |l| l.to_string()),
                s.bias.to_string(),
                s.mse.to_string(),
                s.variance.to_string(),
                s.bias_mc_se.to_string(),
                s.mse_mc_se.to_string(),
                s.variance_mc_se.to_string(),
                s.reps.to_string(),
                s.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-replication estimates.
    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["rep", "method", "n", "lambda", "estimate", "error"])?;
        for r in &self.records {
            out.write_record([
                r.rep.to_string(),
                r.method.clone(),
                r.n.to_string(),
                r.lambda.map_or_else(String::new, |l| l.to_string()),
                r.estimate.map_or_else(String::new, |e| e.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
