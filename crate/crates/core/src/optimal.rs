//! End-to-end kernel optimal weighting: standardize, tune, build grams,
//! assemble the balance problem and solve it, once per outcome horizon.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::balance::{assemble_problem, imbalance_report, indicators, mean_one_sets, BalanceMode, ImbalanceReport};
use crate::error::{KowError, Result, Stage, StageExt};
use crate::exec::Execution;
use crate::kernels::{gram_with, GramMatrix, KernelSpec};
use crate::panel::{standardize, LongitudinalPanel, StandardizationReport};
use crate::qp::{solve, KktResiduals, QpStatus, SolveOptions};
use crate::tuner::{tune, TuneResult};
use crate::weights::{outcome_horizons, Method, WeightSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KowConfig {
    pub kernel: KernelSpec,
    /// Fixed penalty; `None` tunes it by marginal likelihood.
    pub lambda: Option<f64>,
    pub censoring: bool,
    pub mean_one: bool,
    pub standardize: bool,
    pub qp: SolveOptions,
}

impl Default for KowConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            lambda: None,
            censoring: false,
            mean_one: false,
            standardize: true,
            qp: SolveOptions::default(),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub tune: f64,
    pub gram: f64,
    pub assemble: f64,
    pub solve: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.tune + self.gram + self.assemble + self.solve
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonFit {
    pub horizon: usize,
    pub lambda: f64,
    pub kernels: Vec<KernelSpec>,
    pub tuning: Option<TuneResult>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub ridge: f64,
    pub imbalance_before: ImbalanceReport,
    pub imbalance_after: ImbalanceReport,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KowResult {
    pub weights: WeightSet,
    pub horizons: Vec<HorizonFit>,
    pub standardization: Option<StandardizationReport>,
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Per-period grams for periods `1..=specs.len()`, each checked for PSD.
pub fn period_grams(panel: &LongitudinalPanel, specs: &[KernelSpec], exec: Execution) -> Result<Vec<GramMatrix>> {
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let g = gram_with(panel, spec, k + 1, exec)?;
            g.verify_psd()?;
            Ok(g)
        })
        .collect()
}

/// Solve one horizon on an already standardized panel.
pub fn kow_horizon(panel: &LongitudinalPanel, cfg: &KowConfig, horizon: usize, exec: Execution) -> Result<(Vec<f64>, HorizonFit)> {
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let (lambda, kernels, tuning) = match cfg.lambda {
        Some(lambda) => (lambda, vec![cfg.kernel; horizon], None),
        None => {
            let tuned = tune(panel, &cfg.kernel, horizon, exec).stage(Stage::Tune)?;
            (tuned.lambda, tuned.specs(&cfg.kernel), Some(tuned))
        }
    };
    timings.tune = seconds(start);

    let start = Instant::now();
    let grams = period_grams(panel, &kernels, exec).stage(Stage::Gram)?;
    timings.gram = seconds(start);

    let start = Instant::now();
    let mode = if cfg.censoring { BalanceMode::Censored } else { BalanceMode::Uncensored };
    let inds = indicators(panel, horizon, mode).stage(Stage::Assemble)?;
    let sets = cfg.mean_one.then(|| mean_one_sets(panel, horizon));
    let problem = assemble_problem(&grams, &inds, lambda, sets.as_deref()).stage(Stage::Assemble)?;
    timings.assemble = seconds(start);

    let start = Instant::now();
    let sol = solve(&problem, &cfg.qp).stage(Stage::Solve)?;
    timings.solve = seconds(start);

    let uniform = vec![1.0; panel.n_units()];
    let fit = HorizonFit {
        horizon,
        lambda,
        kernels,
        tuning,
        status: sol.status,
        iterations: sol.iterations,
        objective: problem.scaled_objective(&nalgebra::DVector::from_column_slice(&sol.weights)),
        kkt: sol.kkt,
        ridge: sol.ridge,
        imbalance_before: imbalance_report(&uniform, &grams, &inds).stage(Stage::Assemble)?,
        imbalance_after: imbalance_report(&sol.weights, &grams, &inds).stage(Stage::Assemble)?,
        timings,
    };
    Ok((sol.weights, fit))
}

/// Kernel optimal weights for every outcome horizon of the panel.
pub fn kow_weights(panel: &LongitudinalPanel, cfg: &KowConfig, exec: Execution) -> Result<KowResult> {
    cfg.kernel.validate().map_err(|e| e.at(Stage::Gram))?;
    if panel.has_censoring() && !cfg.censoring {
        return Err(KowError::Config("panel has censored units; enable censoring mode".into()));
    }
    let (work, report) = if cfg.standardize {
        let (p, r) = standardize(panel);
        (p, Some(r))
    } else {
        (panel.clone(), None)
    };
    let horizons = outcome_horizons(&work);
    let mut weights = Vec::with_capacity(horizons.len());
    let mut fits = Vec::with_capacity(horizons.len());
    for &h in &horizons {
        let (w, fit) = kow_horizon(&work, cfg, h, exec)?;
        weights.push(w);
        fits.push(fit);
    }
    let mut flags = Vec::new();
    for f in &fits {
        if f.status != QpStatus::Optimal {
            flags.push(format!("solver status {:?} at horizon {}", f.status, f.horizon));
        }
        if f.ridge > 0.0 {
            flags.push(format!("ridge {:e} added to a singular system at horizon {}", f.ridge, f.horizon));
        }
    }
    Ok(KowResult {
        weights: WeightSet {
            method: Method::Kow,
            lambda: fits.last().map(|f| f.lambda),
            unit_ids: panel.unit_ids().to_vec(),
            horizons,
            weights,
            flags,
        },
        horizons: fits,
        standardization: report,
    })
}
