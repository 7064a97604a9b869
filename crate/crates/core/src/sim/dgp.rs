//! Data-generating processes of the simulation study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logistic::sigmoid;
use crate::panel::{LongitudinalPanel, OutcomeMode, PanelParts};
use crate::weights::Probabilities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Linear,
    Nonlinear,
    LinearCensored,
}

impl std::str::FromStr for Scenario {
    type Err = crate::KowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scenario::Linear),
            "nonlinear" => Ok(Scenario::Nonlinear),
            "linear-censored" | "censored" => Ok(Scenario::LinearCensored),
            other => Err(crate::KowError::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Linear => "linear",
            Scenario::Nonlinear => "nonlinear",
            Scenario::LinearCensored => "linear-censored",
        })
    }
}

impl Scenario {
    pub fn is_nonlinear(self) -> bool {
        self == Scenario::Nonlinear
    }
}

/// Constants of the outcome, treatment and censoring models. Per-confounder
/// coefficients are recycled when there are more than three confounders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub intercept: f64,
    pub effect: f64,
    pub z: f64,
    /// Coefficient of each unordered pair `Z_k Z_m`, `k < m`.
    pub z_pairs: f64,
    /// Variance of the outcome noise.
    pub noise_variance: f64,
    pub drift: f64,
    pub treat_intercept: f64,
    pub treat_lag: f64,
    pub treat_x: Vec<f64>,
    pub treat_lag_x: f64,
    pub treat_x2: Vec<f64>,
    pub treat_pairs: f64,
    pub treat_lag_x2: f64,
    pub treat_lag_pairs: f64,
    pub censor_intercept: f64,
    pub censor_x: f64,
    pub censor_lag: f64,
}

impl Coefficients {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let nonlinear = scenario.is_nonlinear();
        Self {
            intercept: if nonlinear { -21.46 } else { -1.91 },
            effect: 0.8,
            z: 0.5,
            z_pairs: if nonlinear { 0.1 } else { 0.05 },
            noise_variance: 5.0,
            drift: 0.1,
            treat_intercept: 0.5,
            treat_lag: 0.5,
            treat_x: vec![0.05, 0.08, -0.03],
            treat_lag_x: 0.2,
            treat_x2: if nonlinear { vec![0.025, 0.04, -0.015] } else { vec![0.0; 3] },
            treat_pairs: if nonlinear { 0.3 } else { 0.0 },
            treat_lag_x2: if nonlinear { 0.1 } else { 0.0 },
            treat_lag_pairs: if nonlinear { 0.05 } else { 0.0 },
            censor_intercept: -2.2,
            censor_x: 0.3,
            censor_lag: 0.3,
        }
    }

    /// `logit P(A_t = 1 | A_{t-1}, X_t)`
    pub fn treatment_logit(&self, lag: f64, x: &[f64]) -> f64 {
        let cyc = |v: &[f64], k: usize| v[k % v.len()];
        let sum: f64 = x.iter().sum();
        let sq: f64 = x.iter().map(|v| v * v).sum();
        let mut pairs = 0.0;
        for k in 0..x.len() {
            for m in k + 1..x.len() {
                pairs += x[k] * x[m];
            }
        }
        let mut eta = self.treat_intercept + self.treat_lag * lag + self.treat_lag_x * lag * sum;
        for (k, v) in x.iter().enumerate() {
            eta += cyc(&self.treat_x, k) * v + cyc(&self.treat_x2, k) * v * v;
        }
        eta + self.treat_pairs * pairs + self.treat_lag_x2 * lag * sq + self.treat_lag_pairs * lag * pairs
    }

    /// `logit P(C_t = 1 | A_{t-1}, X_t)`
    pub fn censor_logit(&self, lag: f64, x: &[f64]) -> f64 {
        self.censor_intercept + self.censor_x * x.iter().sum::<f64>() + self.censor_lag * lag
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub periods: usize,
    pub n: usize,
    pub confounders: usize,
    pub seed: u64,
    /// Independent substream, e.g. the replication index.
    pub stream: u64,
    pub outcome_mode: OutcomeMode,
    pub coefficients: Coefficients,
}

impl DgpSpec {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            periods: 3,
            n,
            confounders: 3,
            seed,
            stream: 0,
            outcome_mode: OutcomeMode::Final,
            coefficients: Coefficients::for_scenario(scenario),
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// A simulated panel with the true treatment and censoring probabilities.
#[derive(Debug, Clone)]
pub struct Draw {
    pub panel: LongitudinalPanel,
    pub probabilities: Probabilities,
}

/// Outcome mean given cumulative treatment and the per-confounder `Z` sums.
fn outcome_mean(c: &Coefficients, cum_treat: f64, z: &[f64]) -> f64 {
    let mut pairs = 0.0;
    for k in 0..z.len() {
        for m in k + 1..z.len() {
            pairs += z[k] * z[m];
        }
    }
    c.intercept + c.effect * cum_treat + c.z * z.iter().sum::<f64>() + c.z_pairs * pairs
}

pub fn draw(spec: &DgpSpec) -> Result<Draw> {
    let (n, periods, p) = (spec.n, spec.periods, spec.confounders);
    let c = &spec.coefficients;
    let censoring = spec.scenario == Scenario::LinearCensored;
    let nonlinear = spec.scenario.is_nonlinear();
    let mut rng = spec.rng();
    let noise = Normal::new(0.0, c.noise_variance.sqrt()).expect("positive variance");
    let std = Normal::new(0.0, 1.0).expect("unit normal");

    let cells = n * periods;
    let mut treatment = vec![0u8; cells];
    let mut censored = vec![0u8; cells];
    let mut confounders = vec![0.0; cells * p];
    let mut treated_prob = vec![0.0; cells];
    let mut uncensored_prob = vec![1.0; cells];
    let repeated = spec.outcome_mode == OutcomeMode::Repeated;
    let mut outcome = vec![0.0; if repeated { cells } else { n }];
    let mut observed = vec![true; outcome.len()];

    for i in 0..n {
        let mut x = vec![0.0; p];
        let mut z = vec![0.0; p];
        let mut lag = 0.0;
        let mut cum = 0.0;
        let mut dropped = false;
        for t in 0..periods {
            let cell = i * periods + t;
            for (k, v) in x.iter_mut().enumerate() {
                *v += c.drift + std.sample(&mut rng);
                z[k] += if nonlinear { *v * *v } else { *v };
            }
            if !dropped {
                confounders[cell * p..(cell + 1) * p].copy_from_slice(&x);
                if censoring {
                    let pc = sigmoid(c.censor_logit(lag, &x));
                    uncensored_prob[cell] = 1.0 - pc;
                    if rng.random::<f64>() < pc {
                        dropped = true;
                    }
                }
            }
            if dropped {
                censored[cell] = 1;
            }
            let pa = sigmoid(c.treatment_logit(lag, &x));
            treated_prob[cell] = pa;
            let a = rng.random::<f64>() < pa;
            if !dropped {
                treatment[cell] = u8::from(a);
            }
            lag = f64::from(u8::from(a));
            cum += lag;
            let e = noise.sample(&mut rng);
            if repeated {
                outcome[cell] = outcome_mean(c, cum, &z) + e;
                observed[cell] = !dropped;
            } else if t + 1 == periods {
                outcome[i] = outcome_mean(c, cum, &z) + e;
                observed[i] = !dropped;
            }
        }
    }
    let panel = LongitudinalPanel::from_parts(PanelParts {
        unit_ids: (1..=n).map(|i| i.to_string()).collect(),
        periods,
        confounder_names: (1..=p).map(|k| format!("x{k}")).collect(),
        treatment,
        censored,
        confounders,
        outcome_mode: spec.outcome_mode,
        outcome,
        outcome_observed: observed,
    })?;
    Ok(Draw {
        panel,
        probabilities: Probabilities {
            treated: treated_prob,
            uncensored: censoring.then_some(uncensored_prob),
            numerator_treated: None,
            numerator_uncensored: None,
        },
    })
}
