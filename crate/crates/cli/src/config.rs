//! Run configuration: TOML file merged with command-line flags (flags win).

use std::path::{Path, PathBuf};

use kow::kernels::KernelSpec;
use kow::msm::MsmDesign;
use kow::panel::{OutcomeMode, PanelSchema};
use kow::qp::SolveOptions;
use kow::sim::study::{lambda_grid, SimMethod, Specification};
use kow::sim::{Scenario, StudyConfig, TimingConfig};
use kow::weights::{FeatureMap, Method};
use kow::KowError;
use serde::{Deserialize, Serialize};

/// `lambda = "auto"` or a fixed nonnegative number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaChoice {
    Value(f64),
    Keyword(String),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Keyword("auto".into())
    }
}

impl LambdaChoice {
    pub fn parse(s: &str) -> Result<Self, KowError> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaChoice::Keyword("auto".into()));
        }
        s.parse::<f64>()
            .map(LambdaChoice::Value)
            .map_err(|_| KowError::Config(format!("lambda must be `auto` or a number, got `{s}`")))
    }

    /// `None` means tune by marginal likelihood.
    pub fn resolve(&self) -> Result<Option<f64>, KowError> {
        match self {
            LambdaChoice::Value(v) if v.is_finite() && *v >= 0.0 => Ok(Some(*v)),
            LambdaChoice::Value(v) => Err(KowError::Config(format!("lambda {v} must be finite and nonnegative"))),
            LambdaChoice::Keyword(k) if k.eq_ignore_ascii_case("auto") => Ok(None),
            LambdaChoice::Keyword(k) => Err(KowError::Config(format!("lambda must be `auto` or a number, got `{k}`"))),
        }
    }
}

/// `kernel = "poly:2@1"` or a full table such as
/// `kernel = { confounder = "gaussian", gamma = 1.5 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelChoice {
    Short(String),
    Full(KernelSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: Scenario,
    pub specification: Specification,
    pub n: Vec<usize>,
    pub reps: usize,
    /// Empty means the defaults for the scenario and specification.
    pub methods: Vec<String>,
    pub lambda_grid: Option<Vec<f64>>,
    pub periods: usize,
    pub confounders: usize,
    /// Also write per-replication estimates.
    pub records: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = StudyConfig::default();
        Self {
            scenario: d.scenario,
            specification: d.specification,
            n: d.n_grid,
            reps: d.reps,
            methods: Vec::new(),
            lambda_grid: None,
            periods: d.periods,
            confounders: d.confounders,
            records: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub n: usize,
    pub periods: Vec<usize>,
    pub confounders: Vec<usize>,
    pub base_periods: usize,
    pub base_confounders: usize,
    pub repeats: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        let d = TimingConfig::default();
        Self {
            n: d.n,
            periods: d.period_grid,
            confounders: d.confounder_grid,
            base_periods: d.base_periods,
            base_confounders: d.base_confounders,
            repeats: d.repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: PanelSchema,
    pub kernel: KernelChoice,
    pub lags: Option<usize>,
    pub lambda: LambdaChoice,
    pub method: Method,
    /// Covariate map of the propensity models.
    pub features: FeatureMap,
    pub design: MsmDesign,
    pub censoring: bool,
    pub repeated_outcomes: bool,
    pub mean_one: bool,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub seed: u64,
    pub qp: SolveOptions,
    pub jobs: Option<usize>,
    pub simulate: SimulateSection,
    pub timing: TimingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            schema: PanelSchema::default(),
            kernel: KernelChoice::Short("poly:2".into()),
            lags: None,
            lambda: LambdaChoice::default(),
            method: Method::Kow,
            features: FeatureMap::Linear,
            design: MsmDesign::Cumulative,
            censoring: false,
            repeated_outcomes: false,
            mean_one: false,
            out_dir: PathBuf::from("kow-out"),
            seed: StudyConfig::default().seed,
            qp: SolveOptions::default(),
            jobs: None,
            simulate: SimulateSection::default(),
            timing: TimingSection::default(),
        }
    }
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, KowError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KowError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| KowError::Config(format!("{}: {e}", path.display())))
}

/// Parse `a,b,c` into numbers, or `geom:LO:HI:POINTS` into zero followed by a
/// geometric grid.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>, KowError> {
    let bad = || KowError::Config(format!("cannot parse lambda grid `{s}`"));
    if let Some(rest) = s.strip_prefix("geom:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, points] = parts[..] else { return Err(bad()) };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let points: usize = points.parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi > lo && points >= 2) {
            return Err(bad());
        }
        return Ok(lambda_grid(lo, hi, points));
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

impl RunConfig {
    pub fn kernel_spec(&self) -> Result<KernelSpec, KowError> {
        let mut spec = match &self.kernel {
            KernelChoice::Short(s) => s.parse()?,
            KernelChoice::Full(spec) => *spec,
        };
        if self.lags.is_some() {
            spec.lags = self.lags;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Schema with the mode flags applied.
    pub fn panel_schema(&self) -> Result<PanelSchema, KowError> {
        let mut schema = self.schema.clone();
        if self.repeated_outcomes {
            schema.outcome_mode = OutcomeMode::Repeated;
        }
        if self.uses_censoring() {
            if schema.censor.is_none() {
                return Err(KowError::Config("censoring mode requires a censor column in the schema".into()));
            }
            schema.require_censor = true;
        }
        Ok(schema)
    }

    pub fn uses_censoring(&self) -> bool {
        self.censoring || self.method.uses_censoring()
    }

    pub fn input(&self) -> Result<&Path, KowError> {
        self.input
            .as_deref()
            .ok_or_else(|| KowError::Config("no input panel given (--input or `input` in the config file)".into()))
    }

    pub fn study(&self) -> Result<StudyConfig, KowError> {
        let s = &self.simulate;
        let methods = s.methods.iter().map(|m| m.parse::<SimMethod>()).collect::<Result<Vec<_>, _>>()?;
        if s.n.is_empty() || s.n.contains(&0) {
            return Err(KowError::Config("simulation sample sizes must be positive".into()));
        }
        if s.reps == 0 {
            return Err(KowError::Config("simulation needs at least one replication".into()));
        }
        let cfg = StudyConfig {
            scenario: s.scenario,
            specification: s.specification,
            methods,
            n_grid: s.n.clone(),
            lambda_grid: s.lambda_grid.clone(),
            reps: s.reps,
            seed: self.seed,
            periods: s.periods,
            confounders: s.confounders,
            qp: self.qp,
        };
        cfg.resolved_methods()?;
        Ok(cfg)
    }

    pub fn timing_config(&self) -> Result<TimingConfig, KowError> {
        let t = &self.timing;
        let mut kernel = self.kernel_spec()?;
        if kernel.lags.is_none() {
            kernel.lags = TimingConfig::default().kernel.lags;
        }
        Ok(TimingConfig {
            n: t.n,
            period_grid: t.periods.clone(),
            base_confounders: t.base_confounders,
            confounder_grid: t.confounders.clone(),
            base_periods: t.base_periods,
            repeats: t.repeats,
            kernel,
            seed: self.seed,
        })
    }

    /// Checks that do not need the input data.
    pub fn validate(&self) -> Result<(), KowError> {
        self.kernel_spec()?;
        self.lambda.resolve()?;
        self.panel_schema()?;
        if self.censoring && matches!(self.method, Method::Iptw | Method::Siptw) {
            return Err(KowError::Config(format!(
                "method {} ignores censoring; use {}",
                self.method,
                if self.method.is_stabilized() { "siptcw" } else { "iptcw" }
            )));
        }
        if !(self.qp.tol > 0.0) {
            return Err(KowError::Config(format!("QP tolerance {} must be positive", self.qp.tol)));
        }
        if self.jobs == Some(0) {
            return Err(KowError::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}
