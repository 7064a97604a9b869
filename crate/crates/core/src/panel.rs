//! Longitudinal panel data: ingestion, validation, scaling and history views.
//!
//! Periods are 1-based throughout the public API (`1..=periods()`), matching
//! the usual notation for treatment and confounder histories. Cells that are
//! undefined because of censoring are stored as zeros and are never exposed
//! through the `Option`-returning accessors.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeMode {
    /// One outcome per unit, observed at the end of follow-up.
    #[default]
    Final,
    /// One outcome per unit and period, with an availability mask.
    Repeated,
}

/// Raw arrays used to build a panel programmatically. All per-cell arrays are
/// unit-major: index `i * periods + (t - 1)`, with confounders further
/// expanded by `n_confounders`.
#[derive(Debug, Clone)]
pub struct PanelParts {
    pub unit_ids: Vec<String>,
    pub periods: usize,
    pub confounder_names: Vec<String>,
    pub treatment: Vec<u8>,
    pub censored: Vec<u8>,
    pub confounders: Vec<f64>,
    pub outcome_mode: OutcomeMode,
    pub outcome: Vec<f64>,
    pub outcome_observed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalPanel {
    unit_ids: Vec<String>,
    periods: usize,
    confounder_names: Vec<String>,
    treatment: Vec<u8>,
    censored: Vec<u8>,
    confounders: Vec<f64>,
    outcome_mode: OutcomeMode,
    outcome: Vec<f64>,
    outcome_observed: Vec<bool>,
}

impl LongitudinalPanel {
    pub fn from_parts(parts: PanelParts) -> Result<Self> {
        let PanelParts {
            unit_ids,
            periods,
            confounder_names,
            mut treatment,
            censored,
            mut confounders,
            outcome_mode,
            mut outcome,
            mut outcome_observed,
        } = parts;
        let n = unit_ids.len();
        let p = confounder_names.len();
        if periods == 0 {
            return Err(KowError::InvalidData("panel needs at least one period".into()));
        }
        let cells = n * periods;
        let check_len = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(KowError::DimensionMismatch(format!(
                    "{what}: expected {want} entries, got {got}"
                )))
            }
        };
        check_len("treatment", treatment.len(), cells)?;
        check_len("censored", censored.len(), cells)?;
        check_len("confounders", confounders.len(), cells * p)?;
        let outcome_len = match outcome_mode {
            OutcomeMode::Final => n,
            OutcomeMode::Repeated => cells,
        };
        check_len("outcome", outcome.len(), outcome_len)?;
        check_len("outcome mask", outcome_observed.len(), outcome_len)?;

        for i in 0..n {
            let unit = &unit_ids[i];
            for t in 0..periods {
                let c = censored[i * periods + t];
                if c > 1 {
                    return Err(KowError::InvalidData(format!(
                        "censoring indicator {c} for unit `{unit}` at time {}",
                        t + 1
                    )));
                }
                if t > 0 && censored[i * periods + t - 1] == 1 && c == 0 {
                    return Err(KowError::NonMonotoneCensoring {
                        unit: unit.clone(),
                        time: t + 1,
                    });
                }
                let cell = i * periods + t;
                if c == 1 {
                    treatment[cell] = 0;
                } else if treatment[cell] > 1 {
                    return Err(KowError::NonBinaryTreatment {
                        unit: unit.clone(),
                        time: t + 1,
                        value: treatment[cell].to_string(),
                    });
                }
                let at_risk = t == 0 || censored[cell - 1] == 0;
                let xs = &mut confounders[cell * p..(cell + 1) * p];
                if at_risk {
                    if let Some(k) = xs.iter().position(|x| !x.is_finite()) {
                        return Err(KowError::InvalidData(format!(
                            "non-finite confounder `{}` for unit `{unit}` at time {}",
                            confounder_names[k],
                            t + 1
                        )));
                    }
                } else {
                    xs.fill(0.0);
                }
            }
        }
        // Outcomes of censored cells are not part of the observed data.
        for (k, (v, obs)) in outcome.iter_mut().zip(outcome_observed.iter_mut()).enumerate() {
            let (i, t) = match outcome_mode {
                OutcomeMode::Final => (k, periods - 1),
                OutcomeMode::Repeated => (k / periods, k % periods),
            };
            if censored[i * periods + t] == 1 {
                *obs = false;
            }
            if *obs && !v.is_finite() {
                return Err(KowError::InvalidData(format!(
                    "non-finite outcome for unit `{}`",
                    unit_ids[i]
                )));
            }
            if !*obs {
                *v = 0.0;
            }
        }

        Ok(Self {
            unit_ids,
            periods,
            confounder_names,
            treatment,
            censored,
            confounders,
            outcome_mode,
            outcome,
            outcome_observed,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn n_confounders(&self) -> usize {
        self.confounder_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn confounder_names(&self) -> &[String] {
        &self.confounder_names
    }

    pub fn outcome_mode(&self) -> OutcomeMode {
        self.outcome_mode
    }

    fn cell(&self, unit: usize, period: usize) -> usize {
        debug_assert!(period >= 1 && period <= self.periods);
        unit * self.periods + period - 1
    }

    pub fn check_period(&self, period: usize) -> Result<()> {
        if period == 0 || period > self.periods {
            Err(KowError::PeriodOutOfRange {
                period,
                periods: self.periods,
            })
        } else {
            Ok(())
        }
    }

    /// `C_{it}`; period 0 is the conventional uncensored start.
    pub fn is_censored(&self, unit: usize, period: usize) -> bool {
        period > 0 && self.censored[self.cell(unit, period)] == 1
    }

    /// True when the unit entered `period` uncensored, i.e. `C_{i,t-1} = 0`.
    pub fn at_risk(&self, unit: usize, period: usize) -> bool {
        !self.is_censored(unit, period - 1)
    }

    pub fn has_censoring(&self) -> bool {
        self.censored.contains(&1)
    }

    pub fn treatment(&self, unit: usize, period: usize) -> Option<u8> {
        let cell = self.cell(unit, period);
        (self.censored[cell] == 0).then(|| self.treatment[cell])
    }

    /// Treatment with censored cells read as 0.
    pub fn treatment_or_zero(&self, unit: usize, period: usize) -> f64 {
        f64::from(self.treatment[self.cell(unit, period)])
    }

    pub fn confounders(&self, unit: usize, period: usize) -> Option<&[f64]> {
        self.at_risk(unit, period).then(|| self.confounders_raw(unit, period))
    }

    fn confounders_raw(&self, unit: usize, period: usize) -> &[f64] {
        let p = self.n_confounders();
        let cell = self.cell(unit, period);
        &self.confounders[cell * p..(cell + 1) * p]
    }

    /// Final outcome, `None` when unobserved (censored or missing).
    pub fn final_outcome(&self, unit: usize) -> Option<f64> {
        match self.outcome_mode {
            OutcomeMode::Final => self.outcome_observed[unit].then(|| self.outcome[unit]),
            OutcomeMode::Repeated => self.outcome_at(unit, self.periods),
        }
    }

    pub fn outcome_at(&self, unit: usize, period: usize) -> Option<f64> {
        match self.outcome_mode {
            OutcomeMode::Final => (period == self.periods)
                .then(|| self.final_outcome(unit))
                .flatten(),
            OutcomeMode::Repeated => {
                let cell = self.cell(unit, period);
                self.outcome_observed[cell].then(|| self.outcome[cell])
            }
        }
    }

    /// Outcome used for a horizon: the final outcome in final mode, the
    /// period outcome in repeated mode.
    pub fn horizon_outcome(&self, unit: usize, horizon: usize) -> Option<f64> {
        match self.outcome_mode {
            OutcomeMode::Final => self.final_outcome(unit),
            OutcomeMode::Repeated => self.outcome_at(unit, horizon),
        }
    }

    /// Cumulative treatment `sum_{s <= horizon} A_is` (censored cells count as 0).
    pub fn cumulative_treatment(&self, unit: usize, horizon: usize) -> f64 {
        (1..=horizon).map(|t| self.treatment_or_zero(unit, t)).sum()
    }

    /// Same panel with the confounder columns restricted to `keep` (by index).
    pub fn select_confounders(&self, keep: &[usize]) -> Result<Self> {
        let p = self.n_confounders();
        if let Some(&bad) = keep.iter().find(|&&k| k >= p) {
            return Err(KowError::DimensionMismatch(format!(
                "confounder index {bad} out of range for {p} columns"
            )));
        }
        let mut confounders = Vec::with_capacity(self.n_units() * self.periods * keep.len());
        for cell in 0..self.n_units() * self.periods {
            for &k in keep {
                confounders.push(self.confounders[cell * p + k]);
            }
        }
        let mut out = self.clone();
        out.confounder_names = keep.iter().map(|&k| self.confounder_names[k].clone()).collect();
        out.confounders = confounders;
        Ok(out)
    }
}

/// Column mapping for the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub treatment: String,
    pub censor: Option<String>,
    pub outcome: Option<String>,
    /// Confounder columns; `None` takes every unmapped column in header order.
    pub confounders: Option<Vec<String>>,
    pub outcome_mode: OutcomeMode,
    /// Fail when the censor column is absent instead of assuming no censoring.
    pub require_censor: bool,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            treatment: "treat".into(),
            censor: Some("censor".into()),
            outcome: Some("outcome".into()),
            confounders: None,
            outcome_mode: OutcomeMode::Final,
            require_censor: false,
        }
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<LongitudinalPanel> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

struct Row {
    treat: Option<u8>,
    censor: u8,
    outcome: Option<f64>,
    x: Vec<Option<f64>>,
}

fn parse_f64(raw: &str, what: &str, unit: &str, time: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| {
        KowError::InvalidData(format!(
            "cannot parse {what} `{raw}` for unit `{unit}` at time {time}"
        ))
    })
}

fn sort_ids(ids: &mut [String]) {
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.trim().parse::<i64>().ok()).collect();
    if numeric.is_some() {
        ids.sort_by_key(|s| s.trim().parse::<i64>().unwrap_or_default());
    } else {
        ids.sort();
    }
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<LongitudinalPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::Fields)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| find(name).ok_or_else(|| KowError::MissingColumn(name.to_string()));

    let unit_col = require(&schema.unit)?;
    let time_col = require(&schema.time)?;
    let treat_col = require(&schema.treatment)?;
    let censor_col = match &schema.censor {
        Some(name) => match find(name) {
            Some(c) => Some(c),
            None if schema.require_censor => return Err(KowError::MissingColumn(name.clone())),
            None => None,
        },
        None if schema.require_censor => {
            return Err(KowError::MissingColumn("censor".into()));
        }
        None => None,
    };
    let outcome_col = schema.outcome.as_deref().and_then(find);
    let mapped: Vec<usize> = [Some(unit_col), Some(time_col), Some(treat_col), censor_col, outcome_col]
        .into_iter()
        .flatten()
        .collect();
    let (conf_cols, conf_names): (Vec<usize>, Vec<String>) = match &schema.confounders {
        Some(names) => names
            .iter()
            .map(|name| require(name).map(|c| (c, name.clone())))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(c, _)| !mapped.contains(c))
            .map(|(c, h)| (c, h.to_string()))
            .unzip(),
    };

    let mut rows: HashMap<String, BTreeMap<usize, Row>> = HashMap::new();
    let mut max_time = 0usize;
    for record in rdr.records() {
        let record = record?;
        let get = |c: usize| record.get(c).unwrap_or("");
        let unit = get(unit_col).to_string();
        if unit.is_empty() {
            return Err(KowError::InvalidData("empty unit id".into()));
        }
        let time: usize = get(time_col).parse().map_err(|_| {
            KowError::InvalidData(format!(
                "time `{}` for unit `{unit}` is not a positive integer",
                get(time_col)
            ))
        })?;
        if time == 0 {
            return Err(KowError::InvalidData(format!(
                "time 0 for unit `{unit}`; periods start at 1"
            )));
        }
        let censor = match censor_col {
            Some(c) => match parse_f64(get(c), "censor", &unit, time)? {
                None => 0,
                Some(v) if v == 0.0 => 0,
                Some(v) if v == 1.0 => 1,
                Some(v) => {
                    return Err(KowError::InvalidData(format!(
                        "non-binary censoring indicator `{v}` for unit `{unit}` at time {time}"
                    )))
                }
            },
            None => 0,
        };
        let treat_raw = get(treat_col);
        let treat = match parse_f64(treat_raw, "treatment", &unit, time) {
            Ok(None) => None,
            Ok(Some(v)) if v == 0.0 => Some(0),
            Ok(Some(v)) if v == 1.0 => Some(1),
            _ => {
                return Err(KowError::NonBinaryTreatment {
                    unit,
                    time,
                    value: treat_raw.to_string(),
                })
            }
        };
        let outcome = match outcome_col {
            Some(c) => parse_f64(get(c), "outcome", &unit, time)?,
            None => None,
        };
        let x = conf_cols
            .iter()
            .zip(&conf_names)
            .map(|(&c, name)| parse_f64(get(c), name, &unit, time))
            .collect::<Result<Vec<_>>>()?;
        max_time = max_time.max(time);
        let by_time = rows.entry(unit.clone()).or_default();
        if by_time.insert(time, Row { treat, censor, outcome, x }).is_some() {
            return Err(KowError::DuplicateRow { unit, time });
        }
    }
    if rows.is_empty() {
        return Err(KowError::InvalidData("no data rows".into()));
    }

    let periods = max_time;
    let p = conf_names.len();
    let mut ids: Vec<String> = rows.keys().cloned().collect();
    sort_ids(&mut ids);
    let n = ids.len();
    let mut treatment = vec![0u8; n * periods];
    let mut censored = vec![0u8; n * periods];
    let mut confounders = vec![0.0; n * periods * p];
    let outcome_len = match schema.outcome_mode {
        OutcomeMode::Final => n,
        OutcomeMode::Repeated => n * periods,
    };
    let mut outcome = vec![0.0; outcome_len];
    let mut observed = vec![false; outcome_len];

    for (i, id) in ids.iter().enumerate() {
        let by_time = &rows[id];
        let mut prev_censored = false;
        for t in 1..=periods {
            let cell = i * periods + t - 1;
            let Some(row) = by_time.get(&t) else {
                if prev_censored {
                    censored[cell] = 1;
                    continue;
                }
                return Err(KowError::InvalidData(format!(
                    "unit `{id}` has no row for time {t} before being censored"
                )));
            };
            if prev_censored && row.censor == 0 {
                return Err(KowError::NonMonotoneCensoring {
                    unit: id.clone(),
                    time: t,
                });
            }
            censored[cell] = row.censor;
            if row.censor == 0 {
                treatment[cell] = row.treat.ok_or_else(|| {
                    KowError::InvalidData(format!(
                        "missing treatment for uncensored unit `{id}` at time {t}"
                    ))
                })?;
            }
            if !prev_censored {
                for (k, v) in row.x.iter().enumerate() {
                    confounders[cell * p + k] = v.ok_or_else(|| {
                        KowError::InvalidData(format!(
                            "missing confounder `{}` for unit `{id}` at time {t}",
                            conf_names[k]
                        ))
                    })?;
                }
            }
            let slot = match schema.outcome_mode {
                OutcomeMode::Final => (t == periods).then_some(i),
                OutcomeMode::Repeated => Some(cell),
            };
            if let (Some(slot), Some(y)) = (slot, row.outcome) {
                if row.censor == 0 {
                    outcome[slot] = y;
                    observed[slot] = true;
                }
            }
            prev_censored = row.censor == 1;
        }
    }

    LongitudinalPanel::from_parts(PanelParts {
        unit_ids: ids,
        periods,
        confounder_names: conf_names,
        treatment,
        censored,
        confounders,
        outcome_mode: schema.outcome_mode,
        outcome,
        outcome_observed: observed,
    })
}

/// Write the canonical long-format CSV: one row per unit and period at risk,
/// undefined cells left empty.
pub fn write_panel<W: Write>(panel: &LongitudinalPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit", "time", "treat", "censor", "outcome"];
    header.extend(panel.confounder_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for i in 0..panel.n_units() {
        for t in 1..=panel.periods() {
            if !panel.at_risk(i, t) {
                break;
            }
            let mut record = vec![
                panel.unit_ids[i].clone(),
                t.to_string(),
                panel.treatment(i, t).map(|a| a.to_string()).unwrap_or_default(),
                u8::from(panel.is_censored(i, t)).to_string(),
                fmt_opt(panel.outcome_at(i, t)),
            ];
            let xs = panel.confounders(i, t).unwrap_or_default();
            record.extend(xs.iter().map(|x| x.to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationReport {
    /// Divisor used for the standard deviation; always the cell count.
    pub sd_convention: String,
    /// Statistics are pooled over every defined unit-period cell of a column.
    pub pooling: String,
    pub columns: Vec<ColumnScaling>,
}

/// Rescale every confounder column to mean 0 and (population) variance 1
/// over its defined cells. Constant columns become all zeros and are flagged.
pub fn standardize(panel: &LongitudinalPanel) -> (LongitudinalPanel, StandardizationReport) {
    let p = panel.n_confounders();
    let mut sum = vec![0.0; p];
    let mut count = 0usize;
    let defined = |i: usize, t: usize| panel.at_risk(i, t);
    for i in 0..panel.n_units() {
        for t in 1..=panel.periods() {
            if defined(i, t) {
                count += 1;
                for (s, x) in sum.iter_mut().zip(panel.confounders_raw(i, t)) {
                    *s += x;
                }
            }
        }
    }
    let denom = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / denom).collect();
    let mut ss = vec![0.0; p];
    for i in 0..panel.n_units() {
        for t in 1..=panel.periods() {
            if defined(i, t) {
                for ((s, x), m) in ss.iter_mut().zip(panel.confounders_raw(i, t)).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
        }
    }
    let sd: Vec<f64> = ss.iter().map(|s| (s / denom).sqrt()).collect();
    let columns: Vec<ColumnScaling> = (0..p)
        .map(|k| {
            let scale = mean[k].abs().max(1.0);
            ColumnScaling {
                name: panel.confounder_names[k].clone(),
                mean: mean[k],
                sd: sd[k],
                zero_variance: !(sd[k] > 1e-12 * scale),
            }
        })
        .collect();

    let mut out = panel.clone();
    for i in 0..panel.n_units() {
        for t in 1..=panel.periods() {
            if !defined(i, t) {
                continue;
            }
            let cell = out.cell(i, t);
            for (k, col) in columns.iter().enumerate() {
                let x = &mut out.confounders[cell * p + k];
                *x = if col.zero_variance { 0.0 } else { (*x - col.mean) / col.sd };
            }
        }
    }
    let report = StandardizationReport {
        sd_convention: "population".into(),
        pooling: "all defined unit-period cells per column".into(),
        columns,
    };
    (out, report)
}

/// Borrowed feature bundle of one unit at one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryBundle<'a> {
    pub treatments: &'a [f64],
    pub confounders: &'a [f64],
}

/// Per-unit treatment and confounder histories entering the kernel at a period.
///
/// For period `t` and lag window `l` the treatment part is
/// `A_{max(1,t-l)}, ..., A_{t-1}` (empty at `t = 1`) and the confounder part is
/// `X_1` followed by `X_{max(2,t-l+1)}, ..., X_t`. Units censored before `t`
/// carry all-zero bundles and `at_risk = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryView {
    pub period: usize,
    pub lags: usize,
    pub treat_dim: usize,
    pub conf_dim: usize,
    pub treatments: Vec<f64>,
    pub confounders: Vec<f64>,
    pub at_risk: Vec<bool>,
}

impl HistoryView {
    pub fn n_units(&self) -> usize {
        self.at_risk.len()
    }

    /// View restricted to the listed units, in the given order.
    pub fn subset(&self, units: &[usize]) -> HistoryView {
        let mut treatments = Vec::with_capacity(units.len() * self.treat_dim);
        let mut confounders = Vec::with_capacity(units.len() * self.conf_dim);
        for &i in units {
            let h = self.unit(i);
            treatments.extend_from_slice(h.treatments);
            confounders.extend_from_slice(h.confounders);
        }
        HistoryView {
            period: self.period,
            lags: self.lags,
            treat_dim: self.treat_dim,
            conf_dim: self.conf_dim,
            treatments,
            confounders,
            at_risk: units.iter().map(|&i| self.at_risk[i]).collect(),
        }
    }

    pub fn unit(&self, i: usize) -> HistoryBundle<'_> {
        HistoryBundle {
            treatments: &self.treatments[i * self.treat_dim..(i + 1) * self.treat_dim],
            confounders: &self.confounders[i * self.conf_dim..(i + 1) * self.conf_dim],
        }
    }
}

pub fn history_view(panel: &LongitudinalPanel, period: usize, lags: usize) -> Result<HistoryView> {
    panel.check_period(period)?;
    if lags == 0 {
        return Err(KowError::Config("lag window must be at least 1".into()));
    }
    let treat_periods: Vec<usize> = (period.saturating_sub(lags).max(1)..period).collect();
    let conf_periods: Vec<usize> = std::iter::once(1)
        .chain((period + 1).saturating_sub(lags).max(2)..=period)
        .collect();
    let n = panel.n_units();
    let p = panel.n_confounders();
    let treat_dim = treat_periods.len();
    let conf_dim = conf_periods.len() * p;
    let mut treatments = vec![0.0; n * treat_dim];
    let mut confounders = vec![0.0; n * conf_dim];
    let mut at_risk = vec![false; n];
    for i in 0..n {
        if !panel.at_risk(i, period) {
            continue;
        }
        at_risk[i] = true;
        for (k, &s) in treat_periods.iter().enumerate() {
            treatments[i * treat_dim + k] = panel.treatment_or_zero(i, s);
        }
        for (k, &s) in conf_periods.iter().enumerate() {
            let dst = &mut confounders[i * conf_dim + k * p..i * conf_dim + (k + 1) * p];
            dst.copy_from_slice(panel.confounders_raw(i, s));
        }
    }
    Ok(HistoryView {
        period,
        lags,
        treat_dim,
        conf_dim,
        treatments,
        confounders,
        at_risk,
    })
}
