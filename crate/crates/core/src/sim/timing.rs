//! Wall-clock scaling of the KOW stages in the number of periods and
//! confounders.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dgp::{draw, DgpSpec, Scenario};
use crate::error::{KowError, Result};
use crate::exec::Execution;
use crate::kernels::KernelSpec;
use crate::optimal::{kow_horizon, KowConfig, StageTimings};
use crate::panel::standardize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub n: usize,
    pub period_grid: Vec<usize>,
    /// Confounders used with `period_grid`.
    pub base_confounders: usize,
    pub confounder_grid: Vec<usize>,
    /// Periods used with `confounder_grid`.
    pub base_periods: usize,
    pub repeats: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            n: 100,
            period_grid: (3..=10).collect(),
            base_confounders: 3,
            confounder_grid: (3..=8).collect(),
            base_periods: 5,
            repeats: 10,
            kernel: KernelSpec::poly(2).with_lags(1),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// `periods` or `confounders`: which grid the row belongs to.
    pub sweep: String,
    pub periods: usize,
    pub confounders: usize,
    pub repeats: usize,
    /// Median seconds per stage.
    pub tune: f64,
    pub gram: f64,
    pub assemble: f64,
    pub solve: f64,
}

impl TimingRow {
    /// Matrix computation: grams plus problem assembly.
    pub fn matrices(&self) -> f64 {
        self.gram + self.assemble
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn measure(cfg: &TimingConfig, sweep: &str, periods: usize, confounders: usize) -> Result<TimingRow> {
    let mut spec = DgpSpec::new(Scenario::Linear, cfg.n, cfg.seed);
    spec.periods = periods;
    spec.confounders = confounders;
    let kow = KowConfig {
        kernel: cfg.kernel,
        ..KowConfig::default()
    };
    let mut runs: Vec<StageTimings> = Vec::with_capacity(cfg.repeats);
    for rep in 0..cfg.repeats {
        let data = draw(&spec.clone().with_stream(rep as u64))?;
        let (panel, _) = standardize(&data.panel);
        let (_, fit) = kow_horizon(&panel, &kow, periods, Execution::Sequential)?;
        runs.push(fit.timings);
    }
    let col = |f: fn(&StageTimings) -> f64| median(&mut runs.iter().map(f).collect::<Vec<_>>());
    Ok(TimingRow {
        sweep: sweep.to_string(),
        periods,
        confounders,
        repeats: cfg.repeats,
        tune: col(|t| t.tune),
        gram: col(|t| t.gram),
        assemble: col(|t| t.assemble),
        solve: col(|t| t.solve),
    })
}

/// Median stage timings over the period grid, then the confounder grid.
pub fn timing_study(cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    if cfg.repeats == 0 {
        return Err(KowError::Config("timing study needs at least one repeat".into()));
    }
    let mut rows = Vec::new();
    for &t in &cfg.period_grid {
        rows.push(measure(cfg, "periods", t, cfg.base_confounders)?);
    }
    for &p in &cfg.confounder_grid {
        rows.push(measure(cfg, "confounders", cfg.base_periods, p)?);
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["sweep", "periods", "confounders", "repeats", "tune", "gram", "assemble", "solve"])?;
    for r in rows {
        out.write_record([
            r.sweep.clone(),
            r.periods.to_string(),
            r.confounders.to_string(),
            r.repeats.to_string(),
            r.tune.to_string(),
            r.gram.to_string(),
            r.assemble.to_string(),
            r.solve.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x = [3.0, 4.0, 6.0, 10.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 2.0 * v.powf(1.3)).collect();
        assert!((log_log_slope(&x, &y) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
