use std::collections::HashMap;
use std::fs;
use std::path::Path;

use kow::error::Stage;
use kow::msm::{balance_diagnostics, estimate_effect, EstimateConfig};
use kow::optimal::{kow_weights, KowConfig};
use kow::panel::{load_panel, standardize, LongitudinalPanel};
use kow::sim::dgp::Coefficients;
use kow::sim::timing::{log_log_slope, write_timing_csv};
use kow::sim::{replicate, timing_study};
use kow::tuner::tune;
use kow::weights::{iptw_weights, outcome_horizons, IpwConfig, Method, WeightSet};
use kow::{Execution, KowError, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes artifacts into the output directory, each stamped with the
/// library version and the resolved configuration.
pub struct Artifacts<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
}

impl<'a> Artifacts<'a> {
    pub fn new(cfg: &'a RunConfig, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir)?;
        Ok(Self { cfg, command })
    }

    fn config_json(&self) -> Value {
        serde_json::to_value(self.cfg).expect("config serializes")
    }

    pub fn json(&self, name: &str, payload: Value) -> Result<()> {
        let mut doc = json!({
            "kow_version": VERSION,
            "command": self.command,
            "config": self.config_json(),
        });
        if let (Value::Object(dst), Value::Object(src)) = (&mut doc, payload) {
            dst.extend(src);
        }
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| KowError::InvalidData(e.to_string()))?;
        text.push('\n');
        fs::write(self.cfg.out_dir.join(name), text)?;
        Ok(())
    }

    /// CSV preceded by `#` comment lines carrying the version and config.
    pub fn csv(&self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = format!("# kow {VERSION} {}\n# config {}\n", self.command, self.config_json()).into_bytes();
        write(&mut buf)?;
        fs::write(self.cfg.out_dir.join(name), buf)?;
        Ok(())
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

/// Drop wall-clock fields so that repeated runs give identical files.
fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("timings");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn load(cfg: &RunConfig) -> Result<LongitudinalPanel> {
    let schema = cfg.panel_schema()?;
    load_panel(cfg.input()?, &schema).map_err(|e| e.at(Stage::Load))
}

fn kow_config(cfg: &RunConfig) -> Result<KowConfig> {
    Ok(KowConfig {
        kernel: cfg.kernel_spec()?,
        lambda: cfg.lambda.resolve()?,
        censoring: cfg.uses_censoring(),
        mean_one: cfg.mean_one,
        standardize: true,
        qp: cfg.qp,
    })
}

fn estimate_config(cfg: &RunConfig) -> Result<EstimateConfig> {
    Ok(EstimateConfig {
        method: cfg.method,
        design: cfg.design,
        kow: kow_config(cfg)?,
        ipw: IpwConfig {
            features: cfg.features,
            lags: cfg.lags,
        },
        normalize: cfg.mean_one,
    })
}

fn print_flags(flags: &[String]) {
    for f in flags {
        eprintln!("kow: note: {f}");
    }
}

pub fn weights(cfg: &RunConfig, exec: Execution) -> Result<()> {
    let panel = load(cfg)?;
    let out = Artifacts::new(cfg, "weights")?;
    let mut details = json!({});
    let weights = match cfg.method {
        Method::Kow => {
            let res = kow_weights(&panel, &kow_config(cfg)?, exec)?;
            details["horizons"] = to_value(&res.horizons);
            details["standardization"] = to_value(&res.standardization);
            res.weights
        }
        Method::Ols => WeightSet::uniform(&panel),
        m => {
            let ipw = IpwConfig {
                features: cfg.features,
                lags: cfg.lags,
            };
            let mut res = iptw_weights(&panel, m, &ipw).map_err(|e| e.at(Stage::Propensity))?;
            if cfg.mean_one {
                res.weights.normalize_mean_one(&panel);
            }
            details["propensity_models"] = to_value(&res.models);
            res.weights
        }
    };
    strip_timings(&mut details);
    out.csv("weights.csv", |buf| weights.write_csv(buf))?;
    details["method"] = to_value(&weights.method);
    details["lambda"] = to_value(&weights.lambda);
    details["horizon_list"] = to_value(&weights.horizons);
    details["flags"] = to_value(&weights.flags);
    out.json("weights.json", details)?;
    print_flags(&weights.flags);
    println!(
        "{} weights for {} units over {} horizon(s) written to {}",
        weights.method,
        weights.unit_ids.len(),
        weights.horizons.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn tune_command(cfg: &RunConfig, exec: Execution) -> Result<()> {
    let panel = load(cfg)?;
    let kernel = cfg.kernel_spec()?;
    let (work, report) = standardize(&panel);
    let results = outcome_horizons(&work)
        .into_iter()
        .map(|h| tune(&work, &kernel, h, exec).map_err(|e| e.at(Stage::Tune)))
        .collect::<Result<Vec<_>>>()?;
    let out = Artifacts::new(cfg, "tune")?;
    out.json("tune.json", json!({ "tuning": results, "standardization": report }))?;
    for r in &results {
        println!("horizon {}: lambda {:.6e}", r.horizon, r.lambda);
        for p in &r.periods {
            println!("  t={} scale {:.6e} lambda_t {:.6e} log-lik {:.6}", p.period, p.scale, p.lambda, p.log_likelihood);
        }
    }
    Ok(())
}

pub fn estimate(cfg: &RunConfig, exec: Execution) -> Result<()> {
    let panel = load(cfg)?;
    let est = estimate_effect(&panel, &estimate_config(cfg)?, exec)?;
    let out = Artifacts::new(cfg, "estimate")?;
    out.csv("weights.csv", |buf| est.weights.write_csv(buf))?;
    let mut kow_fits = to_value(&est.kow);
    let timings: Option<Vec<Value>> = est
        .kow
        .as_ref()
        .map(|h| h.iter().map(|f| json!({ "horizon": f.horizon, "seconds": f.timings })).collect());
    strip_timings(&mut kow_fits);
    out.json(
        "fit.json",
        json!({
            "fit": est.fit,
            "method": est.weights.method,
            "lambda": est.weights.lambda,
            "flags": est.weights.flags,
            "kow": kow_fits,
            "propensity_models": est.propensity_models,
        }),
    )?;
    out.json(
        "imbalance.json",
        json!({ "before": est.imbalance_before, "after": est.imbalance_after }),
    )?;
    if let Some(t) = timings {
        // Wall-clock times differ between runs, so they live in their own file.
        out.json("timings.json", json!({ "stages": t }))?;
    }
    print_flags(&est.weights.flags);
    print!("{}", est.fit.table());
    println!(
        "imbalance B^2: uniform {:.6e}  weighted {:.6e}",
        est.imbalance_before.b2, est.imbalance_after.b2
    );
    Ok(())
}

/// Last-horizon weights from a CSV written by the `weights` command.
fn read_weights(path: &Path, panel: &LongitudinalPanel) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let unit = col("unit").ok_or_else(|| KowError::MissingColumn("unit".into()))?;
    let weight = col("weight").ok_or_else(|| KowError::MissingColumn("weight".into()))?;
    let time = col("time");
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let t = match time {
            Some(c) => rec[c]
                .parse::<usize>()
                .map_err(|_| KowError::InvalidData(format!("bad time `{}` in weights file", &rec[c])))?,
            None => 0,
        };
        let w = rec[weight]
            .parse::<f64>()
            .map_err(|_| KowError::InvalidData(format!("bad weight `{}`", &rec[weight])))?;
        rows.push((rec[unit].to_string(), t, w));
    }
    let last = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let by_unit: HashMap<&str, f64> = rows.iter().filter(|r| r.1 == last).map(|r| (r.0.as_str(), r.2)).collect();
    panel
        .unit_ids()
        .iter()
        .map(|id| {
            by_unit
                .get(id.as_str())
                .copied()
                .ok_or_else(|| KowError::InvalidData(format!("no weight for unit `{id}`")))
        })
        .collect()
}

pub fn diagnose(cfg: &RunConfig, weights_file: Option<&Path>, exec: Execution) -> Result<()> {
    let panel = load(cfg)?;
    let kernel = cfg.kernel_spec()?;
    let (source, (before, after)) = match weights_file {
        Some(path) => {
            let w = read_weights(path, &panel)?;
            if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                return Err(KowError::NegativeWeight { index: i, value: v });
            }
            (path.display().to_string(), balance_diagnostics(&panel, &w, &kernel, exec)?)
        }
        None => {
            let est = estimate_effect(&panel, &estimate_config(cfg)?, exec)?;
            let last = est.weights.last().to_vec();
            (cfg.method.to_string(), balance_diagnostics(&panel, &last, &kernel, exec)?)
        }
    };
    let out = Artifacts::new(cfg, "diagnose")?;
    out.json(
        "imbalance.json",
        json!({ "weights": source, "kernel": kernel.to_string(), "before": before, "after": after }),
    )?;
    println!("{:>6} {:>4} {:>14} {:>14}", "period", "arm", "uniform", "weighted");
    for (b, a) in before.terms.iter().zip(&after.terms) {
        println!("{:>6} {:>4} {:>14.6e} {:>14.6e}", b.period, b.arm, b.delta, a.delta);
    }
    println!("{:>11} {:>14.6e} {:>14.6e}", "B^2", before.b2, after.b2);
    Ok(())
}

pub fn simulate(cfg: &RunConfig, exec: Execution) -> Result<()> {
    let study = cfg.study()?;
    let result = replicate(&study, exec)?;
    let out = Artifacts::new(cfg, "simulate")?;
    out.csv("summary.csv", |buf| result.write_summary_csv(buf))?;
    if cfg.simulate.records {
        out.csv("records.csv", |buf| result.write_records_csv(buf))?;
    }
    let coefficients = Coefficients::for_scenario(study.scenario);
    out.json(
        "summary.json",
        json!({
            "truth": result.truth,
            "noise": {
                "variance": coefficients.noise_variance,
                "note": "outcome noise N(0, 5) is read as variance 5 (standard deviation sqrt 5)",
            },
            "coefficients": coefficients,
            "study": result.config,
            "summaries": result.summaries,
        }),
    )?;
    println!(
        "{:<20} {:>6} {:>10} {:>10} {:>10} {:>10} {:>5}",
        "method", "n", "lambda", "bias", "mse", "var", "fail"
    );
    for s in &result.summaries {
        println!(
            "{:<20} {:>6} {:>10} {:>10.4} {:>10.4} {:>10.4} {:>5}",
            s.method,
            s.n,
            s.lambda.map_or_else(|| "-".into(), |l| format!("{l:.3e}")),
            s.bias,
            s.mse,
            s.variance,
            s.failures
        );
    }
    Ok(())
}

pub fn timing(cfg: &RunConfig) -> Result<()> {
    let tcfg = cfg.timing_config()?;
    let rows = timing_study(&tcfg)?;
    let out = Artifacts::new(cfg, "timing")?;
    out.csv("timing.csv", |buf| write_timing_csv(&rows, buf))?;
    let by_t: Vec<_> = rows.iter().filter(|r| r.sweep == "periods").collect();
    let t: Vec<f64> = by_t.iter().map(|r| r.periods as f64).collect();
    let cost: Vec<f64> = by_t.iter().map(|r| r.assemble + r.solve).collect();
    let slope = (t.len() >= 2).then(|| log_log_slope(&t, &cost));
    out.json("timing.json", json!({ "rows": rows, "assembly_solve_slope_in_periods": slope }))?;
    println!(
        "{:<12} {:>3} {:>3} {:>11} {:>11} {:>11} {:>11}",
        "sweep", "T", "p", "tune", "gram", "assemble", "solve"
    );
    for r in &rows {
        println!(
            "{:<12} {:>3} {:>3} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            r.sweep, r.periods, r.confounders, r.tune, r.gram, r.assemble, r.solve
        );
    }
    if let Some(s) = slope {
        println!("log-log slope of assembly+solve time in T: {s:.3}");
    }
    Ok(())
}
