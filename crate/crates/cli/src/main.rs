mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kow::exec::with_jobs;
use kow::{ErrorClass, Execution, KowError};

use config::{parse_lambda_grid, read_toml, KernelChoice, LambdaChoice, RunConfig};

/// Kernel optimal weighting for marginal structural models.
#[derive(Parser, Debug)]
#[command(name = "kow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args, Debug)]
struct Opts {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Long-format panel CSV.
    #[arg(long, global = true, value_name = "CSV")]
    input: Option<PathBuf>,
    /// TOML column mapping (unit, time, treatment, censor, outcome, confounders).
    #[arg(long, global = true, value_name = "FILE")]
    schema: Option<PathBuf>,
    /// Comma-separated confounder columns; an empty string maps none.
    #[arg(long, global = true, value_name = "COLS")]
    confounders: Option<String>,
    /// linear, poly:D or gaussian:GAMMA, optionally followed by @LAGS.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// History window used by kernels and propensity models.
    #[arg(long, global = true)]
    lags: Option<usize>,
    /// `auto` (marginal likelihood) or a fixed penalty that bypasses tuning.
    #[arg(long, global = true, alias = "lambda-override")]
    lambda: Option<String>,
    /// kow, iptw, siptw, iptcw, siptcw or ols.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Propensity covariate map: linear or nonlinear.
    #[arg(long, global = true)]
    features: Option<String>,
    /// MSM design: cumulative or per-period.
    #[arg(long, global = true)]
    design: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    censoring: Option<bool>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    repeated_outcomes: Option<bool>,
    /// Constrain (KOW) or rescale (baselines) weights to mean one.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    mean_one: Option<bool>,
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    qp_tol: Option<f64>,
    #[arg(long, global = true)]
    qp_max_iter: Option<usize>,
    /// Worker threads; without it only `simulate` runs in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Validate and print the resolved configuration without running.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute balancing weights and write weights.csv.
    Weights,
    /// Tune kernel scales and the penalty by marginal likelihood.
    Tune,
    /// Weights, weighted MSM fit and imbalance report.
    Estimate,
    /// Imbalance of uniform and fitted (or supplied) weights.
    Diagnose {
        /// Weights CSV produced by `kow weights` instead of fitting.
        #[arg(long, value_name = "CSV")]
        weights: Option<PathBuf>,
    },
    /// Monte Carlo replication study on the synthetic designs.
    Simulate(SimulateArgs),
    /// Per-stage runtime over grids of periods and confounders.
    Timing(TimingArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// linear, nonlinear or linear-censored.
    #[arg(long)]
    scenario: Option<String>,
    /// correct, overspecified or misspecified.
    #[arg(long)]
    spec: Option<String>,
    /// Sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Methods such as KOW-K1, IPTW-linear, sIPTW-nonlinear, OLS.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Fixed KOW penalties `a,b,c` or `geom:LO:HI:POINTS` (zero prepended).
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    n_confounders: Option<usize>,
    /// Also write per-replication estimates to records.csv.
    #[arg(long)]
    records: bool,
}

#[derive(Args, Debug)]
struct TimingArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    periods_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    confounders_grid: Option<Vec<usize>>,
}

fn parse<T: std::str::FromStr<Err = KowError>>(v: &Option<String>) -> Result<Option<T>, KowError> {
    v.as_deref().map(str::parse).transpose()
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, KowError> {
    let o = &cli.opts;
    let mut cfg: RunConfig = match &o.config {
        Some(path) => read_toml(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &o.schema {
        cfg.schema = read_toml(path)?;
    }
    if let Some(cols) = &o.confounders {
        cfg.schema.confounders = Some(cols.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect());
    }
    if o.input.is_some() {
        cfg.input = o.input.clone();
    }
    set(&mut cfg.kernel, o.kernel.clone().map(KernelChoice::Short));
    if o.lags.is_some() {
        cfg.lags = o.lags;
    }
    set(&mut cfg.lambda, o.lambda.as_deref().map(LambdaChoice::parse).transpose()?);
    set(&mut cfg.method, parse(&o.method)?);
    set(&mut cfg.features, parse(&o.features)?);
    set(&mut cfg.design, parse(&o.design)?);
    set(&mut cfg.censoring, o.censoring);
    set(&mut cfg.repeated_outcomes, o.repeated_outcomes);
    set(&mut cfg.mean_one, o.mean_one);
    set(&mut cfg.out_dir, o.out_dir.clone());
    set(&mut cfg.seed, o.seed);
    set(&mut cfg.qp.tol, o.qp_tol);
    if o.qp_max_iter.is_some() {
        cfg.qp.max_iter = o.qp_max_iter;
    }
    if o.jobs.is_some() {
        cfg.jobs = o.jobs;
    }
    match &cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            set(&mut s.scenario, parse(&a.scenario)?);
            set(&mut s.specification, parse(&a.spec)?);
            set(&mut s.n, a.n.clone());
            set(&mut s.reps, a.reps);
            set(&mut s.methods, a.methods.clone());
            if let Some(g) = &a.lambda_grid {
                s.lambda_grid = Some(parse_lambda_grid(g)?);
            }
            set(&mut s.periods, a.periods);
            set(&mut s.confounders, a.n_confounders);
            s.records |= a.records;
        }
        Command::Timing(a) => {
            let t = &mut cfg.timing;
            set(&mut t.n, a.n);
            set(&mut t.repeats, a.repeats);
            set(&mut t.periods, a.periods_grid.clone());
            set(&mut t.confounders, a.confounders_grid.clone());
        }
        _ => {}
    }
    cfg.validate()?;
    match &cli.command {
        Command::Simulate(_) => {
            cfg.study()?;
        }
        Command::Timing(_) => {
            cfg.timing_config()?;
        }
        _ => {
            cfg.input()?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), KowError> {
    let cfg = resolve(&cli)?;
    if cli.opts.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let simulate = matches!(cli.command, Command::Simulate(_));
    let exec = if simulate || cfg.jobs.is_some() { Execution::default() } else { Execution::Sequential };
    with_jobs(cfg.jobs, || match &cli.command {
        Command::Weights => commands::weights(&cfg, exec),
        Command::Tune => commands::tune_command(&cfg, exec),
        Command::Estimate => commands::estimate(&cfg, exec),
        Command::Diagnose { weights } => commands::diagnose(&cfg, weights.as_deref(), exec),
        Command::Simulate(_) => commands::simulate(&cfg, exec),
        Command::Timing(_) => commands::timing(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.class() {
                ErrorClass::Config => {
                    eprintln!("kow: configuration error: {e}");
                    1
                }
                ErrorClass::Data => {
                    eprintln!("kow: data error: {e}");
                    2
                }
                ErrorClass::Numerical => {
                    let stage = e.stage().map_or_else(|| "unknown".to_string(), |s| s.to_string());
                    eprintln!("kow: numerical failure in stage `{stage}`: {e}");
                    3
                }
            };
            ExitCode::from(code)
        }
    }
}
