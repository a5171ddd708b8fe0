//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model-file error,
//! 3 numerical failure. `HORSERULE_THREADS` sets the worker thread count.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_csv, ColumnKind, YTransform};
use crate::dss::{dss_path, dss_summarize, write_dss, write_dss_path, PATH_LENGTH, PATH_MIN_RATIO};
use crate::error::{usage, Error, Result};
use crate::experiments::{cross_validate, rmse, simulate, simulation_fit_config, CvCandidate, Scenario, SimulationSettings};
use crate::inference::{
    predict, rule_importance, ruleheat_export, variable_importance, write_importance, write_predictions,
    write_variable_importance, PredictOptions,
};
use crate::model::{fit, FitConfig, FittedModel, LinearTerms};
use crate::model_file::{read_model, write_model};
use crate::sampler::{BetaMethod, GibbsSettings};
use crate::trees::TreeGenConfig;

pub const THREADS_ENV: &str = "HORSERULE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "horserule", version, about = "Rule ensembles with a rule-structured horseshoe prior")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write it to a model file.
    Fit(FitCmd),
    /// Posterior mean predictions, optionally with intervals.
    Predict(PredictCmd),
    /// Posterior rule importance, or variable importance with --variables.
    Importance(ImportanceCmd),
    /// Rule activation matrix of the most important rules.
    Ruleheat(RuleheatCmd),
    /// Sparse summary of the posterior mean fit.
    Dss(DssCmd),
    /// K-fold cross-validation over one or more configurations.
    Cv(CvCmd),
    /// Simulation study with a known linear signal.
    Simulate(SimulateCmd),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Response column.
    #[arg(long)]
    target: String,
    /// Treat these columns as categorical (comma-separated).
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<crate::data::Dataset> {
        let overrides: HashMap<String, ColumnKind> =
            self.categorical.iter().map(|c| (c.clone(), ColumnKind::Categorical)).collect();
        load_csv(&self.data, &self.target, &overrides)
    }
}

#[derive(Debug, Args, Clone)]
struct ModelArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 1000)]
    ntree: usize,
    /// Mean number of terminal nodes per tree.
    #[arg(long = "L", default_value_t = 5.0)]
    mean_size: f64,
    /// Minimum rows per node [default: ceil(N^(1/3))].
    #[arg(long)]
    nmin: Option<usize>,
    /// Fraction of random-forest trees; the rest are boosted.
    #[arg(long, default_value_t = 0.3)]
    mix: f64,
    /// Prior exponent on rule support.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Prior exponent on rule length.
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Linear terms: all, none, or a comma-separated column list.
    #[arg(long, default_value = "all")]
    linear: String,
    /// Leave linear terms unshrunk (flat prior).
    #[arg(long)]
    unshrunk_linear: bool,
    /// Prior scale of shrunk linear terms.
    #[arg(long, default_value_t = 1.0)]
    linear_scale: f64,
    /// Keep at most this many rules.
    #[arg(long)]
    max_rules: Option<usize>,
    /// Response transform: none or log.
    #[arg(long, default_value = "none")]
    ytransform: String,
    #[arg(long, default_value_t = 1000)]
    niter: usize,
    #[arg(long, default_value_t = 100)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Coefficient draw: auto, cholesky or lowrank.
    #[arg(long, default_value = "auto")]
    beta_method: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self) -> Result<FitConfig> {
        let cfg = FitConfig {
            trees: TreeGenConfig {
                ntree: self.ntree,
                mean_size: self.mean_size,
                n_min: self.nmin,
                mix: self.mix,
                ..TreeGenConfig::default()
            },
            mu: self.mu,
            eta: self.eta,
            linear_scale: self.linear_scale,
            unshrunk_linear: self.unshrunk_linear,
            linear: self.linear.parse::<LinearTerms>()?,
            y_transform: self.ytransform.parse::<YTransform>()?,
            gibbs: GibbsSettings {
                niter: self.niter,
                burnin: self.burnin,
                thin: self.thin,
                seed: self.seed,
                method: self.beta_method.parse::<BetaMethod>().map_err(|e| usage(format!("--beta-method: {e}")))?,
            },
            max_rules: self.max_rules,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct FitCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictCmd {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the training columns; the response column is optional.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Central interval coverage, e.g. 0.9.
    #[arg(long)]
    interval: Option<f64>,
    /// Include residual noise in the interval.
    #[arg(long)]
    noise: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ImportanceCmd {
    #[arg(long)]
    model: PathBuf,
    /// Number of rows to keep.
    #[arg(long)]
    top: Option<usize>,
    /// Per-covariate importance instead of per-term.
    #[arg(long)]
    variables: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RuleheatCmd {
    #[arg(long)]
    model: PathBuf,
    /// CSV including the response column.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the column legend (R1: rule text) here.
    #[arg(long)]
    legend: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DssCmd {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the training columns.
    #[arg(long)]
    data: PathBuf,
    /// Penalty; without it the whole path is written.
    #[arg(long, conflicts_with = "path_length")]
    lambda: Option<f64>,
    /// Number of penalties on the path.
    #[arg(long)]
    path_length: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CvCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Extra configuration as overrides of the base flags, e.g.
    /// "mu=0,eta=0" or "ntree=500"; repeat for a grid. Keys: ntree, L,
    /// nmin, mix, mu, eta, linear (all|none), max_rules.
    #[arg(long)]
    grid: Vec<String>,
    /// Add least squares on all covariates as a baseline.
    #[arg(long)]
    ols: bool,
    /// Per-fold table [default: not written].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    #[arg(long, default_value = "linear")]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Fresh test rows per replicate.
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 200)]
    ntree: usize,
    #[arg(long, default_value_t = 500)]
    max_rules: usize,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value = "all")]
    linear: String,
    #[arg(long, default_value_t = 1000)]
    niter: usize,
    #[arg(long, default_value_t = 100)]
    burnin: usize,
    /// Per-replicate table [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn encode(model: &FittedModel, path: &Path) -> Result<(faer::Mat<f64>, Option<Vec<f64>>)> {
    model.schema.encode_csv(path, Some(&model.target))
}

fn cmd_fit(c: &FitCmd) -> Result<()> {
    let cfg = c.model.config()?;
    let data = c.data.load()?;
    let model = fit(&data, &cfg)?;
    write_model(&model, &c.out)?;
    let pred = predict(&model, data.x.as_ref(), &PredictOptions::default())?;
    let n_linear = model.columns.len() - model.rules.len();
    println!("rows            {}", model.n_train);
    println!("rules           {} ({} before deduplication)", model.rules.len(), model.n_raw_rules);
    println!("linear terms    {n_linear}");
    println!("columns kept    {}", model.n_columns());
    println!("draws           {}", model.draws.n_draws());
    println!("train RMSE      {:.6}", rmse(&pred.mean, &data.y));
    println!("model written   {}", c.out.display());
    Ok(())
}

fn cmd_predict(c: &PredictCmd) -> Result<()> {
    let model = read_model(&c.model)?;
    let (x, _) = encode(&model, &c.data)?;
    let opts = PredictOptions {
        interval: c.interval,
        noise: c.noise,
        seed: c.seed,
    };
    let pred = predict(&model, x.as_ref(), &opts)?;
    write_predictions(&pred, output(&c.out)?)
}

fn cmd_importance(c: &ImportanceCmd) -> Result<()> {
    let model = read_model(&c.model)?;
    let out = output(&c.out)?;
    if c.variables {
        let vi = variable_importance(&model);
        let rows = vi.ranked();
        let k = c.top.unwrap_or(rows.len()).min(rows.len());
        write_variable_importance(&rows[..k], out)
    } else {
        let imp = rule_importance(&model);
        let rows = imp.ranked();
        let k = c.top.unwrap_or(rows.len()).min(rows.len());
        write_importance(&rows[..k], out)
    }
}

fn cmd_ruleheat(c: &RuleheatCmd) -> Result<()> {
    let model = read_model(&c.model)?;
    let (x, y) = encode(&model, &c.data)?;
    let y = y.ok_or_else(|| Error::Schema(format!("response column {:?} missing from {}", model.target, c.data.display())))?;
    let heat = ruleheat_export(&model, x.as_ref(), &y, c.top)?;
    heat.write_csv(output(&c.out)?)?;
    if let Some(p) = &c.legend {
        fs::write(p, heat.legend()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_dss(c: &DssCmd) -> Result<()> {
    let model = read_model(&c.model)?;
    let (x, _) = encode(&model, &c.data)?;
    let z = model.design(x.as_ref())?;
    match c.lambda {
        Some(lambda) => {
            let s = dss_summarize(&model, z.as_ref(), lambda)?;
            let imp = rule_importance(&model);
            eprintln!("lambda {lambda}: {} nonzero of {}", s.nonzero_count, model.n_columns());
            write_dss(&model, &imp, &s, output(&c.out)?)
        }
        None => {
            let path = dss_path(&model, z.as_ref(), c.path_length.unwrap_or(PATH_LENGTH), PATH_MIN_RATIO)?;
            write_dss_path(&path, output(&c.out)?)
        }
    }
}

/// Applies `key=value` overrides from a `--grid` entry.
fn apply_overrides(base: &FitConfig, spec: &str) -> Result<FitConfig> {
    let mut cfg = base.clone();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("--grid: expected key=value, got {part:?}")))?;
        let bad = || usage(format!("--grid: bad value for {key}: {value:?}"));
        match key.trim() {
            "ntree" => cfg.trees.ntree = value.parse().map_err(|_| bad())?,
            "L" => cfg.trees.mean_size = value.parse().map_err(|_| bad())?,
            "nmin" => cfg.trees.n_min = Some(value.parse().map_err(|_| bad())?),
            "mix" => cfg.trees.mix = value.parse().map_err(|_| bad())?,
            "mu" => cfg.mu = value.parse().map_err(|_| bad())?,
            "eta" => cfg.eta = value.parse().map_err(|_| bad())?,
            "max_rules" => cfg.max_rules = Some(value.parse().map_err(|_| bad())?),
            "linear" => cfg.linear = value.parse()?,
            other => return Err(usage(format!("--grid: unknown key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_cv(c: &CvCmd) -> Result<()> {
    let base = c.model.config()?;
    let data = c.data.load()?;
    let mut candidates = vec![CvCandidate::horserule("base", base.clone())];
    for g in &c.grid {
        candidates.push(CvCandidate::horserule(g.clone(), apply_overrides(&base, g)?));
    }
    if c.ols {
        candidates.push(CvCandidate::ols());
    }
    let report = cross_validate(&data, &candidates, c.folds, c.repeats, c.model.seed)?;
    if c.out.is_some() {
        report.write_folds(output(&c.out)?)?;
    }
    report.write_summary(std::io::stdout().lock())
}

fn cmd_simulate(c: &SimulateCmd) -> Result<()> {
    let mut fit = simulation_fit_config();
    fit.trees.ntree = c.ntree;
    fit.max_rules = Some(c.max_rules);
    fit.mu = c.mu;
    fit.eta = c.eta;
    fit.linear = c.linear.parse()?;
    fit.gibbs.niter = c.niter;
    fit.gibbs.burnin = c.burnin;
    let s = SimulationSettings {
        scenario: c.scenario.parse::<Scenario>()?,
        n: c.n,
        p: c.p,
        reps: c.reps,
        seed: c.seed,
        noise_sd: c.noise_sd,
        n_test: c.n_test,
        fit,
    };
    let report = simulate(&s)?;
    report.write_csv(output(&c.out)?)?;
    eprintln!(
        "mean over {} replicates: RMSE to truth {:.4}, RMSE to test responses {:.4}, delta beta true {:.4}, delta beta noise {:.4}",
        report.replicates.len(),
        report.mean_rmse_truth(),
        report.mean_rmse_noisy(),
        report.mean_delta_true(),
        report.mean_delta_noise()
    );
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(usage(format!("{THREADS_ENV} must be a positive integer, got 0")));
        }
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Importance(c) => cmd_importance(c),
        Command::Ruleheat(c) => cmd_ruleheat(c),
        Command::Dss(c) => cmd_dss(c),
        Command::Cv(c) => cmd_cv(c),
        Command::Simulate(c) => cmd_simulate(c),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("horserule").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn fit_defaults_match_documented_values() {
        let cli = parse(&["fit", "--data", "d.csv", "--target", "y", "--out", "m.hr"]);
        let Command::Fit(c) = cli.command else { panic!() };
        let cfg = c.model.config().unwrap();
        assert_eq!(cfg.trees.ntree, 1000);
        assert_eq!(cfg.trees.mean_size, 5.0);
        assert_eq!(cfg.trees.mix, 0.3);
        assert_eq!(cfg.trees.n_min, None);
        assert_eq!((cfg.mu, cfg.eta), (1.0, 2.0));
        assert_eq!(cfg.linear, LinearTerms::All);
        assert_eq!((cfg.gibbs.niter, cfg.gibbs.burnin, cfg.gibbs.thin), (1000, 100, 1));
    }

    #[test]
    fn burnin_not_below_niter_is_rejected_naming_the_flags() {
        let cli = parse(&["fit", "--data", "d", "--target", "y", "--out", "m", "--niter", "50", "--burnin", "100"]);
        let Command::Fit(c) = cli.command else { panic!() };
        let err = c.model.config().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let msg = err.to_string();
        assert!(msg.contains("burnin ≥ niter") && msg.contains("--burnin"), "{msg}");
    }

    #[test]
    fn mix_zero_passes_through() {
        let cli = parse(&["fit", "--data", "d", "--target", "y", "--out", "m", "--mix", "0", "--ntree", "100"]);
        let Command::Fit(c) = cli.command else { panic!() };
        let cfg = c.model.config().unwrap();
        assert_eq!(cfg.trees.mix, 0.0);
        assert_eq!(cfg.trees.n_rf_trees(), 0);
    }

    #[test]
    fn grid_overrides() {
        let base = FitConfig::default();
        let g = apply_overrides(&base, "mu=0, eta=0,ntree=500,linear=none").unwrap();
        assert_eq!((g.mu, g.eta, g.trees.ntree), (0.0, 0.0, 500));
        assert_eq!(g.linear, LinearTerms::None);
        assert!(apply_overrides(&base, "alpha=1").is_err());
        assert!(apply_overrides(&base, "mu").is_err());
        assert_eq!(apply_overrides(&base, "mu=x").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["horserule", "fit", "--bogus"]), 1);
        assert_eq!(run(["horserule", "frobnicate"]), 1);
        assert_eq!(run(["horserule", "--help"]), 0);
    }

    #[test]
    fn unknown_scenario_exits_one() {
        assert_eq!(run(["horserule", "simulate", "--scenario", "friedman", "--reps", "1"]), 1);
    }
}
