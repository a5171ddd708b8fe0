//! Cross-validation and simulation studies.
//!
//! Every fit runs as an independent task with a seed derived from the master
//! seed and the task's position, so results are the same for any thread count
//! and the output order is fixed.

use std::io::Write;

use faer::linalg::solvers::Llt;
use faer::{Mat, MatRef, Side};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{kfold, select_rows, standardize, Dataset, YTransform};
use crate::design::ColumnRole;
use crate::error::{usage, Error, Result};
use crate::inference::{predict, PredictOptions};
use crate::model::{fit, FitConfig, LinearTerms};
use crate::rng::{derive_seed, stream};

const STREAM_FOLDS: u64 = 101;
const STREAM_FOLD_FITS: u64 = 102;
const STREAM_SIM_DATA: u64 = 201;
const STREAM_SIM_FITS: u64 = 202;

/// A model evaluated by cross-validation.
#[derive(Debug, Clone)]
pub enum CvModel {
    HorseRule(FitConfig),
    /// Least squares on all encoded covariates.
    Ols,
}

#[derive(Debug, Clone)]
pub struct CvCandidate {
    pub label: String,
    pub model: CvModel,
}

impl CvCandidate {
    pub fn horserule(label: impl Into<String>, cfg: FitConfig) -> Self {
        CvCandidate {
            label: label.into(),
            model: CvModel::HorseRule(cfg),
        }
    }

    pub fn ols() -> Self {
        CvCandidate {
            label: "ols".into(),
            model: CvModel::Ols,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub candidate: usize,
    pub repeat: usize,
    pub fold: usize,
    pub rmse: f64,
    /// RMSE over the best candidate's RMSE on the same fold.
    pub rrmse: f64,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub labels: Vec<String>,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    fn of(&self, candidate: usize) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(move |f| f.candidate == candidate)
    }

    pub fn mean_rmse(&self, candidate: usize) -> f64 {
        mean(self.of(candidate).map(|f| f.rmse))
    }

    pub fn mean_rrmse(&self, candidate: usize) -> f64 {
        mean(self.of(candidate).map(|f| f.rrmse))
    }

    /// Header `model,repeat,fold,rmse,rrmse`.
    pub fn write_folds<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "repeat", "fold", "rmse", "rrmse"])?;
        for f in &self.folds {
            w.write_record([
                self.labels[f.candidate].clone(),
                f.repeat.to_string(),
                f.fold.to_string(),
                f.rmse.to_string(),
                f.rrmse.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }

    /// Header `model,mean_rmse,mean_rrmse`.
    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "mean_rmse", "mean_rrmse"])?;
        for (c, label) in self.labels.iter().enumerate() {
            w.write_record([label.clone(), self.mean_rmse(c).to_string(), self.mean_rrmse(c).to_string()])?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (ss / pred.len() as f64).sqrt()
}

/// Least-squares fit on standardized covariates with a tiny ridge, which
/// keeps one-hot groups and duplicated columns solvable.
#[derive(Debug, Clone)]
pub struct OlsFit {
    scaling: crate::data::ScalingInfo,
    coef: Vec<f64>,
}

pub fn fit_ols(x: MatRef<'_, f64>, y: &[f64]) -> Result<OlsFit> {
    let st = standardize(x, y, YTransform::None)?;
    let (n, p) = (st.xs.nrows(), st.xs.ncols());
    let ridge = 1e-8 * n as f64;
    let mut g = Mat::<f64>::zeros(p, p);
    faer::linalg::matmul::matmul(
        g.as_mut(),
        faer::Accum::Replace,
        st.xs.transpose(),
        st.xs.as_ref(),
        1.0,
        faer::Par::Seq,
    );
    for j in 0..p {
        g[(j, j)] += ridge;
    }
    let xty = Mat::from_fn(p, 1, |j, _| (0..n).map(|i| st.xs[(i, j)] * st.ys[i]).sum::<f64>());
    let llt = Llt::new(g.as_ref(), Side::Lower).map_err(|_| Error::Numeric("least-squares system is singular".into()))?;
    let coef = faer::linalg::solvers::Solve::solve(&llt, xty.as_ref());
    Ok(OlsFit {
        scaling: st.scaling,
        coef: (0..p).map(|j| coef[(j, 0)]).collect(),
    })
}

impl OlsFit {
    pub fn predict(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        let xs = self.scaling.scale_x(x);
        (0..xs.nrows())
            .map(|i| {
                let v: f64 = (0..xs.ncols()).map(|j| xs[(i, j)] * self.coef[j]).sum();
                self.scaling.unscale_y(v)
            })
            .collect()
    }
}

fn fit_and_score(data: &Dataset, train: &[usize], test: &[usize], model: &CvModel, seed: u64) -> Result<f64> {
    let y_test: Vec<f64> = test.iter().map(|&i| data.y[i]).collect();
    let x_test = select_rows(data.x.as_ref(), test);
    let pred = match model {
        CvModel::HorseRule(cfg) => {
            let fitted = fit(&data.subset(train), &cfg.with_seed(seed))?;
            predict(&fitted, x_test.as_ref(), &PredictOptions::default())?.mean
        }
        CvModel::Ols => {
            let x_train = select_rows(data.x.as_ref(), train);
            let y_train: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
            fit_ols(x_train.as_ref(), &y_train)?.predict(x_test.as_ref())
        }
    };
    Ok(rmse(&pred, &y_test))
}

/// `repeats` rounds of `k`-fold cross-validation. All candidates see the same
/// folds and, fold by fold, the same fit seed.
pub fn cross_validate(data: &Dataset, candidates: &[CvCandidate], k: usize, repeats: usize, seed: u64) -> Result<CvReport> {
    if k < 2 {
        return Err(usage(format!("--folds must be at least 2, got {k}")));
    }
    if repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(usage("cross-validation needs at least one model"));
    }
    for c in candidates {
        if let CvModel::HorseRule(cfg) = &c.model {
            cfg.validate()?;
        }
    }
    let n = data.n_rows();
    let partitions: Vec<_> = (0..repeats)
        .map(|r| kfold(n, k, derive_seed(seed, STREAM_FOLDS + 1000 * r as u64)))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize, usize)> = (0..repeats)
        .flat_map(|r| (0..k).flat_map(move |f| (0..candidates.len()).map(move |c| (r, f, c))))
        .collect();
    let scores: Vec<f64> = tasks
        .par_iter()
        .map(|&(r, f, c)| {
            let fold = &partitions[r][f];
            let fit_seed = derive_seed(derive_seed(seed, STREAM_FOLD_FITS + 1000 * r as u64), f as u64);
            log::info!("cv: repeat {r} fold {f} model {}", candidates[c].label);
            fit_and_score(data, &fold.train, &fold.test, &candidates[c].model, fit_seed)
        })
        .collect::<Result<_>>()?;

    let m = candidates.len();
    let mut folds = Vec::with_capacity(tasks.len());
    for (chunk_idx, chunk) in scores.chunks(m).enumerate() {
        let best = chunk.iter().cloned().fold(f64::INFINITY, f64::min);
        let (r, f) = (chunk_idx / k, chunk_idx % k);
        for (c, &v) in chunk.iter().enumerate() {
            folds.push(FoldResult {
                candidate: c,
                repeat: r,
                fold: f,
                rmse: v,
                rrmse: v / best,
            });
        }
    }
    folds.sort_by_key(|f| (f.candidate, f.repeat, f.fold));
    Ok(CvReport {
        labels: candidates.iter().map(|c| c.label.clone()).collect(),
        folds,
    })
}

/// Data-generating designs for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `y = 5x₁ + 3x₂ + x₃ + x₄ + x₅ + ε`, all covariates iid `N(0, 1)`.
    Linear,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scenario::Linear),
            other => Err(usage(format!("unknown scenario {other:?} (expected linear)"))),
        }
    }
}

pub const LINEAR_SIGNAL: [f64; 5] = [5.0, 3.0, 1.0, 1.0, 1.0];

#[derive(Debug, Clone)]
pub struct SimulationSettings {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub noise_sd: f64,
    /// Size of the fresh test sample per replicate.
    pub n_test: usize,
    pub fit: FitConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            scenario: Scenario::Linear,
            n: 1000,
            p: 100,
            reps: 20,
            seed: 1,
            noise_sd: 1.0,
            n_test: 1000,
            fit: simulation_fit_config(),
        }
    }
}

/// Default fit for simulation studies: about 500 rules on top of the linear
/// terms.
pub fn simulation_fit_config() -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.trees.ntree = 200;
    cfg.max_rules = Some(500);
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub rep: usize,
    /// Fitted mean against the true mean on the test sample.
    pub rmse_truth: f64,
    /// Fitted mean against noisy test responses.
    pub rmse_noisy: f64,
    pub delta_true: f64,
    pub delta_noise: f64,
    pub n_rules: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub replicates: Vec<ReplicateResult>,
}

impl SimulationReport {
    pub fn mean_rmse_truth(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.rmse_truth))
    }
    pub fn mean_rmse_noisy(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.rmse_noisy))
    }
    pub fn mean_delta_true(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.delta_true))
    }
    pub fn mean_delta_noise(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.delta_noise))
    }

    /// One row per replicate followed by a `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rep", "rmse_truth", "rmse_noisy", "delta_beta_true", "delta_beta_noise", "n_rules"])?;
        for r in &self.replicates {
            w.write_record([
                r.rep.to_string(),
                r.rmse_truth.to_string(),
                r.rmse_noisy.to_string(),
                r.delta_true.to_string(),
                r.delta_noise.to_string(),
                r.n_rules.to_string(),
            ])?;
        }
        let rules = mean(self.replicates.iter().map(|r| r.n_rules as f64));
        w.write_record([
            "mean".to_string(),
            self.mean_rmse_truth().to_string(),
            self.mean_rmse_noisy().to_string(),
            self.mean_delta_true().to_string(),
            self.mean_delta_noise().to_string(),
            rules.to_string(),
        ])?;
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

/// Covariates, noisy responses and true means for one simulated sample.
pub fn simulate_data(scenario: Scenario, n: usize, p: usize, noise_sd: f64, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    match scenario {
        Scenario::Linear => {
            if p < LINEAR_SIGNAL.len() {
                return Err(usage(format!("--p must be at least {} for the linear scenario", LINEAR_SIGNAL.len())));
            }
            let mut rng = stream(seed, 0);
            let mut x = Mat::<f64>::zeros(n, p);
            for i in 0..n {
                for j in 0..p {
                    x[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
            let truth: Vec<f64> = (0..n)
                .map(|i| LINEAR_SIGNAL.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum())
                .collect();
            let y: Vec<f64> = truth
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + noise_sd * e
                })
                .collect();
            let names = (1..=p).map(|j| format!("x{j}")).collect();
            Ok((Dataset::from_matrix(names, x, y, "y")?, truth))
        }
    }
}

fn run_replicate(s: &SimulationSettings, rep: usize) -> Result<ReplicateResult> {
    let data_seed = derive_seed(derive_seed(s.seed, STREAM_SIM_DATA), rep as u64);
    let (train, _) = simulate_data(s.scenario, s.n, s.p, s.noise_sd, data_seed)?;
    let (test, truth) = simulate_data(s.scenario, s.n_test, s.p, s.noise_sd, derive_seed(data_seed, 1))?;
    let fit_seed = derive_seed(derive_seed(s.seed, STREAM_SIM_FITS), rep as u64);
    let model = fit(&train, &s.fit.with_seed(fit_seed))?;
    let pred = predict(&model, test.x.as_ref(), &PredictOptions::default())?.mean;

    let beta_bar = model.draws.beta_mean();
    let mut coef = vec![0.0; s.p];
    for (j, meta) in model.columns.iter().enumerate() {
        if let ColumnRole::Linear(f) = meta.role {
            coef[f] = model.original_scale(j, beta_bar[j]);
        }
    }
    let k = LINEAR_SIGNAL.len();
    Ok(ReplicateResult {
        rep,
        rmse_truth: rmse(&pred, &truth),
        rmse_noisy: rmse(&pred, &test.y),
        delta_true: coef[..k].iter().zip(LINEAR_SIGNAL).map(|(b, t)| (b - t).abs()).sum(),
        delta_noise: coef[k..].iter().map(|b| b.abs()).sum(),
        n_rules: model.rules.len(),
    })
}

/// Fits every replicate and scores linear-signal recovery. Coefficients are
/// posterior means mapped back to the data scale.
pub fn simulate(s: &SimulationSettings) -> Result<SimulationReport> {
    if s.reps == 0 || s.n < 2 || s.n_test == 0 {
        return Err(usage("--reps, --n and the test size must be positive (n >= 2)"));
    }
    if !(s.noise_sd >= 0.0) {
        return Err(usage("--noise-sd must be >= 0"));
    }
    if s.fit.linear == LinearTerms::None {
        log::warn!("simulation without linear terms: coefficient metrics will be zero-based");
    }
    s.fit.validate()?;
    let replicates = (0..s.reps)
        .into_par_iter()
        .map(|rep| {
            log::info!("simulate: replicate {rep}");
            run_replicate(s, rep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport { replicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::GibbsSettings;
    use crate::trees::TreeGenConfig;

    fn quick_cfg() -> FitConfig {
        FitConfig {
            trees: TreeGenConfig {
                ntree: 20,
                ..TreeGenConfig::default()
            },
            gibbs: GibbsSettings {
                niter: 150,
                burnin: 50,
                ..GibbsSettings::default()
            },
            ..FitConfig::default()
        }
    }

    #[test]
    fn ols_recovers_exact_linear_fit() {
        let n = 30;
        let x = Mat::from_fn(n, 2, |i, j| ((i * (j + 2)) % 7) as f64 + 0.1 * i as f64);
        let y: Vec<f64> = (0..n).map(|i| 1.5 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)]).collect();
        let o = fit_ols(x.as_ref(), &y).unwrap();
        let pred = o.predict(x.as_ref());
        assert!(rmse(&pred, &y) < 1e-6, "{}", rmse(&pred, &y));
    }

    #[test]
    fn ols_tolerates_duplicated_columns() {
        let n = 25;
        let x = Mat::from_fn(n, 3, |i, j| if j == 2 { i as f64 } else { ((i * 3 + j) % 5) as f64 + i as f64 * 0.3 });
        let x = Mat::from_fn(n, 4, |i, j| if j < 3 { x[(i, j)] } else { x[(i, 2)] });
        let y: Vec<f64> = (0..n).map(|i| x[(i, 2)] + x[(i, 0)]).collect();
        let o = fit_ols(x.as_ref(), &y).unwrap();
        assert!(rmse(&o.predict(x.as_ref()), &y) < 1e-4);
    }

    #[test]
    fn single_candidate_has_unit_rrmse() {
        let (data, _) = simulate_data(Scenario::Linear, 60, 6, 1.0, 3).unwrap();
        let rep = cross_validate(&data, &[CvCandidate::ols()], 3, 2, 5).unwrap();
        assert_eq!(rep.folds.len(), 6);
        assert!(rep.folds.iter().all(|f| f.rrmse == 1.0));
        assert_eq!(rep.mean_rrmse(0), 1.0);
    }

    #[test]
    fn grid_gives_one_row_per_candidate_and_best_is_one() {
        let (data, _) = simulate_data(Scenario::Linear, 80, 6, 1.0, 4).unwrap();
        let mut std = quick_cfg();
        std.mu = 0.0;
        std.eta = 0.0;
        let cands = vec![
            CvCandidate::horserule("mu=0,eta=0", std),
            CvCandidate::horserule("mu=1,eta=2", quick_cfg()),
        ];
        let rep = cross_validate(&data, &cands, 3, 1, 9).unwrap();
        let mut buf = Vec::new();
        rep.write_summary(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        for f in 0..3 {
            let pair: Vec<f64> = rep.folds.iter().filter(|r| r.fold == f).map(|r| r.rrmse).collect();
            assert_eq!(pair.len(), 2);
            assert!(pair.iter().cloned().fold(f64::INFINITY, f64::min) == 1.0);
            assert!(pair.iter().all(|&v| v >= 1.0));
        }
    }

    #[test]
    fn cv_is_deterministic() {
        let (data, _) = simulate_data(Scenario::Linear, 60, 5, 1.0, 2).unwrap();
        let cands = vec![CvCandidate::horserule("hr", quick_cfg())];
        let a = cross_validate(&data, &cands, 3, 1, 7).unwrap();
        let b = cross_validate(&data, &cands, 3, 1, 7).unwrap();
        assert_eq!(a.folds, b.folds);
    }

    #[test]
    fn cv_rejects_single_fold() {
        let (data, _) = simulate_data(Scenario::Linear, 20, 5, 1.0, 2).unwrap();
        let err = cross_validate(&data, &[CvCandidate::ols()], 1, 1, 1).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_scenario_is_a_usage_error() {
        let err = "friedman".parse::<Scenario>().unwrap_err();
        assert!(err.to_string().contains("unknown scenario"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn simulated_linear_data_has_the_stated_signal() {
        let (data, truth) = simulate_data(Scenario::Linear, 4000, 8, 1.0, 11).unwrap();
        let o = fit_ols(data.x.as_ref(), &data.y).unwrap();
        // OLS slopes on the data scale: coef_std * y_sd / x_sd.
        let slopes: Vec<f64> = (0..8).map(|j| o.coef[j] * o.scaling.y_sd / o.scaling.col_sds[j]).collect();
        let want = [5.0, 3.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        for (s, w) in slopes.iter().zip(want) {
            assert!((s - w).abs() < 0.06, "{slopes:?}");
        }
        let resid: Vec<f64> = data.y.iter().zip(&truth).map(|(y, t)| y - t).collect();
        let zero = vec![0.0; resid.len()];
        assert!((rmse(&resid, &zero) - 1.0).abs() < 0.05);
    }

    #[test]
    fn noiseless_linear_only_simulation_fits_the_truth() {
        let mut fit = quick_cfg();
        fit.trees.ntree = 10;
        fit.max_rules = Some(0);
        let s = SimulationSettings {
            n: 200,
            p: 8,
            reps: 2,
            noise_sd: 0.0,
            n_test: 200,
            fit,
            ..SimulationSettings::default()
        };
        let rep = simulate(&s).unwrap();
        assert_eq!(rep.replicates.len(), 2);
        assert!(rep.mean_rmse_truth() < 1e-3, "{}", rep.mean_rmse_truth());
        assert!(rep.mean_delta_true() < 1e-3);
        assert!(rep.replicates.iter().all(|r| r.n_rules == 0));
    }
}
