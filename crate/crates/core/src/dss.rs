//! Decoupled shrinkage and summary: a sparse coefficient vector whose fit
//! approximates the posterior-mean fit `Zβ̄`.
//!
//! Solves `min_γ (1/2N)‖Zβ̄ − Zγ‖² + λ‖γ‖₁` by cyclic coordinate descent on
//! the standardized design.

use std::io::Write;

use faer::MatRef;

use crate::error::{usage, Error, Result};
use crate::inference::Importance;
use crate::model::FittedModel;
use crate::sampler::conditionals::mat_vec;

/// Sweeps stop once no coefficient moves by more than this.
pub const TOLERANCE: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 20_000;
/// Number of penalties on the default path.
pub const PATH_LENGTH: usize = 50;
/// Smallest penalty on the default path, relative to `λ_max`.
pub const PATH_MIN_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DssSummary {
    pub lambda: f64,
    /// Standardized-scale coefficients, one per design column.
    pub coefficients: Vec<f64>,
    pub nonzero_count: usize,
    /// `‖Zγ − Zβ̄‖² / ‖Zβ̄‖²`.
    pub fit_gap: f64,
    pub sweeps: usize,
}

pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

fn columns(z: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..z.ncols()).map(|j| z.col(j).iter().copied().collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_j |z_jᵀ f| / N`: the smallest penalty giving an all-zero solution.
pub fn lambda_max(z: MatRef<'_, f64>, target: &[f64]) -> f64 {
    let n = z.nrows() as f64;
    columns(z).iter().map(|c| dot(c, target).abs() / n).fold(0.0, f64::max)
}

struct Solver {
    cols: Vec<Vec<f64>>,
    /// `‖z_j‖² / N`
    scale: Vec<f64>,
    target: Vec<f64>,
    n: f64,
}

impl Solver {
    fn new(z: MatRef<'_, f64>, target: Vec<f64>) -> Self {
        let n = z.nrows() as f64;
        let cols = columns(z);
        let scale = cols.iter().map(|c| dot(c, c) / n).collect();
        Solver { cols, scale, target, n }
    }

    fn residual(&self, gamma: &[f64]) -> Vec<f64> {
        let mut r = self.target.clone();
        for (c, &g) in self.cols.iter().zip(gamma) {
            if g != 0.0 {
                for (ri, zi) in r.iter_mut().zip(c) {
                    *ri -= g * zi;
                }
            }
        }
        r
    }

    fn solve(&self, lambda: f64, start: &[f64]) -> Result<DssSummary> {
        let mut gamma = start.to_vec();
        let mut r = self.residual(&gamma);
        let mut sweeps = 0;
        loop {
            if sweeps == MAX_SWEEPS {
                return Err(Error::NoConvergence { cap: MAX_SWEEPS });
            }
            sweeps += 1;
            let mut max_change = 0.0f64;
            for j in 0..self.cols.len() {
                if self.scale[j] == 0.0 {
                    continue;
                }
                let c = &self.cols[j];
                let rho = dot(c, &r) / self.n + self.scale[j] * gamma[j];
                let new = soft_threshold(rho, lambda) / self.scale[j];
                let delta = new - gamma[j];
                if delta != 0.0 {
                    for (ri, zi) in r.iter_mut().zip(c) {
                        *ri -= delta * zi;
                    }
                    gamma[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < TOLERANCE {
                break;
            }
        }
        let norm = dot(&self.target, &self.target);
        let r = self.residual(&gamma);
        let fit_gap = if norm > 0.0 { dot(&r, &r) / norm } else { 0.0 };
        Ok(DssSummary {
            lambda,
            nonzero_count: gamma.iter().filter(|g| **g != 0.0).count(),
            coefficients: gamma,
            fit_gap,
            sweeps,
        })
    }
}

/// Sparse summary of `target ≈ Zβ̄` at penalty `lambda`, started from `start`.
pub fn dss_solve(z: MatRef<'_, f64>, target: &[f64], lambda: f64, start: &[f64]) -> Result<DssSummary> {
    if !(lambda >= 0.0) {
        return Err(usage(format!("--lambda must be >= 0, got {lambda}")));
    }
    if target.len() != z.nrows() || start.len() != z.ncols() {
        return Err(usage("DSS dimensions do not match the design"));
    }
    Solver::new(z, target.to_vec()).solve(lambda, start)
}

/// DSS of a fitted model on its (standardized) training design `z`, warm
/// started from the posterior mean so that `lambda = 0` returns it unchanged.
pub fn dss_summarize(model: &FittedModel, z: MatRef<'_, f64>, lambda: f64) -> Result<DssSummary> {
    let beta = model.draws.beta_mean();
    let target = mat_vec(z, &beta);
    dss_solve(z, &target, lambda, &beta)
}

/// Penalties `λ_max · ratio^(k/(len−1))`, `k = 0..len`.
pub fn lambda_path(lambda_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    (0..len)
        .map(|k| lambda_max * min_ratio.powf(k as f64 / (len - 1) as f64))
        .collect()
}

/// Log-spaced path from `λ_max` down, each point warm started from the last.
pub fn dss_path(model: &FittedModel, z: MatRef<'_, f64>, len: usize, min_ratio: f64) -> Result<Vec<DssSummary>> {
    if len == 0 || !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(usage("path needs at least one point and a ratio in (0, 1)"));
    }
    let beta = model.draws.beta_mean();
    let target = mat_vec(z, &beta);
    let solver = Solver::new(z, target.clone());
    let mut start = vec![0.0; z.ncols()];
    let mut out = Vec::with_capacity(len);
    for lambda in lambda_path(lambda_max(z, &target), len, min_ratio) {
        let s = solver.solve(lambda, &start)?;
        start.clone_from(&s.coefficients);
        out.push(s);
    }
    Ok(out)
}

/// Largest violation of the lasso optimality conditions:
/// `z_jᵀr/N = λ sign(γ_j)` for nonzero `γ_j`, `|z_jᵀr/N| ≤ λ` otherwise.
pub fn stationarity_violation(z: MatRef<'_, f64>, target: &[f64], s: &DssSummary) -> f64 {
    let n = z.nrows() as f64;
    let solver = Solver::new(z, target.to_vec());
    let r = solver.residual(&s.coefficients);
    solver
        .cols
        .iter()
        .zip(&s.coefficients)
        .map(|(c, &g)| {
            let grad = dot(c, &r) / n;
            if g != 0.0 {
                (grad - s.lambda * g.signum()).abs()
            } else {
                (grad.abs() - s.lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Nonzero DSS coefficients with their labels, mean importance and the
/// dense posterior mean, both coefficients on the data scale.
pub fn write_dss<W: Write>(model: &FittedModel, importance: &Importance, s: &DssSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rule_text", "I_mean", "beta_mean", "beta_dss"])?;
    let mut order: Vec<usize> = (0..s.coefficients.len()).filter(|&j| s.coefficients[j] != 0.0).collect();
    order.sort_by(|&a, &b| {
        importance.rows[b]
            .mean
            .total_cmp(&importance.rows[a].mean)
            .then(a.cmp(&b))
    });
    for j in order {
        let row = &importance.rows[j];
        w.write_record([
            row.label.clone(),
            row.mean.to_string(),
            row.beta_mean.to_string(),
            model.original_scale(j, s.coefficients[j]).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_dss_path<W: Write>(path: &[DssSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "nonzero", "fit_gap"])?;
    for s in path {
        w.write_record([s.lambda.to_string(), s.nonzero_count.to_string(), s.fit_gap.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::sampler::conditionals::std_normal;
    use faer::Mat;
    use proptest::prelude::*;

    fn random_design(n: usize, p: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let mut z = Mat::from_fn(n, p, |_, _| std_normal(&mut rng));
        for j in 1..p {
            for i in 0..n {
                z[(i, j)] += 0.5 * z[(i, j - 1)];
            }
        }
        let beta: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { std_normal(&mut rng) } else { 0.05 * std_normal(&mut rng) }).collect();
        (z, beta)
    }

    #[test]
    fn zero_penalty_reproduces_the_dense_fit() {
        let (z, beta) = random_design(50, 12, 1);
        let target = mat_vec(z.as_ref(), &beta);
        let s = dss_solve(z.as_ref(), &target, 0.0, &beta).unwrap();
        for j in 0..12 {
            assert!((s.coefficients[j] - beta[j]).abs() < 1e-8);
        }
        assert!(s.fit_gap < 1e-16);
    }

    #[test]
    fn huge_penalty_zeroes_everything() {
        let (z, beta) = random_design(40, 8, 2);
        let target = mat_vec(z.as_ref(), &beta);
        let lmax = lambda_max(z.as_ref(), &target);
        for lambda in [lmax, 10.0 * lmax, 1e12] {
            let s = dss_solve(z.as_ref(), &target, lambda, &beta).unwrap();
            assert_eq!(s.nonzero_count, 0);
            assert!((s.fit_gap - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_design_is_soft_thresholding() {
        // Columns of a 4x4 Hadamard matrix: zᵀz / N = I.
        let h = [[1., 1., 1., 1.], [1., -1., 1., -1.], [1., 1., -1., -1.], [1., -1., -1., 1.]];
        let z = Mat::from_fn(4, 4, |i, j| h[i][j]);
        let beta = [2.0, -0.3, 0.8, -1.5];
        let target = mat_vec(z.as_ref(), &beta);
        for lambda in [0.0, 0.2, 0.5, 1.0, 3.0] {
            let s = dss_solve(z.as_ref(), &target, lambda, &[0.0; 4]).unwrap();
            for j in 0..4 {
                assert!((s.coefficients[j] - soft_threshold(beta[j], lambda)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_is_monotone_and_stationary() {
        let (z, beta) = random_design(60, 25, 3);
        let target = mat_vec(z.as_ref(), &beta);
        let solver = Solver::new(z.as_ref(), target.clone());
        let mut start = vec![0.0; 25];
        let mut prev: Option<DssSummary> = None;
        for lambda in lambda_path(lambda_max(z.as_ref(), &target), PATH_LENGTH, PATH_MIN_RATIO) {
            let s = solver.solve(lambda, &start).unwrap();
            assert!(stationarity_violation(z.as_ref(), &target, &s) < 1e-6);
            if let Some(p) = &prev {
                assert!(s.fit_gap <= p.fit_gap + 1e-12);
            }
            start.clone_from(&s.coefficients);
            prev = Some(s);
        }
        assert_eq!(prev.map(|s| s.nonzero_count > 0), Some(true));
    }

    #[test]
    fn lambda_path_endpoints() {
        let p = lambda_path(2.0, 50, 1e-3);
        assert_eq!(p.len(), 50);
        assert_eq!(p[0], 2.0);
        assert!((p[49] - 2e-3).abs() < 1e-15);
        assert!(p.windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fit_gap_grows_with_the_penalty(seed in 0u64..1000) {
            let (z, beta) = random_design(30, 10, seed);
            let target = mat_vec(z.as_ref(), &beta);
            let solver = Solver::new(z.as_ref(), target.clone());
            let mut start = vec![0.0; 10];
            let mut gaps = Vec::new();
            for lambda in lambda_path(lambda_max(z.as_ref(), &target), 20, 1e-2) {
                let s = solver.solve(lambda, &start).unwrap();
                prop_assert!(stationarity_violation(z.as_ref(), &target, &s) < 1e-6);
                gaps.push(s.fit_gap);
                start = s.coefficients;
            }
            prop_assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", gaps);
        }

        // With correlated columns a coefficient can leave the active set as
        // the penalty drops, so the count is only monotone for orthogonal
        // designs.
        #[test]
        fn nonzero_count_shrinks_with_the_penalty_on_orthogonal_designs(
            beta in proptest::collection::vec(-3.0f64..3.0, 4),
            signs in proptest::collection::vec(proptest::bool::ANY, 4),
        ) {
            let h = [[1., 1., 1., 1.], [1., -1., 1., -1.], [1., 1., -1., -1.], [1., -1., -1., 1.]];
            let z = Mat::from_fn(4, 4, |i, j| if signs[j] { h[i][j] } else { -h[i][j] });
            let target = mat_vec(z.as_ref(), &beta);
            let solver = Solver::new(z.as_ref(), target.clone());
            let mut start = vec![0.0; 4];
            let mut counts = Vec::new();
            for lambda in lambda_path(lambda_max(z.as_ref(), &target).max(1e-9), 25, 1e-3) {
                let s = solver.solve(lambda, &start).unwrap();
                counts.push(s.nonzero_count);
                start = s.coefficients;
            }
            prop_assert!(counts.windows(2).all(|w| w[1] >= w[0]), "{:?}", counts);
        }
    }
}
