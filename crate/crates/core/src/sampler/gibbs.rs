use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use super::conditionals::{
    draw_lambda2, draw_nu, draw_rho, draw_sigma2, draw_tau2, mat_vec, BetaMethod, BetaSampler,
};
use super::prior::PriorSpec;
use crate::error::{usage, Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsSettings {
    pub niter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub method: BetaMethod,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        GibbsSettings {
            niter: 1000,
            burnin: 100,
            thin: 1,
            seed: 1,
            method: BetaMethod::Auto,
        }
    }
}

impl GibbsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.niter {
            return Err(usage(format!(
                "burnin ≥ niter (--burnin {} and --niter {})",
                self.burnin, self.niter
            )));
        }
        if self.thin == 0 {
            return Err(usage("--thin must be >= 1"));
        }
        if self.n_retained() == 0 {
            return Err(usage(format!(
                "no draws retained: (niter - burnin) / thin = ({} - {}) / {} is 0",
                self.niter, self.burnin, self.thin
            )));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.niter.saturating_sub(self.burnin)) / self.thin.max(1)
    }

    /// Iteration `t` (0-based) is kept if it completes a thinning block after
    /// burn-in.
    fn keeps(&self, t: usize) -> bool {
        t >= self.burnin && (t - self.burnin + 1) % self.thin == 0
    }
}

/// Retained states on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// Draws x columns.
    pub beta: Mat<f64>,
    pub sigma2: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Draws x columns; 1 for columns outside the horseshoe. Not kept in
    /// model files.
    pub lambda2: Option<Mat<f64>>,
    pub niter: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.beta.ncols()
    }

    pub fn beta_mean(&self) -> Vec<f64> {
        let k = self.n_draws() as f64;
        (0..self.n_columns())
            .map(|j| self.beta.col(j).iter().sum::<f64>() / k)
            .collect()
    }
}

/// Runs one chain from `β = 0` and every scale at 1.
///
/// Linear columns flagged unshrunk get prior variance `σ²` (unit scale) and
/// sit outside the `λ, ν, τ` updates; they still count in the shape of the
/// `σ²` conditional and contribute `β_j²` to its quadratic form.
pub fn gibbs_run(z: MatRef<'_, f64>, ys: &[f64], prior: &PriorSpec, settings: &GibbsSettings) -> Result<PosteriorDraws> {
    settings.validate()?;
    let (n, p) = (z.nrows(), z.ncols());
    if ys.len() != n {
        return Err(usage(format!("design has {n} rows but the response has {}", ys.len())));
    }
    if prior.scales.len() != p || prior.shrunk.len() != p {
        return Err(usage(format!("prior covers {} columns, design has {p}", prior.scales.len())));
    }
    if prior.scales.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(usage("prior scales must be positive and finite"));
    }

    let shrunk: Vec<usize> = (0..p).filter(|&j| prior.shrunk[j]).collect();
    let sampler = BetaSampler::new(z, ys, settings.method);
    log::debug!(
        "gibbs: n={n} p={p} ({} shrunk), {} route",
        shrunk.len(),
        if sampler.is_low_rank() { "low-rank" } else { "cholesky" }
    );
    let mut rng = rng_from(settings.seed);

    let mut beta = vec![0.0; p];
    let mut sigma2 = 1.0;
    let mut lambda2 = vec![1.0; p];
    let mut tau2 = 1.0;
    let mut nu = vec![1.0; p];
    let mut rho = 1.0;
    let mut d = vec![1.0; p];

    let keep = settings.n_retained();
    let mut out_beta = Mat::<f64>::zeros(keep, p);
    let mut out_lambda2 = Mat::<f64>::zeros(keep, p);
    let mut out_sigma2 = Vec::with_capacity(keep);
    let mut out_tau2 = Vec::with_capacity(keep);

    for t in 0..settings.niter {
        for &j in &shrunk {
            d[j] = tau2 * lambda2[j];
        }
        beta = sampler
            .draw(sigma2, &d, &mut rng)
            .ok_or(Error::NotPositiveDefinite { iteration: t })?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric(format!("non-finite coefficient draw at iteration {t}")));
        }

        let fitted = mat_vec(z, &beta);
        let rss: f64 = ys.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
        let quad: f64 = (0..p).map(|j| beta[j] * beta[j] / d[j]).sum();
        sigma2 = draw_sigma2(rss, quad, n, p, &mut rng);

        if !shrunk.is_empty() {
            for &j in &shrunk {
                lambda2[j] = draw_lambda2(nu[j], beta[j], tau2, sigma2, &mut rng);
            }
            let s: f64 = shrunk.iter().map(|&j| beta[j] * beta[j] / lambda2[j]).sum();
            tau2 = draw_tau2(rho, s, sigma2, shrunk.len(), &mut rng);
            for &j in &shrunk {
                nu[j] = draw_nu(prior.scales[j], lambda2[j], &mut rng);
            }
            rho = draw_rho(tau2, &mut rng);
        }

        if settings.keeps(t) {
            let r = out_sigma2.len();
            for j in 0..p {
                out_beta[(r, j)] = beta[j];
                out_lambda2[(r, j)] = lambda2[j];
            }
            out_sigma2.push(sigma2);
            out_tau2.push(tau2);
        }
        if (t + 1) % 100 == 0 {
            log::debug!("gibbs iteration {}/{}: sigma2={sigma2:.4} tau2={tau2:.3e}", t + 1, settings.niter);
        }
    }
    Ok(PosteriorDraws {
        beta: out_beta,
        sigma2: out_sigma2,
        tau2: out_tau2,
        lambda2: Some(out_lambda2),
        niter: settings.niter,
        burnin: settings.burnin,
        thin: settings.thin,
        seed: settings.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn noise_problem(n: usize, p: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let mut z = Mat::from_fn(n, p, |_, _| super::super::conditionals::std_normal(&mut rng));
        for j in 0..p {
            let m = z.col(j).iter().sum::<f64>() / n as f64;
            let s = (z.col(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            for i in 0..n {
                z[(i, j)] = (z[(i, j)] - m) / s;
            }
        }
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = y.iter().sum::<f64>() / n as f64;
        let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        for v in &mut y {
            *v = (*v - m) / s;
        }
        (z, y)
    }

    #[test]
    fn settings_validation() {
        let bad = GibbsSettings {
            niter: 50,
            burnin: 100,
            ..GibbsSettings::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("burnin ≥ niter"), "{msg}");
        assert!(GibbsSettings { thin: 0, ..GibbsSettings::default() }.validate().is_err());
        assert!(GibbsSettings { niter: 105, burnin: 100, thin: 10, ..GibbsSettings::default() }.validate().is_err());
        assert_eq!(GibbsSettings::default().n_retained(), 900);
        assert_eq!(GibbsSettings { thin: 7, ..GibbsSettings::default() }.n_retained(), 128);
    }

    #[test]
    fn draw_count_positivity_and_determinism() {
        let (z, y) = noise_problem(30, 8, 1);
        let prior = PriorSpec::standard(8);
        let s = GibbsSettings {
            niter: 230,
            burnin: 30,
            thin: 3,
            seed: 5,
            method: BetaMethod::Auto,
        };
        let a = gibbs_run(z.as_ref(), &y, &prior, &s).unwrap();
        assert_eq!(a.n_draws(), 66);
        assert!(a.sigma2.iter().chain(&a.tau2).all(|v| *v > 0.0 && v.is_finite()));
        let l = a.lambda2.as_ref().unwrap();
        assert!((0..l.nrows()).all(|r| (0..l.ncols()).all(|c| l[(r, c)] > 0.0)));
        let b = gibbs_run(z.as_ref(), &y, &prior, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pure_noise_columns_are_shrunk() {
        // Scales as for rules of length 2 and support around 0.3.
        let (z, y) = noise_problem(200, 100, 7);
        let mut prior = PriorSpec::standard(100);
        prior.mu = 1.0;
        prior.eta = 2.0;
        prior.scales = vec![0.15; 100];
        let s = GibbsSettings {
            seed: 3,
            ..GibbsSettings::default()
        };
        let draws = gibbs_run(z.as_ref(), &y, &prior, &s).unwrap();
        let m = draws.beta_mean();
        let worst = m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(worst < 0.05, "largest |posterior mean| {worst}");
    }

    #[test]
    fn both_beta_routes_agree_in_distribution() {
        let n = 40;
        let (z, mut y) = noise_problem(n, 5, 2);
        for i in 0..n {
            y[i] += 0.8 * z[(i, 0)] - 0.5 * z[(i, 3)];
        }
        let prior = PriorSpec::standard(5);
        let run = |method| {
            let s = GibbsSettings {
                niter: 6000,
                burnin: 500,
                thin: 1,
                seed: 17,
                method,
            };
            gibbs_run(z.as_ref(), &y, &prior, &s).unwrap().beta_mean()
        };
        let a = run(BetaMethod::Cholesky);
        let b = run(BetaMethod::LowRank);
        for j in 0..5 {
            assert!((a[j] - b[j]).abs() < 0.05, "column {j}: {} vs {}", a[j], b[j]);
        }
        assert!(a[0] > 0.5 && a[3] < -0.25);
    }

    #[test]
    fn larger_scale_shrinks_less() {
        let n = 60;
        let (z, y) = noise_problem(n, 40, 4);
        let mut prior = PriorSpec::standard(40);
        for j in 20..40 {
            prior.scales[j] = 0.05;
        }
        let s = GibbsSettings {
            niter: 3000,
            burnin: 300,
            seed: 8,
            ..GibbsSettings::default()
        };
        let d = gibbs_run(z.as_ref(), &y, &prior, &s).unwrap();
        let k = d.n_draws() as f64;
        let mean_abs = |cols: std::ops::Range<usize>| {
            let w = cols.len() as f64;
            cols.map(|j| d.beta.col(j).iter().map(|b| b.abs()).sum::<f64>() / k).sum::<f64>() / w
        };
        let wide = mean_abs(0..20);
        let narrow = mean_abs(20..40);
        assert!(wide >= narrow - 0.005, "A=1: {wide}, A=0.05: {narrow}");
    }

    #[test]
    fn unshrunk_linear_terms_recover_signal() {
        let n = 100;
        let (z, mut y) = noise_problem(n, 6, 12);
        for i in 0..n {
            y[i] = 0.9 * z[(i, 0)] + 0.1 * y[i];
        }
        let mut prior = PriorSpec::standard(6);
        prior.unshrunk_linear = true;
        prior.shrunk = vec![false, false, true, true, true, true];
        let d = gibbs_run(z.as_ref(), &y, &prior, &GibbsSettings::default()).unwrap();
        let m = d.beta_mean();
        assert!((m[0] - 0.9).abs() < 0.05, "{m:?}");
        let l = d.lambda2.unwrap();
        assert!((0..l.nrows()).all(|r| l[(r, 0)] == 1.0 && l[(r, 1)] == 1.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (z, y) = noise_problem(10, 3, 1);
        assert!(gibbs_run(z.as_ref(), &y[..9], &PriorSpec::standard(3), &GibbsSettings::default()).is_err());
        assert!(gibbs_run(z.as_ref(), &y, &PriorSpec::standard(4), &GibbsSettings::default()).is_err());
    }
}
