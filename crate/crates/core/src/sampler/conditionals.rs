//! Full conditional draws of the Gibbs sampler.
//!
//! Every scale parameter is inverse-gamma given the rest, so each block is a
//! single `rate / Gamma(shape, 1)` draw. The β block is an exact multivariate
//! normal draw, either through the `p x p` precision matrix or, when `p > n`,
//! through an `n x n` system (Bhattacharya, Chakraborty and Mallick 2016).

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Scale parameters are kept inside this range so that `1 / x` and products
/// of two of them stay finite.
pub const SCALE_FLOOR: f64 = 1e-100;
pub const SCALE_CEIL: f64 = 1e100;

/// `InvGamma(shape, rate)` draw, clamped to `[SCALE_FLOOR, SCALE_CEIL]`.
pub fn inv_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    debug_assert!(shape > 0.0 && rate >= 0.0);
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    (rate / g).clamp(SCALE_FLOOR, SCALE_CEIL)
}

pub fn std_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `σ² | · ~ IG((n + p)/2, rss/2 + quad/2)` with `quad = βᵀΛ*⁻¹β`.
pub fn draw_sigma2(rss: f64, quad: f64, n: usize, p: usize, rng: &mut Rng) -> f64 {
    inv_gamma((n + p) as f64 / 2.0, (rss + quad) / 2.0, rng)
}

/// `λ_j² | · ~ IG(1, 1/ν_j + β_j²/(2τ²σ²))`.
pub fn draw_lambda2(nu: f64, beta: f64, tau2: f64, sigma2: f64, rng: &mut Rng) -> f64 {
    inv_gamma(1.0, 1.0 / nu + beta * beta / (2.0 * tau2 * sigma2), rng)
}

/// `τ² | · ~ IG((p+1)/2, 1/ρ + Σ β_j²/λ_j² / (2σ²))` over `p` shrunk columns.
pub fn draw_tau2(rho: f64, sum_beta2_over_lambda2: f64, sigma2: f64, p: usize, rng: &mut Rng) -> f64 {
    inv_gamma((p + 1) as f64 / 2.0, 1.0 / rho + sum_beta2_over_lambda2 / (2.0 * sigma2), rng)
}

/// `ν_j | · ~ IG(1, 1/A_j² + 1/λ_j²)`.
pub fn draw_nu(scale: f64, lambda2: f64, rng: &mut Rng) -> f64 {
    inv_gamma(1.0, 1.0 / (scale * scale) + 1.0 / lambda2, rng)
}

/// `ρ | · ~ IG(1, 1 + 1/τ²)`.
pub fn draw_rho(tau2: f64, rng: &mut Rng) -> f64 {
    inv_gamma(1.0, 1.0 + 1.0 / tau2, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMethod {
    /// Cholesky when `p <= n`, low-rank otherwise.
    #[default]
    Auto,
    Cholesky,
    LowRank,
}

impl std::str::FromStr for BetaMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(BetaMethod::Auto),
            "cholesky" => Ok(BetaMethod::Cholesky),
            "lowrank" | "low-rank" => Ok(BetaMethod::LowRank),
            other => Err(format!("unknown beta method {other:?} (auto, cholesky, lowrank)")),
        }
    }
}

pub(crate) fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    let x = MatRef::from_column_major_slice(x, a.ncols(), 1);
    matmul(out.as_mut(), Accum::Replace, a, x, 1.0, Par::Seq);
    out.col(0).iter().copied().collect()
}

pub(crate) fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    mat_vec(a.transpose(), x)
}

/// Lower triangle of `aᵀa`.
fn gram_lower(a: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = Mat::<f64>::zeros(a.ncols(), a.ncols());
    triangular::matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.transpose(),
        BlockStructure::Rectangular,
        a,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    g
}

/// Factor `P L Lᵀ Pᵀ` of `BᵀB + I`, with `L` lower triangular and `P` a
/// column permutation (identity unless the pivoted fallback was needed).
struct Factor {
    l: Mat<f64>,
    /// Factored position `j` holds original index `perm[j]`.
    perm: Option<Vec<usize>>,
}

impl Factor {
    /// Cholesky of the formed matrix (lower triangle) first. When extreme
    /// scales have made it numerically indefinite, falls back to a
    /// column-pivoted QR of the stacked `[B; I]`, which never forms `BᵀB`.
    fn plus_identity(b: MatRef<'_, f64>, formed: MatRef<'_, f64>) -> Option<Self> {
        if let Ok(llt) = faer::linalg::solvers::Llt::new(formed, Side::Lower) {
            return Some(Factor {
                l: llt.L().to_owned(),
                perm: None,
            });
        }
        let (k, m) = (b.nrows(), b.ncols());
        log::debug!("Cholesky of a {m}x{m} system failed; refactoring by pivoted QR");
        let stacked = Mat::from_fn(k + m, m, |i, j| {
            if i < k {
                b[(i, j)]
            } else if i - k == j {
                1.0
            } else {
                0.0
            }
        });
        let qr = faer::linalg::solvers::ColPivQr::new(stacked.as_ref());
        let l = qr.thin_R().transpose().to_owned();
        if !(0..m).all(|j| l[(j, j)] != 0.0 && l[(j, j)].is_finite()) {
            return None;
        }
        let perm = qr.P().arrays().0.to_vec();
        Some(Factor { l, perm: Some(perm) })
    }

    /// `rhs ← L⁻¹ Pᵀ rhs`
    fn solve_forward(&self, rhs: &mut Mat<f64>) {
        if let Some(perm) = &self.perm {
            let v = rhs.clone();
            for (j, &o) in perm.iter().enumerate() {
                rhs[(j, 0)] = v[(o, 0)];
            }
        }
        solve_lower_triangular_in_place(self.l.as_ref(), rhs.as_mut(), Par::Seq);
    }

    /// `rhs ← P L⁻ᵀ rhs`
    fn solve_backward(&self, rhs: &mut Mat<f64>) {
        solve_upper_triangular_in_place(self.l.transpose(), rhs.as_mut(), Par::Seq);
        if let Some(perm) = &self.perm {
            let v = rhs.clone();
            for (j, &o) in perm.iter().enumerate() {
                rhs[(o, 0)] = v[(j, 0)];
            }
        }
    }
}

/// Draws `β ~ N(A⁻¹Zᵀy, σ²A⁻¹)`, `A = ZᵀZ + diag(1/d)`, for a fixed design.
///
/// Precomputes `ZᵀZ` and `Zᵀy` when the precision route is used.
pub struct BetaSampler<'a> {
    z: MatRef<'a, f64>,
    y: &'a [f64],
    low_rank: bool,
    ztz: Option<Mat<f64>>,
    zty: Vec<f64>,
}

impl<'a> BetaSampler<'a> {
    pub fn new(z: MatRef<'a, f64>, y: &'a [f64], method: BetaMethod) -> Self {
        assert_eq!(z.nrows(), y.len(), "design rows and response length differ");
        let low_rank = match method {
            BetaMethod::Auto => z.ncols() > z.nrows(),
            BetaMethod::Cholesky => false,
            BetaMethod::LowRank => true,
        };
        let (ztz, zty) = if low_rank {
            (None, Vec::new())
        } else {
            (Some(gram_lower(z)), mat_t_vec(z, y))
        };
        BetaSampler { z, y, low_rank, ztz, zty }
    }

    pub fn is_low_rank(&self) -> bool {
        self.low_rank
    }

    /// One exact draw given `σ²` and prior variances `d = diag(Λ*)`.
    /// Returns `None` when the factorization fails.
    pub fn draw(&self, sigma2: f64, d: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
        assert_eq!(d.len(), self.z.ncols());
        if self.low_rank {
            self.draw_low_rank(sigma2, d, rng)
        } else {
            self.draw_precision(sigma2, d, rng)
        }
    }

    fn draw_precision(&self, sigma2: f64, d: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
        // With S = D^(1/2) the system S ZᵀZ S + I has eigenvalues >= 1, so
        // it factors even when ZᵀZ is singular. θ = L⁻ᵀ(L⁻¹ S Zᵀy + σξ) and
        // β = Sθ has mean (ZᵀZ + D⁻¹)⁻¹Zᵀy and covariance σ²(ZᵀZ + D⁻¹)⁻¹.
        let p = d.len();
        let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        let gram = self.ztz.as_ref().expect("precomputed gram");
        let a = Mat::from_fn(p, p, |i, j| {
            if i >= j {
                s[i] * gram[(i, j)] * s[j] + if i == j { 1.0 } else { 0.0 }
            } else {
                0.0
            }
        });
        let zs = Mat::from_fn(self.z.nrows(), p, |i, j| self.z[(i, j)] * s[j]);
        let f = Factor::plus_identity(zs.as_ref(), a.as_ref())?;
        let mut rhs = Mat::from_fn(p, 1, |j, _| s[j] * self.zty[j]);
        f.solve_forward(&mut rhs);
        let sigma = sigma2.sqrt();
        for j in 0..p {
            rhs[(j, 0)] += sigma * std_normal(rng);
        }
        f.solve_backward(&mut rhs);
        Some((0..p).map(|j| s[j] * rhs[(j, 0)]).collect())
    }

    fn draw_low_rank(&self, sigma2: f64, d: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
        let (n, p) = (self.z.nrows(), self.z.ncols());
        let sigma = sigma2.sqrt();
        let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        // u ~ N(0, σ²D), δ ~ N(0, I_n)
        let u: Vec<f64> = sqrt_d.iter().map(|s| sigma * s * std_normal(rng)).collect();
        let delta: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();

        let zs = Mat::from_fn(n, p, |i, j| self.z[(i, j)] * sqrt_d[j]);
        let mut m = Mat::<f64>::zeros(n, n);
        triangular::matmul(
            m.as_mut(),
            BlockStructure::TriangularLower,
            Accum::Replace,
            zs.as_ref(),
            BlockStructure::Rectangular,
            zs.transpose(),
            BlockStructure::Rectangular,
            1.0,
            Par::Seq,
        );
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        let f = Factor::plus_identity(zs.transpose(), m.as_ref())?;

        // (ZDZᵀ + I) w = y/σ - (Zu/σ + δ)
        let zu = mat_vec(self.z, &u);
        let mut w = Mat::from_fn(n, 1, |i, _| self.y[i] / sigma - (zu[i] / sigma + delta[i]));
        f.solve_forward(&mut w);
        f.solve_backward(&mut w);

        let ztw = mat_t_vec(self.z, w.col(0).try_as_col_major().expect("contiguous").as_slice());
        Some((0..p).map(|j| u[j] + sigma * d[j] * ztw[j]).collect())
    }
}

/// One exact draw of the β conditional without precomputation.
pub fn sample_beta_conditional(
    z: MatRef<'_, f64>,
    ys: &[f64],
    sigma2: f64,
    lambda_star: &[f64],
    method: BetaMethod,
    rng: &mut Rng,
) -> Option<Vec<f64>> {
    BetaSampler::new(z, ys, method).draw(sigma2, lambda_star, rng)
}
