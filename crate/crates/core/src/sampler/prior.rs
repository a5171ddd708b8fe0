use serde::{Deserialize, Serialize};

use crate::design::{ColumnRole, DesignMatrix};
use crate::error::{usage, Result};

/// Half-Cauchy scale for a rule's local shrinkage parameter:
/// `(2 * min(s, 1 - s))^mu / length^eta`.
///
/// Equals 1 for a single-condition rule with support one half, and for any
/// rule when `mu = eta = 0`.
pub fn rule_prior_scale(support: f64, length: usize, mu: f64, eta: f64) -> Result<f64> {
    if !(support > 0.0 && support < 1.0) {
        return Err(usage(format!("rule support must be in (0, 1), got {support}")));
    }
    if length == 0 {
        return Err(usage("rule length must be >= 1"));
    }
    let specificity = 2.0 * support.min(1.0 - support);
    Ok(specificity.powf(mu) / (length as f64).powf(eta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu: f64,
    pub eta: f64,
    /// Per-column half-Cauchy scale `A_j`.
    pub scales: Vec<f64>,
    pub linear_scale: f64,
    pub unshrunk_linear: bool,
    /// False for columns sampled outside the horseshoe (unit prior variance).
    pub shrunk: Vec<bool>,
}

impl PriorSpec {
    /// Standard horseshoe (every scale 1) on `p` shrunk columns.
    pub fn standard(p: usize) -> Self {
        PriorSpec {
            mu: 0.0,
            eta: 0.0,
            scales: vec![1.0; p],
            linear_scale: 1.0,
            unshrunk_linear: false,
            shrunk: vec![true; p],
        }
    }

    pub fn n_shrunk(&self) -> usize {
        self.shrunk.iter().filter(|&&s| s).count()
    }
}

pub fn assemble_prior(design: &DesignMatrix, mu: f64, eta: f64, linear_scale: f64, unshrunk_linear: bool) -> Result<PriorSpec> {
    if !(mu >= 0.0 && eta >= 0.0) {
        return Err(usage(format!("mu and eta must be >= 0, got ({mu}, {eta})")));
    }
    if !(linear_scale > 0.0) {
        return Err(usage(format!("linear prior scale must be > 0, got {linear_scale}")));
    }
    let mut scales = Vec::with_capacity(design.n_columns());
    let mut shrunk = Vec::with_capacity(design.n_columns());
    for c in &design.columns {
        match c.role {
            ColumnRole::Linear(_) => {
                scales.push(linear_scale);
                shrunk.push(!unshrunk_linear);
            }
            ColumnRole::Rule(r) => {
                let rule = &design.rules[r];
                scales.push(rule_prior_scale(rule.support, rule.length(), mu, eta)?);
                shrunk.push(true);
            }
        }
    }
    Ok(PriorSpec {
        mu,
        eta,
        scales,
        linear_scale,
        unshrunk_linear,
        shrunk,
    })
}
