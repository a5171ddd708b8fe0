//! Rule-structured horseshoe prior and its Gibbs sampler.

pub mod conditionals;
mod gibbs;
mod prior;

pub use conditionals::{sample_beta_conditional, BetaMethod, BetaSampler};
pub use gibbs::{gibbs_run, GibbsSettings, PosteriorDraws};
pub use prior::{assemble_prior, rule_prior_scale, PriorSpec};
