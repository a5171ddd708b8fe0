//! End-to-end fit: trees, rules, design matrix, prior and Gibbs sampler.

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, Dataset, Schema, ScalingInfo, YTransform};
use crate::design::{build_design_matrix, ColumnMeta, ColumnRole};
use crate::error::{usage, Error, Result};
use crate::rng::{derive_seed, stream, STREAM_GIBBS, STREAM_RULES, STREAM_TREES};
use crate::rules::{harvest_rules, Rule};
use crate::sampler::{assemble_prior, gibbs_run, GibbsSettings, PosteriorDraws, PriorSpec};
use crate::trees::{generate_ensemble, TreeGenConfig};

/// Which encoded covariates enter as linear terms.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearTerms {
    #[default]
    All,
    None,
    /// Feature names; a categorical source name selects all its indicators.
    Columns(Vec<String>),
}

impl std::str::FromStr for LinearTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(LinearTerms::All),
            "none" => Ok(LinearTerms::None),
            "" => Err(usage("--linear needs all, none or a comma-separated column list")),
            list => Ok(LinearTerms::Columns(list.split(',').map(|c| c.trim().to_owned()).collect())),
        }
    }
}

impl LinearTerms {
    pub fn resolve(&self, schema: &Schema) -> Result<Vec<usize>> {
        match self {
            LinearTerms::All => Ok((0..schema.n_features()).collect()),
            LinearTerms::None => Ok(Vec::new()),
            LinearTerms::Columns(names) => {
                let mut out = Vec::new();
                for name in names {
                    let hits: Vec<usize> = schema
                        .features
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| &f.name == name || schema.columns[f.source].name == *name)
                        .map(|(j, _)| j)
                        .collect();
                    if hits.is_empty() {
                        return Err(usage(format!("--linear: unknown column {name:?}")));
                    }
                    out.extend(hits);
                }
                out.sort_unstable();
                out.dedup();
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub trees: TreeGenConfig,
    pub mu: f64,
    pub eta: f64,
    pub linear_scale: f64,
    pub unshrunk_linear: bool,
    pub linear: LinearTerms,
    pub y_transform: YTransform,
    pub gibbs: GibbsSettings,
    /// Keep at most this many rules after deduplication (earliest first).
    pub max_rules: Option<usize>,
    /// Master seed; trees, rule extraction and the chain use streams of it.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            trees: TreeGenConfig::default(),
            mu: 1.0,
            eta: 2.0,
            linear_scale: 1.0,
            unshrunk_linear: false,
            linear: LinearTerms::All,
            y_transform: YTransform::None,
            gibbs: GibbsSettings::default(),
            max_rules: None,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.trees.validate()?;
        self.gibbs.validate()?;
        if !(self.mu >= 0.0 && self.eta >= 0.0) {
            return Err(usage(format!("--mu and --eta must be >= 0, got {} and {}", self.mu, self.eta)));
        }
        if !(self.linear_scale > 0.0) {
            return Err(usage("--linear-scale must be > 0"));
        }
        Ok(())
    }

    /// Same configuration with every stage reseeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> FitConfig {
        FitConfig { seed, ..self.clone() }
    }
}

/// Everything needed to predict and summarize; what a model file stores.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub config: FitConfig,
    pub schema: Schema,
    pub target: String,
    pub scaling: ScalingInfo,
    pub columns: Vec<ColumnMeta>,
    pub rules: Vec<Rule>,
    pub prior: PriorSpec,
    pub draws: PosteriorDraws,
    pub n_train: usize,
    /// Rules harvested before deduplication.
    pub n_raw_rules: usize,
}

impl FittedModel {
    pub fn feature_names(&self) -> Vec<String> {
        self.schema.feature_names()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Human-readable label of design column `j`.
    pub fn column_label(&self, j: usize) -> String {
        match self.columns[j].role {
            ColumnRole::Linear(k) => self.schema.features[k].name.clone(),
            ColumnRole::Rule(r) => self.rules[r].render(&self.schema.features),
        }
    }

    /// Posterior mean coefficient of column `j` on the data scale of `x` and
    /// (transformed) `y`: `β_std * y_sd / sd_j`.
    pub fn original_scale(&self, j: usize, beta_std: f64) -> f64 {
        beta_std * self.scaling.y_sd / self.columns[j].sd
    }

    /// Standardized design for rows of `x` (encoded against `schema`).
    pub fn design(&self, x: MatRef<'_, f64>) -> Result<faer::Mat<f64>> {
        if x.ncols() != self.schema.n_features() {
            return Err(Error::Schema(format!(
                "model expects {} encoded columns, got {}",
                self.schema.n_features(),
                x.ncols()
            )));
        }
        crate::design::transform(&self.columns, &self.rules, x)
    }
}

pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<FittedModel> {
    cfg.validate()?;
    let x = data.x.as_ref();
    let std = standardize(x, &data.y, cfg.y_transform)?;

    let trees_cfg = TreeGenConfig {
        seed: derive_seed(cfg.seed, STREAM_TREES),
        ..cfg.trees.clone()
    };
    let trees = generate_ensemble(x, &std.ys, &trees_cfg)?;
    let n_raw_rules: usize = trees.iter().map(|t| t.n_leaves().saturating_sub(1)).sum();
    let mut rules = harvest_rules(&trees, x, &mut stream(cfg.seed, STREAM_RULES))?;
    if let Some(cap) = cfg.max_rules {
        rules.truncate(cap);
    }
    log::info!("{} trees, {n_raw_rules} rules harvested, {} after deduplication", trees.len(), rules.len());

    let linear_cols = cfg.linear.resolve(&data.schema)?;
    let design = build_design_matrix(rules, x, &linear_cols)?;
    if design.n_columns() == 0 {
        return Err(Error::Data("the design has no columns: no usable linear terms and no rules".into()));
    }
    let prior = assemble_prior(&design, cfg.mu, cfg.eta, cfg.linear_scale, cfg.unshrunk_linear)?;
    let gibbs = GibbsSettings {
        seed: derive_seed(cfg.seed, STREAM_GIBBS),
        ..cfg.gibbs
    };
    let draws = gibbs_run(design.z.as_ref(), &std.ys, &prior, &gibbs)?;

    Ok(FittedModel {
        config: cfg.clone(),
        schema: data.schema.clone(),
        target: data.target.clone(),
        scaling: std.scaling,
        columns: design.columns,
        rules: design.rules,
        prior,
        draws,
        n_train: data.n_rows(),
        n_raw_rules,
    })
}
