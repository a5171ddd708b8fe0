//! Posterior prediction, rule and variable importance, RuleHeat export.

use std::io::Write;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

use crate::design::ColumnRole;
use crate::error::{usage, Result};
use crate::model::FittedModel;
use crate::rng::rng_from;
use crate::rules::evaluate_rule;
use crate::sampler::conditionals::std_normal;

/// Empirical quantile with linear interpolation between order statistics
/// (the default of R's `quantile`). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Central coverage of the reported interval, e.g. 0.9.
    pub interval: Option<f64>,
    /// Add `N(0, σ²)` noise per draw, giving a predictive rather than a
    /// mean-function interval.
    pub noise: bool,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            interval: None,
            noise: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

/// Standardized-scale fitted values, rows x draws.
pub fn fitted_draws(model: &FittedModel, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let z = model.design(x)?;
    let mut f = Mat::<f64>::zeros(z.nrows(), model.draws.n_draws());
    matmul(f.as_mut(), Accum::Replace, z.as_ref(), model.draws.beta.transpose(), 1.0, Par::Seq);
    Ok(f)
}

pub fn predict(model: &FittedModel, x: MatRef<'_, f64>, opts: &PredictOptions) -> Result<Prediction> {
    if let Some(level) = opts.interval {
        if !(level > 0.0 && level < 1.0) {
            return Err(usage(format!("--interval must be in (0, 1), got {level}")));
        }
    }
    let f = fitted_draws(model, x)?;
    let (m, k) = (f.nrows(), f.ncols());
    let mut rng = rng_from(opts.seed);
    let mut mean = Vec::with_capacity(m);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for i in 0..m {
        let vals: Vec<f64> = (0..k)
            .map(|d| {
                let mut v = f[(i, d)];
                if opts.noise {
                    v += model.draws.sigma2[d].sqrt() * std_normal(&mut rng);
                }
                model.scaling.unscale_y(v)
            })
            .collect();
        mean.push(vals.iter().sum::<f64>() / k as f64);
        if let Some(level) = opts.interval {
            let s = sorted(vals);
            let tail = (1.0 - level) / 2.0;
            lower.push(quantile(&s, tail));
            upper.push(quantile(&s, 1.0 - tail));
        }
    }
    let (lower, upper) = match opts.interval {
        Some(_) => (Some(lower), Some(upper)),
        None => (None, None),
    };
    Ok(Prediction { mean, lower, upper })
}

pub fn write_predictions<W: Write>(pred: &Prediction, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match (&pred.lower, &pred.upper) {
        (Some(lo), Some(hi)) => {
            w.write_record(["prediction", "lower", "upper"])?;
            for i in 0..pred.mean.len() {
                w.write_record([pred.mean[i].to_string(), lo[i].to_string(), hi[i].to_string()])?;
            }
        }
        _ => {
            w.write_record(["prediction"])?;
            for v in &pred.mean {
                w.write_record([v.to_string()])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    /// Design column index.
    pub column: usize,
    pub label: String,
    pub i5: f64,
    pub mean: f64,
    pub i95: f64,
    /// Posterior mean coefficient on the data scale.
    pub beta_mean: f64,
}

#[derive(Debug, Clone)]
pub struct Importance {
    /// Draws x design columns, each row scaled so its maximum is 1.
    pub per_draw: Mat<f64>,
    /// One row per design column, in column order.
    pub rows: Vec<ImportanceRow>,
}

impl Importance {
    /// Rows by decreasing mean importance (column order breaks ties).
    pub fn ranked(&self) -> Vec<&ImportanceRow> {
        let mut r: Vec<&ImportanceRow> = self.rows.iter().collect();
        r.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.column.cmp(&b.column)));
        r
    }
}

/// Divides each row by its maximum; an all-zero row stays zero.
fn normalize_rows(m: &mut Mat<f64>) {
    for d in 0..m.nrows() {
        let max = (0..m.ncols()).map(|j| m[(d, j)]).fold(0.0, f64::max);
        if max > 0.0 {
            for j in 0..m.ncols() {
                m[(d, j)] /= max;
            }
        }
    }
}

/// `I_j = |coefficient_j| * sd(column_j)` per draw, normalized to a maximum
/// of 1, with the 5%, mean and 95% posterior summaries.
pub fn rule_importance(model: &FittedModel) -> Importance {
    let draws = &model.draws;
    let (k, p) = (draws.n_draws(), draws.n_columns());
    let mut per_draw = Mat::from_fn(k, p, |d, j| {
        (model.original_scale(j, draws.beta[(d, j)]) * model.columns[j].sd).abs()
    });
    normalize_rows(&mut per_draw);
    let beta_mean = draws.beta_mean();
    let rows = (0..p)
        .map(|j| {
            let s = sorted(per_draw.col(j).iter().copied().collect());
            ImportanceRow {
                column: j,
                label: model.column_label(j),
                i5: quantile(&s, 0.05),
                mean: s.iter().sum::<f64>() / k as f64,
                i95: quantile(&s, 0.95),
                beta_mean: model.original_scale(j, beta_mean[j]),
            }
        })
        .collect();
    Importance { per_draw, rows }
}

pub fn write_importance<W: Write>(rows: &[&ImportanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rule_text", "I_5", "I_mean", "I_95", "beta_mean"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.i5.to_string(),
            r.mean.to_string(),
            r.i95.to_string(),
            r.beta_mean.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableRow {
    /// Encoded feature index.
    pub feature: usize,
    pub name: String,
    pub j5: f64,
    pub median: f64,
    pub mean: f64,
    pub j95: f64,
}

#[derive(Debug, Clone)]
pub struct VariableImportance {
    /// Draws x encoded features, each row scaled to a maximum of 1.
    pub per_draw: Mat<f64>,
    pub rows: Vec<VariableRow>,
}

impl VariableImportance {
    pub fn ranked(&self) -> Vec<&VariableRow> {
        let mut r: Vec<&VariableRow> = self.rows.iter().collect();
        r.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.feature.cmp(&b.feature)));
        r
    }
}

/// `J(x_j) = I(x_j) + Σ_{l: j ∈ Q_l} I(r_l) / |Q_l|` per draw, renormalized
/// to a maximum of 1.
pub fn variable_importance(model: &FittedModel) -> VariableImportance {
    let imp = rule_importance(model);
    let k = model.draws.n_draws();
    let nf = model.schema.n_features();
    let mut per_draw = Mat::<f64>::zeros(k, nf);
    for (j, meta) in model.columns.iter().enumerate() {
        match meta.role {
            ColumnRole::Linear(f) => {
                for d in 0..k {
                    per_draw[(d, f)] += imp.per_draw[(d, j)];
                }
            }
            ColumnRole::Rule(r) => {
                let rule = &model.rules[r];
                let q = rule.length() as f64;
                for f in rule.covariates() {
                    for d in 0..k {
                        per_draw[(d, f)] += imp.per_draw[(d, j)] / q;
                    }
                }
            }
        }
    }
    normalize_rows(&mut per_draw);
    let rows = (0..nf)
        .map(|f| {
            let s = sorted(per_draw.col(f).iter().copied().collect());
            VariableRow {
                feature: f,
                name: model.schema.features[f].name.clone(),
                j5: quantile(&s, 0.05),
                median: quantile(&s, 0.5),
                mean: s.iter().sum::<f64>() / k as f64,
                j95: quantile(&s, 0.95),
            }
        })
        .collect();
    VariableImportance { per_draw, rows }
}

pub fn write_variable_importance<W: Write>(rows: &[&VariableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "J_5", "J_median", "J_mean", "J_95"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.j5.to_string(),
            r.median.to_string(),
            r.mean.to_string(),
            r.j95.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Activation matrix of the most important rules, with outcomes and the sign
/// of each rule's posterior mean coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleHeat {
    /// Design column of each exported rule, most important first.
    pub columns: Vec<usize>,
    pub labels: Vec<String>,
    pub signs: Vec<i8>,
    /// One 0/1 vector per exported rule, over the rows of `x`.
    pub activations: Vec<Vec<u8>>,
    pub outcome: Vec<f64>,
}

pub fn ruleheat_export(model: &FittedModel, x: MatRef<'_, f64>, y: &[f64], top_k: usize) -> Result<RuleHeat> {
    if top_k == 0 {
        return Err(usage("--top must be >= 1"));
    }
    if y.len() != x.nrows() {
        return Err(usage(format!("{} outcomes for {} rows", y.len(), x.nrows())));
    }
    let imp = rule_importance(model);
    let ranked: Vec<&ImportanceRow> = imp
        .ranked()
        .into_iter()
        .filter(|r| matches!(model.columns[r.column].role, ColumnRole::Rule(_)))
        .collect();
    if top_k > ranked.len() {
        return Err(usage(format!("--top {top_k} exceeds the {} rules in the model", ranked.len())));
    }
    let mut heat = RuleHeat {
        columns: Vec::new(),
        labels: Vec::new(),
        signs: Vec::new(),
        activations: Vec::new(),
        outcome: y.to_vec(),
    };
    for row in &ranked[..top_k] {
        let ColumnRole::Rule(r) = model.columns[row.column].role else {
            unreachable!()
        };
        heat.columns.push(row.column);
        heat.labels.push(row.label.clone());
        heat.signs.push(if row.beta_mean < 0.0 { -1 } else { 1 });
        heat.activations.push(evaluate_rule(&model.rules[r], x)?);
    }
    Ok(heat)
}

impl RuleHeat {
    /// Header `row,R1..Rk,outcome`, then a `sign` row, then one row per
    /// observation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.columns.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_owned()];
        header.extend((1..=k).map(|i| format!("R{i}")));
        header.push("outcome".into());
        w.write_record(&header)?;
        let mut signs = vec!["sign".to_owned()];
        signs.extend(self.signs.iter().map(|s| s.to_string()));
        signs.push(String::new());
        w.write_record(&signs)?;
        for i in 0..self.outcome.len() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(self.activations.iter().map(|a| a[i].to_string()));
            rec.push(self.outcome[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// `R<k>: <rule text>` lines mapping header ids to rules.
    pub fn legend(&self) -> String {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("R{}: {l}\n", i + 1))
            .collect()
    }
}
