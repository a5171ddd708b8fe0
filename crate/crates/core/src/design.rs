//! The standardized design matrix: linear terms first, then one indicator
//! column per rule.

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{column, is_constant, mean_sd};
use crate::error::{Error, Result};
use crate::rules::{evaluate_rule, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum ColumnRole {
    /// Linear term on encoded covariate `index`.
    Linear(usize),
    /// Indicator of rule `index` in [`DesignMatrix::rules`].
    Rule(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub role: ColumnRole,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// Rows x columns, every column with mean 0 and sample sd 1.
    pub z: Mat<f64>,
    pub columns: Vec<ColumnMeta>,
    pub rules: Vec<Rule>,
}

impl DesignMatrix {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_linear(&self) -> usize {
        self.columns.iter().filter(|c| matches!(c.role, ColumnRole::Linear(_))).count()
    }

    pub fn n_rules(&self) -> usize {
        self.columns.len() - self.n_linear()
    }

    /// Standardized design for new rows, using training means and sds.
    pub fn transform(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        transform(&self.columns, &self.rules, x)
    }
}

/// Unstandardized column `meta` evaluated on `x`.
fn raw_column(role: ColumnRole, rules: &[Rule], x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    match role {
        ColumnRole::Linear(j) => {
            if j >= x.ncols() {
                return Err(Error::Schema(format!("linear column {j} out of range for {} columns", x.ncols())));
            }
            Ok(x.col(j).iter().copied().collect())
        }
        ColumnRole::Rule(r) => Ok(evaluate_rule(&rules[r], x)?.into_iter().map(f64::from).collect()),
    }
}

pub fn transform(columns: &[ColumnMeta], rules: &[Rule], x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let cols: Vec<Vec<f64>> = columns
        .par_iter()
        .map(|c| Ok(raw_column(c.role, rules, x)?.into_iter().map(|v| (v - c.mean) / c.sd).collect()))
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(x.nrows(), columns.len(), |i, j| cols[j][i]))
}

/// Assembles the design from deduplicated rules and the requested linear
/// covariates. Constant linear covariates are skipped; a constant rule column
/// is an error since deduplication should have removed it.
pub fn build_design_matrix(rules: Vec<Rule>, x: MatRef<'_, f64>, linear_cols: &[usize]) -> Result<DesignMatrix> {
    let mut roles: Vec<ColumnRole> = Vec::new();
    for &j in linear_cols {
        if j >= x.ncols() {
            return Err(Error::Usage(format!("linear column {j} out of range")));
        }
        let (m, s) = mean_sd(&column(x, j));
        if is_constant(m, s) {
            log::info!("linear term {j} is constant and is left out");
            continue;
        }
        roles.push(ColumnRole::Linear(j));
    }
    roles.extend((0..rules.len()).map(ColumnRole::Rule));

    let raw: Vec<Vec<f64>> = roles.par_iter().map(|&r| raw_column(r, &rules, x)).collect::<Result<_>>()?;
    let mut columns = Vec::with_capacity(roles.len());
    for (role, values) in roles.iter().zip(&raw) {
        let (mean, sd) = mean_sd(values);
        if is_constant(mean, sd) {
            return Err(Error::Numeric(format!("zero-variance design column {role:?}")));
        }
        columns.push(ColumnMeta { role: *role, mean, sd });
    }
    let z = Mat::from_fn(x.nrows(), columns.len(), |i, j| (raw[j][i] - columns[j].mean) / columns[j].sd);
    Ok(DesignMatrix { z, columns, rules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{dedup_rules, extract_rules, Op};
    use crate::rng::rng_from;
    use crate::trees::{generate_ensemble, TreeGenConfig, TreeSource};
    use rand::Rng as _;

    #[test]
    fn linear_only() {
        let x = Mat::from_fn(20, 13, |i, j| ((i * 31 + j * 17) % 13) as f64);
        let d = build_design_matrix(vec![], x.as_ref(), &(0..13).collect::<Vec<_>>()).unwrap();
        assert_eq!(d.n_columns(), 13);
        assert_eq!(d.n_rules(), 0);
    }

    #[test]
    fn half_support_rule_column() {
        let x = Mat::from_fn(4, 1, |i, _| i as f64);
        let rule = Rule::new(&[(0, Op::Le, 1.5)], TreeSource::Boosting);
        let rules = dedup_rules(vec![rule], x.as_ref()).unwrap();
        let d = build_design_matrix(rules, x.as_ref(), &[]).unwrap();
        // (1,1,0,0): mean 0.5, sample sd sqrt(1/3)
        let sd = (1.0f64 / 3.0).sqrt();
        let expect = [0.5 / sd, 0.5 / sd, -0.5 / sd, -0.5 / sd];
        for i in 0..4 {
            assert!((d.z[(i, 0)] - expect[i]).abs() < 1e-12);
        }
        assert_eq!(d.rules[0].support, 0.5);
    }

    #[test]
    fn constant_linear_column_skipped_and_constant_rule_rejected() {
        let x = Mat::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let d = build_design_matrix(vec![], x.as_ref(), &[0, 1]).unwrap();
        assert_eq!(d.columns.len(), 1);
        assert_eq!(d.columns[0].role, ColumnRole::Linear(1));
        let never = Rule::new(&[(1, Op::Gt, 100.0)], TreeSource::Boosting);
        assert!(build_design_matrix(vec![never], x.as_ref(), &[]).is_err());
    }

    #[test]
    fn invariants_over_many_random_trees() {
        let mut rng = rng_from(21);
        let n = 200;
        let x = Mat::from_fn(n, 6, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] * x[(i, 1)] + rng.random_range(-0.5..0.5)).collect();
        let cfg = TreeGenConfig {
            ntree: 1000,
            seed: 4,
            ..TreeGenConfig::default()
        };
        let trees = generate_ensemble(x.as_ref(), &y, &cfg).unwrap();
        let mut rrng = rng_from(5);
        let mut raw = Vec::new();
        for t in &trees {
            let rules = extract_rules(t, &mut rrng);
            assert_eq!(rules.len(), t.n_leaves() - 1);
            raw.extend(rules);
        }
        let rules = dedup_rules(raw, x.as_ref()).unwrap();
        let m = rules.len();
        let d = build_design_matrix(rules, x.as_ref(), &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(d.n_columns(), 6 + m);
        for j in 0..d.n_columns() {
            let (mean, sd) = mean_sd(&column(d.z.as_ref(), j));
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        for (k, r) in d.rules.iter().enumerate() {
            let act = evaluate_rule(r, x.as_ref()).unwrap();
            let s = act.iter().map(|&a| a as f64).sum::<f64>() / n as f64;
            assert_eq!(s, r.support, "rule {k}");
        }
        let again = d.transform(x.as_ref()).unwrap();
        assert_eq!(again, d.z);
    }
}
