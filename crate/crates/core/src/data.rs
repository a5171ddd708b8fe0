//! Dataset ingestion, one-hot encoding, standardization and fold construction.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// A raw input column as it appears in the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted category levels; empty for numeric columns.
    pub levels: Vec<String>,
}

/// One encoded model column. Categorical sources expand to one indicator
/// feature per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub source: usize,
    pub level: Option<String>,
}

impl Feature {
    pub fn is_indicator(&self) -> bool {
        self.level.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<SourceColumn>,
    pub features: Vec<Feature>,
}

impl Schema {
    /// Schema with one numeric feature per name.
    pub fn numeric(names: &[String]) -> Self {
        let columns = names
            .iter()
            .map(|n| SourceColumn {
                name: n.clone(),
                kind: ColumnKind::Numeric,
                levels: Vec::new(),
            })
            .collect();
        let features = names
            .iter()
            .enumerate()
            .map(|(i, n)| Feature {
                name: n.clone(),
                source: i,
                level: None,
            })
            .collect();
        Schema { columns, features }
    }

    fn from_columns(columns: Vec<SourceColumn>) -> Self {
        let mut features = Vec::new();
        for (i, c) in columns.iter().enumerate() {
            match c.kind {
                ColumnKind::Numeric => features.push(Feature {
                    name: c.name.clone(),
                    source: i,
                    level: None,
                }),
                ColumnKind::Categorical => {
                    for level in &c.levels {
                        features.push(Feature {
                            name: format!("{}={}", c.name, level),
                            source: i,
                            level: Some(level.clone()),
                        });
                    }
                }
            }
        }
        Schema { columns, features }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Encodes a CSV against this (training) schema. The target column is
    /// optional here; when present and numeric it is returned.
    ///
    /// Unseen category levels encode as all-zero indicators with a warning.
    pub fn encode_csv(&self, path: &Path, target: Option<&str>) -> Result<(Mat<f64>, Option<Vec<f64>>)> {
        let table = read_table(path)?;
        let mut positions = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            let pos = table
                .header
                .iter()
                .position(|h| h == &c.name)
                .ok_or_else(|| Error::Schema(format!("column {:?} missing from {}", c.name, path.display())))?;
            positions.push(pos);
        }
        let n = table.rows.len();
        let mut x = Mat::<f64>::zeros(n, self.features.len());
        let mut warned = BTreeSet::new();
        for (i, row) in table.rows.iter().enumerate() {
            for (f, feat) in self.features.iter().enumerate() {
                let col = &self.columns[feat.source];
                let cell = &row[positions[feat.source]];
                check_missing(cell, i, &col.name)?;
                x[(i, f)] = match &feat.level {
                    None => parse_cell(cell, i, &col.name)?,
                    Some(level) => {
                        if !col.levels.iter().any(|l| l == cell) && warned.insert((col.name.clone(), cell.clone())) {
                            log::warn!("unseen level {:?} in column {:?}; encoded as all-zero indicators", cell, col.name);
                        }
                        if cell == level {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        let y = match target.and_then(|t| table.header.iter().position(|h| h == t)) {
            Some(pos) => {
                let name = &table.header[pos];
                let mut y = Vec::with_capacity(n);
                for (i, row) in table.rows.iter().enumerate() {
                    check_missing(&row[pos], i, name)?;
                    y.push(parse_cell(&row[pos], i, name)?);
                }
                Some(y)
            }
            None => None,
        };
        Ok((x, y))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub target: String,
}

impl Dataset {
    /// Builds an all-numeric dataset from an in-memory matrix.
    pub fn from_matrix(names: Vec<String>, x: Mat<f64>, y: Vec<f64>, target: impl Into<String>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(Error::Data(format!("{} names for {} columns", names.len(), x.ncols())));
        }
        if y.len() != x.nrows() {
            return Err(Error::Data(format!("{} responses for {} rows", y.len(), x.nrows())));
        }
        if x.nrows() < 2 || x.ncols() < 1 {
            return Err(Error::Data("need at least 2 rows and 1 column".into()));
        }
        Ok(Dataset {
            schema: Schema::numeric(&names),
            x,
            y,
            target: target.into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.feature_names()
    }

    /// Row subset, keeping the schema.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            x: select_rows(self.x.as_ref(), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            target: self.target.clone(),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() {
        return Err(Error::Data(format!("{}: empty header", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(str::to_owned).collect());
    }
    Ok(Table { header, rows })
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn check_missing(cell: &str, row: usize, column: &str) -> Result<()> {
    if is_missing(cell) {
        return Err(Error::Missing {
            row: row + 1,
            column: column.to_owned(),
        });
    }
    Ok(())
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Unparseable {
            row: row + 1,
            column: column.to_owned(),
            value: cell.to_owned(),
        }),
    }
}

/// Reads a CSV with a header row. Columns whose every cell parses as a
/// number are numeric, everything else is categorical unless `overrides`
/// says otherwise. Rows are numbered from 1 (the first data row) in errors.
pub fn load_csv(path: impl AsRef<Path>, target: &str, overrides: &HashMap<String, ColumnKind>) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let target_pos = table
        .header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::TargetNotFound(target.to_owned()))?;

    let mut y = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        check_missing(&row[target_pos], i, target)?;
        y.push(parse_cell(&row[target_pos], i, target)?);
    }

    let mut columns = Vec::new();
    let mut positions = Vec::new();
    for (pos, name) in table.header.iter().enumerate() {
        if pos == target_pos {
            continue;
        }
        for (i, row) in table.rows.iter().enumerate() {
            check_missing(&row[pos], i, name)?;
        }
        let kind = match overrides.get(name) {
            Some(&k) => k,
            None if table.rows.iter().all(|r| r[pos].parse::<f64>().is_ok_and(f64::is_finite)) => ColumnKind::Numeric,
            None => ColumnKind::Categorical,
        };
        let levels = match kind {
            ColumnKind::Numeric => Vec::new(),
            ColumnKind::Categorical => table
                .rows
                .iter()
                .map(|r| r[pos].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        columns.push(SourceColumn {
            name: name.clone(),
            kind,
            levels,
        });
        positions.push(pos);
    }

    let schema = Schema::from_columns(columns);
    let n = table.rows.len();
    let mut x = Mat::<f64>::zeros(n, schema.features.len());
    for (f, feat) in schema.features.iter().enumerate() {
        let pos = positions[feat.source];
        let name = &schema.columns[feat.source].name;
        for (i, row) in table.rows.iter().enumerate() {
            x[(i, f)] = match &feat.level {
                None => parse_cell(&row[pos], i, name)?,
                Some(level) => f64::from(u8::from(&row[pos] == level)),
            };
        }
    }

    if n < 2 || x.ncols() < 1 {
        return Err(Error::Data(format!(
            "{}: need at least 2 rows and 1 covariate, found {} rows and {} covariates",
            path.display(),
            n,
            x.ncols()
        )));
    }
    Ok(Dataset {
        schema,
        x,
        y,
        target: target.to_owned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YTransform {
    #[default]
    None,
    Log,
}

impl std::str::FromStr for YTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(YTransform::None),
            "log" => Ok(YTransform::Log),
            other => Err(Error::Usage(format!("--ytransform must be none or log, got {other:?}"))),
        }
    }
}

/// Column and response scaling learned on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub col_means: Vec<f64>,
    /// Sample standard deviations; 0 for constant columns.
    pub col_sds: Vec<f64>,
    pub constant_columns: Vec<usize>,
    pub y_mean: f64,
    pub y_sd: f64,
    pub y_transform: YTransform,
}

pub struct Standardized {
    pub xs: Mat<f64>,
    pub ys: Vec<f64>,
    pub scaling: ScalingInfo,
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, sd)
}

pub(crate) fn column(x: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    x.col(j).iter().copied().collect()
}

pub(crate) fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE)
}

/// Centers and scales every column of `x` and the response.
///
/// Constant columns are left out of `xs` and listed in
/// `scaling.constant_columns`.
pub fn standardize(x: MatRef<'_, f64>, y: &[f64], y_transform: YTransform) -> Result<Standardized> {
    if y.len() != x.nrows() {
        return Err(Error::Data(format!("{} responses for {} rows", y.len(), x.nrows())));
    }
    let ty: Vec<f64> = match y_transform {
        YTransform::None => y.to_vec(),
        YTransform::Log => {
            if y.iter().any(|&v| v <= 0.0) {
                return Err(Error::NonPositiveResponse);
            }
            y.iter().map(|v| v.ln()).collect()
        }
    };
    let (y_mean, y_sd) = mean_sd(&ty);
    if is_constant(y_mean, y_sd) {
        return Err(Error::ConstantResponse);
    }

    let p = x.ncols();
    let mut col_means = Vec::with_capacity(p);
    let mut col_sds = Vec::with_capacity(p);
    let mut constant_columns = Vec::new();
    for j in 0..p {
        let (m, s) = mean_sd(&column(x, j));
        col_means.push(m);
        if is_constant(m, s) {
            constant_columns.push(j);
            col_sds.push(0.0);
        } else {
            col_sds.push(s);
        }
    }
    let scaling = ScalingInfo {
        col_means,
        col_sds,
        constant_columns,
        y_mean,
        y_sd,
        y_transform,
    };
    let xs = scaling.scale_x(x);
    let ys = scaling.scale_y(y);
    Ok(Standardized { xs, ys, scaling })
}

impl ScalingInfo {
    pub fn kept_columns(&self) -> Vec<usize> {
        (0..self.col_sds.len()).filter(|&j| self.col_sds[j] > 0.0).collect()
    }

    /// Standardizes the kept columns of `x`.
    pub fn scale_x(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let kept = self.kept_columns();
        Mat::from_fn(x.nrows(), kept.len(), |i, k| {
            let j = kept[k];
            (x[(i, j)] - self.col_means[j]) / self.col_sds[j]
        })
    }

    /// Inverse of [`scale_x`](Self::scale_x); constant columns are restored
    /// to their constant value.
    pub fn unscale_x(&self, xs: MatRef<'_, f64>) -> Mat<f64> {
        let kept = self.kept_columns();
        let mut x = Mat::from_fn(xs.nrows(), self.col_means.len(), |_, j| self.col_means[j]);
        for (k, &j) in kept.iter().enumerate() {
            for i in 0..xs.nrows() {
                x[(i, j)] = xs[(i, k)] * self.col_sds[j] + self.col_means[j];
            }
        }
        x
    }

    pub fn scale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|&v| {
                let t = match self.y_transform {
                    YTransform::None => v,
                    YTransform::Log => v.ln(),
                };
                (t - self.y_mean) / self.y_sd
            })
            .collect()
    }

    /// Maps a standardized-scale value back to the response scale.
    pub fn unscale_y(&self, v: f64) -> f64 {
        let t = v * self.y_sd + self.y_mean;
        match self.y_transform {
            YTransform::None => t,
            YTransform::Log => t.exp(),
        }
    }
}

pub fn select_rows(x: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled k-fold split of `0..n`. Test folds differ in size by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::Usage(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::rng_from(seed));
    let mut assignment = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..n).filter(|&i| assignment[i] != f).collect(),
            test: (0..n).filter(|&i| assignment[i] == f).collect(),
        })
        .collect())
}
