//! Regression trees and the two tree generators (random forest and
//! least-squares gradient boosting) used to harvest rules.
//!
//! Trees grow best-first: the leaf with the largest squared-error reduction
//! is split next, until the tree has as many leaves as its size budget or no
//! admissible split remains. A split is admissible only when both children
//! keep at least `n_min` rows. Rows go left when `x <= threshold`.

use faer::MatRef;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::rng::{derive_seed, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeSource {
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "gbm")]
    Boosting,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf {
        prediction: f64,
    },
    Split {
        col: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    /// Training rows (with bootstrap multiplicity) that reached this node.
    pub n_node: usize,
}

/// A fitted binary regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub source: TreeSource,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    /// Index of the leaf reached by row `i` of `x`.
    pub fn leaf_of(&self, x: MatRef<'_, f64>, i: usize) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at].kind {
                NodeKind::Leaf { .. } => return at,
                NodeKind::Split {
                    col,
                    threshold,
                    left,
                    right,
                } => at = if x[(i, col)] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, x: MatRef<'_, f64>, i: usize) -> f64 {
        match self.nodes[self.leaf_of(x, i)].kind {
            NodeKind::Leaf { prediction } => prediction,
            NodeKind::Split { .. } => unreachable!(),
        }
    }

    pub fn root_split_col(&self) -> Option<usize> {
        match self.nodes[0].kind {
            NodeKind::Split { col, .. } => Some(col),
            NodeKind::Leaf { .. } => None,
        }
    }
}

/// Draws a terminal-node budget `2 + floor(phi)` with
/// `phi ~ Exponential(mean = mean_size - 2)`. A mean size of 2 gives stumps.
pub fn sample_tree_size(mean_size: f64, rng: &mut Rng) -> Result<usize> {
    if !(mean_size >= 2.0) || !mean_size.is_finite() {
        return Err(usage(format!("mean tree size L must be >= 2, got {mean_size}")));
    }
    if mean_size == 2.0 {
        return Ok(2);
    }
    let phi: f64 = Exp::new(1.0 / (mean_size - 2.0))
        .map_err(|e| usage(e.to_string()))?
        .sample(rng);
    Ok(2 + phi.floor().min(1e6) as usize)
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    col: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(
    x: MatRef<'_, f64>,
    y: &[f64],
    rows: &[usize],
    n_min: usize,
    mtry: usize,
    rng: &mut Rng,
) -> Option<BestSplit> {
    let m = rows.len();
    if m < 2 * n_min.max(1) {
        return None;
    }
    let p = x.ncols();
    let mut cols = index::sample(rng, p, mtry.min(p)).into_vec();
    cols.sort_unstable();

    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let scale: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
    let tol = 1e-12 * scale + f64::MIN_POSITIVE;

    let mut best: Option<BestSplit> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    let lo = n_min.max(1);
    for &col in &cols {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (x[(i, col)], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for k in 1..m {
            left_sum += pairs[k - 1].1;
            if k < lo || m - k < lo || pairs[k - 1].0 >= pairs[k].0 {
                continue;
            }
            let nl = k as f64;
            let nr = (m - k) as f64;
            let diff = left_sum / nl - (total - left_sum) / nr;
            let gain = nl * nr / m as f64 * diff * diff;
            if gain > tol && best.is_none_or(|b| gain > b.gain) {
                let (a, b) = (pairs[k - 1].0, pairs[k].0);
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit { col, threshold, gain });
            }
        }
    }
    best
}

fn leaf(y: &[f64], rows: &[usize]) -> Node {
    let prediction = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64
    };
    Node {
        kind: NodeKind::Leaf { prediction },
        n_node: rows.len(),
    }
}

/// Grows one regression tree on the given rows (duplicates allowed, as in a
/// bootstrap sample). Candidate columns are resampled at every node.
pub fn fit_cart(
    x: MatRef<'_, f64>,
    y: &[f64],
    rows: &[usize],
    size_budget: usize,
    n_min: usize,
    mtry: usize,
    source: TreeSource,
    rng: &mut Rng,
) -> Result<Tree> {
    if size_budget < 2 {
        return Err(usage(format!("tree size budget must be >= 2, got {size_budget}")));
    }
    if n_min < 1 {
        return Err(usage("n_min must be >= 1"));
    }
    if mtry < 1 || mtry > x.ncols() {
        return Err(usage(format!("mtry must be in 1..={}, got {mtry}", x.ncols())));
    }

    let mut nodes = vec![leaf(y, rows)];
    // (node index, rows, best split) for every current leaf
    let mut frontier = vec![(0usize, rows.to_vec(), best_split(x, y, rows, n_min, mtry, rng))];
    let mut n_leaves = 1;
    while n_leaves < size_budget {
        let pick = frontier
            .iter()
            .enumerate()
            .filter_map(|(k, (_, _, s))| s.map(|s| (k, s.gain)))
            .fold(None::<(usize, f64)>, |acc, (k, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((k, g)),
            });
        let Some((k, _)) = pick else { break };
        let (node, node_rows, split) = frontier.swap_remove(k);
        let split = split.expect("picked a splittable leaf");
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            node_rows.iter().partition(|&&i| x[(i, split.col)] <= split.threshold);
        let left = nodes.len();
        nodes.push(leaf(y, &left_rows));
        nodes.push(leaf(y, &right_rows));
        nodes[node].kind = NodeKind::Split {
            col: split.col,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        let left_split = best_split(x, y, &left_rows, n_min, mtry, rng);
        let right_split = best_split(x, y, &right_rows, n_min, mtry, rng);
        frontier.push((left, left_rows, left_split));
        frontier.push((left + 1, right_rows, right_split));
        // keep creation order so ties resolve to the oldest leaf
        frontier.sort_by_key(|f| f.0);
        n_leaves += 1;
    }
    Ok(Tree { nodes, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeGenConfig {
    pub ntree: usize,
    /// Mean number of terminal nodes per tree (`L`).
    pub mean_size: f64,
    /// Minimum rows per node; `None` means `ceil(N^(1/3))`.
    pub n_min: Option<usize>,
    /// Fraction of trees grown by random forest; the rest are boosted.
    pub mix: f64,
    /// Candidate columns per random-forest split; `None` means `max(1, p/3)`.
    pub rf_mtry: Option<usize>,
    pub gbm_shrinkage: f64,
    pub gbm_subsample: f64,
    pub seed: u64,
}

impl Default for TreeGenConfig {
    fn default() -> Self {
        TreeGenConfig {
            ntree: 1000,
            mean_size: 5.0,
            n_min: None,
            mix: 0.3,
            rf_mtry: None,
            gbm_shrinkage: 0.1,
            gbm_subsample: 0.5,
            seed: 1,
        }
    }
}

/// `ceil(n^(1/3))`, at least 1.
pub fn default_n_min(n: usize) -> usize {
    ((n as f64).cbrt() - 1e-9).ceil().max(1.0) as usize
}

impl TreeGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_size >= 2.0) {
            return Err(usage(format!("--L must be >= 2, got {}", self.mean_size)));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(usage(format!("--mix must be in [0, 1], got {}", self.mix)));
        }
        if !(self.gbm_shrinkage > 0.0 && self.gbm_shrinkage <= 1.0) {
            return Err(usage(format!("gbm shrinkage must be in (0, 1], got {}", self.gbm_shrinkage)));
        }
        if !(self.gbm_subsample > 0.0 && self.gbm_subsample <= 1.0) {
            return Err(usage(format!("gbm subsample must be in (0, 1], got {}", self.gbm_subsample)));
        }
        if self.n_min == Some(0) {
            return Err(usage("--nmin must be >= 1"));
        }
        if self.rf_mtry == Some(0) {
            return Err(usage("mtry must be >= 1"));
        }
        Ok(())
    }

    pub fn resolved_n_min(&self, n: usize) -> usize {
        self.n_min.unwrap_or_else(|| default_n_min(n))
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.rf_mtry.unwrap_or((p / 3).max(1)).min(p)
    }

    /// Number of random-forest trees, `floor(mix * ntree)`.
    pub fn n_rf_trees(&self) -> usize {
        ((self.mix * self.ntree as f64) + 1e-9).floor() as usize
    }
}

/// Random-forest trees: bootstrap rows, `mtry` candidate columns per split,
/// a fresh size budget per tree. Tree `t` uses its own generator derived from
/// `(seed, t)`, so trees can be grown in parallel.
pub fn generate_rf_trees(x: MatRef<'_, f64>, y: &[f64], count: usize, cfg: &TreeGenConfig, seed: u64) -> Result<Vec<Tree>> {
    let n = x.nrows();
    let n_min = cfg.resolved_n_min(n);
    let mtry = cfg.resolved_mtry(x.ncols());
    (0..count)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, t as u64);
            let budget = sample_tree_size(cfg.mean_size, &mut rng)?;
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_cart(x, y, &rows, budget, n_min, mtry, TreeSource::RandomForest, &mut rng)
        })
        .collect()
}

/// Draws the subsample (without replacement, sorted) used by a boosted tree.
pub fn boosting_rows(n: usize, subsample: f64, rng: &mut Rng) -> Vec<usize> {
    let k = ((subsample * n as f64).floor() as usize).clamp(1, n);
    let mut rows = if k == n {
        (0..n).collect()
    } else {
        index::sample(rng, n, k).into_vec()
    };
    rows.sort_unstable();
    rows
}

/// Least-squares gradient boosting. Each tree is fit to the current residuals
/// on a row subsample with all columns as candidates, then the residuals are
/// updated on every row by the shrunken tree prediction. Only the trees are
/// returned.
pub fn generate_gbm_trees(x: MatRef<'_, f64>, y: &[f64], count: usize, cfg: &TreeGenConfig, seed: u64) -> Result<Vec<Tree>> {
    let n = x.nrows();
    let n_min = cfg.resolved_n_min(n);
    let mut residual = y.to_vec();
    let mut trees = Vec::with_capacity(count);
    for t in 0..count {
        let mut rng = stream(seed, t as u64);
        let budget = sample_tree_size(cfg.mean_size, &mut rng)?;
        let rows = boosting_rows(n, cfg.gbm_subsample, &mut rng);
        let tree = fit_cart(x, &residual, &rows, budget, n_min, x.ncols(), TreeSource::Boosting, &mut rng)?;
        for (i, r) in residual.iter_mut().enumerate() {
            *r -= cfg.gbm_shrinkage * tree.predict_row(x, i);
        }
        trees.push(tree);
    }
    Ok(trees)
}

/// `floor(mix * ntree)` random-forest trees followed by boosted trees.
pub fn generate_ensemble(x: MatRef<'_, f64>, y: &[f64], cfg: &TreeGenConfig) -> Result<Vec<Tree>> {
    cfg.validate()?;
    let n_rf = cfg.n_rf_trees();
    let mut trees = generate_rf_trees(x, y, n_rf, cfg, derive_seed(cfg.seed, 0x7266))?;
    trees.extend(generate_gbm_trees(x, y, cfg.ntree - n_rf, cfg, derive_seed(cfg.seed, 0x6762))?);
    Ok(trees)
}
