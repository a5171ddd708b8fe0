//! Decision rules harvested from trees.
//!
//! A rule is a conjunction of per-covariate interval conditions
//! `lower < x <= upper`. Path constraints on the same covariate are merged
//! into one interval, so the rule length is the number of covariates it
//! constrains.

use std::collections::HashMap;

use faer::MatRef;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Feature;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trees::{NodeKind, Tree, TreeSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// `x <= threshold`
    Le,
    /// `x > threshold`
    Gt,
}

/// `lower < x <= upper`, either bound optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub col: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub upper: Option<f64>,
}

impl Condition {
    #[inline]
    pub fn holds(&self, v: f64) -> bool {
        self.lower.is_none_or(|lo| v > lo) && self.upper.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted by column, one entry per constrained covariate.
    pub conditions: Vec<Condition>,
    /// Fraction of training rows satisfying the rule; set by [`dedup_rules`].
    pub support: f64,
    pub source: TreeSource,
}

impl Rule {
    /// Builds a rule from raw split constraints, keeping the tightest bound
    /// per covariate and direction.
    pub fn new(splits: &[(usize, Op, f64)], source: TreeSource) -> Rule {
        let mut conditions: Vec<Condition> = Vec::new();
        for &(col, op, t) in splits {
            let idx = match conditions.iter().position(|c| c.col == col) {
                Some(i) => i,
                None => {
                    conditions.push(Condition {
                        col,
                        lower: None,
                        upper: None,
                    });
                    conditions.len() - 1
                }
            };
            let c = &mut conditions[idx];
            match op {
                Op::Le => c.upper = Some(c.upper.map_or(t, |u| u.min(t))),
                Op::Gt => c.lower = Some(c.lower.map_or(t, |l| l.max(t))),
            }
        }
        conditions.sort_by_key(|c| c.col);
        Rule {
            conditions,
            support: f64::NAN,
            source,
        }
    }

    /// Number of merged conditions, `l(r)`.
    pub fn length(&self) -> usize {
        self.conditions.len()
    }

    /// Distinct covariates the rule uses, `Q`.
    pub fn covariates(&self) -> impl Iterator<Item = usize> + '_ {
        self.conditions.iter().map(|c| c.col)
    }

    #[inline]
    pub fn holds(&self, x: MatRef<'_, f64>, i: usize) -> bool {
        self.conditions.iter().all(|c| c.holds(x[(i, c.col)]))
    }

    /// Renders conditions joined by `" & "` with 6 significant digits.
    /// One-hot indicator features render as `name == level` / `name != level`.
    pub fn render(&self, features: &[Feature]) -> String {
        self.conditions
            .iter()
            .map(|c| render_condition(c, features))
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

fn render_condition(c: &Condition, features: &[Feature]) -> String {
    let feature = features.get(c.col);
    let name = feature.map_or_else(|| format!("x{}", c.col), |f| f.name.clone());
    if let Some(f @ Feature { level: Some(level), .. }) = feature {
        let base = f.name.strip_suffix(&format!("={level}")).unwrap_or(&f.name);
        let is_one = c.lower.is_some_and(|l| (0.0..1.0).contains(&l));
        let is_zero = c.upper.is_some_and(|u| (0.0..1.0).contains(&u));
        match (c.lower, c.upper) {
            (Some(_), None) if is_one => return format!("{base} == {level}"),
            (None, Some(_)) if is_zero => return format!("{base} != {level}"),
            _ => {}
        }
    }
    match (c.lower, c.upper) {
        (Some(lo), Some(hi)) => format!("{} < {} <= {}", format_sig(lo), name, format_sig(hi)),
        (Some(lo), None) => format!("{} > {}", name, format_sig(lo)),
        (None, Some(hi)) => format!("{} <= {}", name, format_sig(hi)),
        (None, None) => format!("{name} any"),
    }
}

/// Formats with 6 significant digits, trailing zeros trimmed (like `%g`
/// without the exponent form for ordinary magnitudes).
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&mag) {
        let s = format!("{v:.5e}");
        let (m, e) = s.split_once('e').unwrap();
        let m = m.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    };
    if s == "-0" {
        "0".to_owned()
    } else {
        s
    }
}

type PathStep = (usize, Op, f64);

fn walk(tree: &Tree, at: usize, path: &mut Vec<PathStep>, visit: &mut dyn FnMut(&[PathStep], &[PathStep])) {
    if let NodeKind::Split {
        col,
        threshold,
        left,
        right,
    } = tree.nodes[at].kind
    {
        path.push((col, Op::Le, threshold));
        let left_path = path.clone();
        path.pop();
        path.push((col, Op::Gt, threshold));
        let right_path = path.clone();
        path.pop();
        visit(&left_path, &right_path);
        path.push((col, Op::Le, threshold));
        walk(tree, left, path, visit);
        path.pop();
        path.push((col, Op::Gt, threshold));
        walk(tree, right, path, visit);
        path.pop();
    }
}

/// Emits one rule per internal split: the path to one of its two children,
/// picked uniformly at random. A tree with `u` leaves yields `u - 1` rules.
pub fn extract_rules(tree: &Tree, rng: &mut Rng) -> Vec<Rule> {
    let mut out = Vec::new();
    walk(tree, 0, &mut Vec::new(), &mut |left, right| {
        let chosen = if rng.random_bool(0.5) { left } else { right };
        out.push(Rule::new(chosen, tree.source));
    });
    out
}

/// Every non-root node as a rule: `2(u - 1)` rules for `u` leaves.
pub fn candidate_rules(tree: &Tree) -> Vec<Rule> {
    let mut out = Vec::new();
    walk(tree, 0, &mut Vec::new(), &mut |left, right| {
        out.push(Rule::new(left, tree.source));
        out.push(Rule::new(right, tree.source));
    });
    out
}

/// 0/1 activation of `rule` on every row of `x`.
pub fn evaluate_rule(rule: &Rule, x: MatRef<'_, f64>) -> Result<Vec<u8>> {
    if let Some(c) = rule.conditions.iter().find(|c| c.col >= x.ncols()) {
        return Err(Error::Data(format!(
            "rule references column {} but the data has {} columns",
            c.col,
            x.ncols()
        )));
    }
    Ok((0..x.nrows()).map(|i| u8::from(rule.holds(x, i))).collect())
}

/// Bit-packed activation pattern, flipped so that row 0 is always 0; a rule
/// and its complement share a key.
fn canonical_key(active: &[u8]) -> Vec<u64> {
    let flip = active.first() == Some(&1);
    let mut key = vec![0u64; active.len().div_ceil(64)];
    for (i, &a) in active.iter().enumerate() {
        if (a == 1) != flip {
            key[i / 64] |= 1 << (i % 64);
        }
    }
    key
}

/// Drops rules that are always or never active on `x`, and rules whose
/// activation duplicates (or complements) an earlier rule. On a clash the
/// shorter rule wins; equal lengths keep the earlier one, in the earlier
/// rule's position. Survivors get their `support` set.
pub fn dedup_rules(rules: Vec<Rule>, x: MatRef<'_, f64>) -> Result<Vec<Rule>> {
    let n = x.nrows();
    let activations: Vec<Vec<u8>> = rules.par_iter().map(|r| evaluate_rule(r, x)).collect::<Result<_>>()?;
    let mut kept: Vec<Rule> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for (mut rule, active) in rules.into_iter().zip(activations) {
        let count = active.iter().filter(|&&a| a == 1).count();
        if count == 0 || count == n {
            continue;
        }
        rule.support = count as f64 / n as f64;
        match seen.get(&canonical_key(&active)) {
            Some(&slot) => {
                if rule.length() < kept[slot].length() {
                    kept[slot] = rule;
                }
            }
            None => {
                seen.insert(canonical_key(&active), kept.len());
                kept.push(rule);
            }
        }
    }
    Ok(kept)
}

/// Rules from every tree with one child drawn per split, followed by
/// deduplication on `x`.
pub fn harvest_rules(trees: &[Tree], x: MatRef<'_, f64>, rng: &mut Rng) -> Result<Vec<Rule>> {
    let raw: Vec<Rule> = trees.iter().flat_map(|t| extract_rules(t, rng)).collect();
    dedup_rules(raw, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use crate::rng::rng_from;
    use crate::trees::Node;
    use faer::Mat;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn split(col: usize, threshold: f64, left: usize, right: usize, n: usize) -> Node {
        Node {
            kind: NodeKind::Split {
                col,
                threshold,
                left,
                right,
            },
            n_node: n,
        }
    }

    fn leaf(n: usize) -> Node {
        Node {
            kind: NodeKind::Leaf { prediction: 0.0 },
            n_node: n,
        }
    }

    /// A 7-leaf tree shaped like the Boston example: RM at the root, LSTAT
    /// below, then CRIM / DIS, and a second RM split on the right.
    pub(crate) fn boston_like_tree() -> Tree {
        // columns: 0 CRIM, 5 RM, 7 DIS, 12 LSTAT
        let nodes = vec![
            split(5, 6.94, 1, 2, 100),   // 0: RM
            split(12, 14.4, 3, 4, 80),   // 1: RM < 6.94 -> LSTAT
            split(5, 7.45, 5, 6, 20),    // 2: RM >= 6.94 -> RM
            split(0, 6.9, 7, 8, 50),     // 3: LSTAT < 14.4 -> CRIM
            leaf(30),                    // 4
            split(12, 9.7, 9, 10, 12),   // 5: 6.94 <= RM < 7.45 -> LSTAT
            split(7, 1.5, 11, 12, 8),    // 6: RM >= 7.45 -> DIS
            leaf(40),
            leaf(10),
            leaf(7),
            leaf(5),
            leaf(4),
            leaf(4),
        ];
        Tree {
            nodes,
            source: TreeSource::Boosting,
        }
    }

    fn boston_names() -> Vec<Feature> {
        let names: Vec<String> = [
            "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        Schema::numeric(&names).features
    }

    #[test]
    fn stump_yields_one_single_condition_rule() {
        let tree = Tree {
            nodes: vec![split(0, 0.0, 1, 2, 10), leaf(5), leaf(5)],
            source: TreeSource::RandomForest,
        };
        let rules = extract_rules(&tree, &mut rng_from(0));
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].length(), 1);
        assert_eq!(candidate_rules(&tree).len(), 2);
    }

    #[test]
    fn seven_leaf_tree_candidate_and_emitted_counts() {
        let tree = boston_like_tree();
        assert_eq!(tree.n_leaves(), 7);
        assert_eq!(candidate_rules(&tree).len(), 12);
        for seed in 0..20 {
            let emitted = extract_rules(&tree, &mut rng_from(seed));
            assert_eq!(emitted.len(), 6);
            let all = candidate_rules(&tree);
            assert!(emitted.iter().all(|r| all.iter().any(|c| c.conditions == r.conditions)));
        }
    }

    #[test]
    fn interval_merging_and_rendering() {
        let tree = boston_like_tree();
        let all = candidate_rules(&tree);
        let features = boston_names();
        let texts: Vec<String> = all.iter().map(|r| r.render(&features)).collect();
        assert!(texts.contains(&"6.94 < RM <= 7.45 & LSTAT <= 9.7".to_string()), "{texts:?}");
        let r11 = all
            .iter()
            .find(|r| r.render(&features) == "6.94 < RM <= 7.45 & LSTAT <= 9.7")
            .unwrap();
        assert_eq!(r11.length(), 2);
        assert_eq!(r11.covariates().collect::<Vec<_>>(), vec![5, 12]);

        let tighter = Rule::new(&[(0, Op::Le, 3.0), (0, Op::Le, 1.0), (1, Op::Gt, 2.0)], TreeSource::Boosting);
        assert_eq!(tighter.conditions[0].upper, Some(1.0));
        assert_eq!(tighter.length(), 2);
    }

    #[test]
    fn indicator_rendering() {
        let schema = crate::data::Schema {
            columns: vec![],
            features: vec![Feature {
                name: "b=u".into(),
                source: 0,
                level: Some("u".into()),
            }],
        };
        let on = Rule::new(&[(0, Op::Gt, 0.5)], TreeSource::Boosting);
        let off = Rule::new(&[(0, Op::Le, 0.5)], TreeSource::Boosting);
        assert_eq!(on.render(&schema.features), "b == u");
        assert_eq!(off.render(&schema.features), "b != u");
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(6.94), "6.94");
        assert_eq!(format_sig(416.5), "416.5");
        assert_eq!(format_sig(0.123456789), "0.123457");
        assert_eq!(format_sig(123456789.0), "123456789");
        assert_eq!(format_sig(1234567.4), "1234567");
        assert_eq!(format_sig(-0.5), "-0.5");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
    }

    #[test]
    fn evaluate_examples() {
        let x = Mat::from_fn(2, 1, |i, _| if i == 0 { -1.0 } else { 1.0 });
        let r = Rule::new(&[(0, Op::Le, 0.0)], TreeSource::Boosting);
        assert_eq!(evaluate_rule(&r, x.as_ref()).unwrap(), vec![1, 0]);
        let empty = Rule::new(&[(0, Op::Le, 0.0), (0, Op::Gt, 1.0)], TreeSource::Boosting);
        assert_eq!(evaluate_rule(&empty, x.as_ref()).unwrap(), vec![0, 0]);
        let bad = Rule::new(&[(3, Op::Le, 0.0)], TreeSource::Boosting);
        assert!(evaluate_rule(&bad, x.as_ref()).is_err());
    }

    #[test]
    fn dedup_examples() {
        let x = Mat::from_fn(6, 3, |i, j| match j {
            0 => i as f64,
            1 => (i % 2) as f64,
            _ => 10.0 * i as f64,
        });
        let r1 = Rule::new(&[(0, Op::Gt, 2.5)], TreeSource::Boosting);
        let r2 = Rule::new(&[(0, Op::Le, 2.5)], TreeSource::Boosting);
        let kept = dedup_rules(vec![r1.clone(), r2], x.as_ref()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].conditions, r1.conditions);
        assert_eq!(kept[0].support, 0.5);

        let always = Rule::new(&[(0, Op::Le, 100.0)], TreeSource::Boosting);
        assert!(dedup_rules(vec![always], x.as_ref()).unwrap().is_empty());

        // same activation as "x0 > 3.5", written with three conditions
        let long = Rule::new(&[(0, Op::Gt, 3.5), (1, Op::Le, 5.0), (2, Op::Gt, -1.0)], TreeSource::Boosting);
        assert_eq!(long.length(), 3);
        let short = Rule::new(&[(0, Op::Gt, 3.5)], TreeSource::RandomForest);
        let kept = dedup_rules(vec![long, short.clone()], x.as_ref()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].conditions, short.conditions);
    }

    fn random_rule(rng: &mut Rng, p: usize) -> Rule {
        let k = rng.random_range(1..4);
        let splits: Vec<(usize, Op, f64)> = (0..k)
            .map(|_| {
                let op = if rng.random_bool(0.5) { Op::Le } else { Op::Gt };
                (rng.random_range(0..p), op, rng.random_range(-1.0..1.0))
            })
            .collect();
        Rule::new(&splits, TreeSource::Boosting)
    }

    proptest! {
        #[test]
        fn conjunction_is_product_of_conditions(seed in any::<u64>()) {
            let mut rng = rng_from(seed);
            let x = Mat::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
            let splits: Vec<(usize, Op, f64)> = (0..rng.random_range(1..5))
                .map(|_| {
                    let op = if rng.random_bool(0.5) { Op::Le } else { Op::Gt };
                    (rng.random_range(0..4), op, rng.random_range(-1.0..1.0))
                })
                .collect();
            let rule = Rule::new(&splits, TreeSource::Boosting);
            let got = evaluate_rule(&rule, x.as_ref()).unwrap();
            for i in 0..30 {
                let brute = splits.iter().all(|&(c, op, t)| match op {
                    Op::Le => x[(i, c)] <= t,
                    Op::Gt => x[(i, c)] > t,
                });
                prop_assert_eq!(got[i] == 1, brute);
            }
        }

        #[test]
        fn dedup_is_idempotent(seed in any::<u64>()) {
            let mut rng = rng_from(seed);
            let x = Mat::from_fn(25, 3, |_, _| (rng.random_range(0..5) as f64) / 4.0);
            let rules: Vec<Rule> = (0..40).map(|_| random_rule(&mut rng, 3)).collect();
            let once = dedup_rules(rules, x.as_ref()).unwrap();
            let twice = dedup_rules(once.clone(), x.as_ref()).unwrap();
            prop_assert_eq!(&once, &twice);
            // no identical or complementary survivors
            let acts: Vec<Vec<u8>> = once.iter().map(|r| evaluate_rule(r, x.as_ref()).unwrap()).collect();
            for a in 0..acts.len() {
                for b in a + 1..acts.len() {
                    let same = acts[a] == acts[b];
                    let comp = acts[a].iter().zip(&acts[b]).all(|(u, v)| u != v);
                    prop_assert!(!same && !comp);
                }
            }
        }
    }
}
