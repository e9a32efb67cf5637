//! Binary CART trees shared by the forest (Gini classification trees) and
//! the boosting stages (variance-reduction regression trees).
//!
//! Candidate thresholds are midpoints between consecutive distinct values;
//! rows with `x <= threshold` go left. Among equal gains the lowest feature
//! index, then the lowest threshold, wins.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    /// `value` is P(transplanted) in a classification tree and the fitted
    /// output in a regression tree.
    Leaf { value: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// A tree that is a single leaf.
    pub fn leaf(n_features: usize, value: f64) -> Self {
        DecisionTree {
            n_features,
            nodes: vec![Node::Leaf { value, samples: 0 }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Impurity {
    /// `1 - p² - (1-p)²` for 0/1 targets.
    Gini,
    /// Mean squared deviation from the node mean.
    Variance,
}

impl Impurity {
    fn of(self, count: f64, sum: f64, sum_sq: f64) -> f64 {
        if count == 0.0 {
            return 0.0;
        }
        let mean = sum / count;
        match self {
            Impurity::Gini => 2.0 * mean * (1.0 - mean),
            Impurity::Variance => (sum_sq / count - mean * mean).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Leaf-value rule for regression trees, given the row indices in the leaf.
pub type LeafRule<'a> = &'a (dyn Fn(&[usize]) -> f64 + Sync);

pub(crate) struct TreeBuilder<'a> {
    pub x: &'a DesignMatrix,
    pub y: &'a [f64],
    pub impurity: Impurity,
    pub config: TreeConfig,
    /// Features sampled per split; `None` considers all.
    pub mtry: Option<usize>,
    pub exec: Exec,
    pub leaf_rule: Option<LeafRule<'a>>,
}

impl TreeBuilder<'_> {
    fn stats(&self, idx: &[usize]) -> (f64, f64, f64) {
        idx.iter().fold((0.0, 0.0, 0.0), |(c, s, q), &i| {
            let v = self.y[i];
            (c + 1.0, s + v, q + v * v)
        })
    }

    fn node_impurity(&self, idx: &[usize]) -> f64 {
        let (c, s, q) = self.stats(idx);
        self.impurity.of(c, s, q)
    }

    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.leaf_rule {
            Some(rule) => rule(idx),
            None => {
                let (c, s, _) = self.stats(idx);
                s / c
            }
        }
    }

    /// Best split of `idx` on one feature, or `None` if no threshold
    /// satisfies `min_samples_leaf`.
    fn best_on_feature(&self, idx: &[usize], feature: usize, parent: f64) -> Option<SplitCandidate> {
        let mut sorted: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| (self.x.get(i, feature), self.y[i]))
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let (_, total_s, total_q) = self.stats(idx);
        let min_leaf = self.config.min_samples_leaf;
        let (mut ls, mut lq) = (0.0, 0.0);
        let mut best: Option<SplitCandidate> = None;
        for i in 1..n {
            let (prev, yv) = sorted[i - 1];
            ls += yv;
            lq += yv * yv;
            let next = sorted[i].0;
            if prev == next || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let (nl, nr) = (i as f64, (n - i) as f64);
            let child = (nl * self.impurity.of(nl, ls, lq)
                + nr * self.impurity.of(nr, total_s - ls, total_q - lq))
                / n as f64;
            let gain = parent - child;
            if best.is_none_or(|b| gain > b.gain) {
                let mid = prev + (next - prev) / 2.0;
                let threshold = if mid < next { mid } else { prev };
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    /// Best split over `features` (ascending), ties to the earliest.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<SplitCandidate> {
        let parent = self.node_impurity(idx);
        let per_feature = self
            .exec
            .map(features.len(), |k| self.best_on_feature(idx, features[k], parent));
        per_feature
            .into_iter()
            .flatten()
            .fold(None, |best: Option<SplitCandidate>, c| match best {
                Some(b) if c.gain <= b.gain => Some(b),
                _ => Some(c),
            })
    }

    fn candidate_features<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let d = self.x.n_cols();
        match self.mtry {
            Some(m) if m < d => {
                let mut all: Vec<usize> = (0..d).collect();
                // Partial Fisher–Yates: the first m slots become the sample.
                for i in 0..m {
                    let j = rng.random_range(i..d);
                    all.swap(i, j);
                }
                let mut chosen = all[..m].to_vec();
                let mut rest = all[m..].to_vec();
                chosen.sort_unstable();
                rest.sort_unstable();
                (chosen, rest)
            }
            _ => ((0..d).collect(), Vec::new()),
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, idx: Vec<usize>, rng: &mut R) -> Result<DecisionTree> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.config.validate()?;
        let mut nodes = Vec::new();
        self.grow(idx, 0, &mut nodes, rng);
        Ok(DecisionTree {
            n_features: self.x.n_cols(),
            nodes,
        })
    }

    fn grow<R: Rng + ?Sized>(
        &self,
        idx: Vec<usize>,
        depth: usize,
        nodes: &mut Vec<Node>,
        rng: &mut R,
    ) -> usize {
        let at = nodes.len();
        let leaf = Node::Leaf {
            value: self.leaf_value(&idx),
            samples: idx.len(),
        };
        let stop = self.node_impurity(&idx) == 0.0
            || self.config.max_depth.is_some_and(|d| depth >= d)
            || idx.len() < 2 * self.config.min_samples_leaf;
        if stop {
            nodes.push(leaf);
            return at;
        }
        let (chosen, rest) = self.candidate_features(rng);
        let split = self
            .best_split(&idx, &chosen)
            .or_else(|| self.best_split(&idx, &rest));
        let Some(split) = split else {
            nodes.push(leaf);
            return at;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
        nodes.push(leaf); // placeholder, replaced below
        let left = self.grow(left_idx, depth + 1, nodes, rng);
        let right = self.grow(right_idx, depth + 1, nodes, rng);
        nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left,
            right,
        };
        at
    }
}

fn check_xy(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Gini classification tree over all rows and all features.
pub fn fit_tree(x: &DesignMatrix, y: &[f64], config: &TreeConfig) -> Result<DecisionTree> {
    check_xy(x, y)?;
    let builder = TreeBuilder {
        x,
        y,
        impurity: Impurity::Gini,
        config: *config,
        mtry: None,
        exec: Exec::Sequential,
        leaf_rule: None,
    };
    // No feature sampling, so the generator is never drawn from.
    builder.build((0..x.n_rows()).collect(), &mut crate::rng::rng_from(0))
}

/// Variance-reduction regression tree on `targets`; leaf outputs come from
/// `leaf_rule` (the mean target when `None`).
pub fn fit_regression_tree(
    x: &DesignMatrix,
    targets: &[f64],
    config: &TreeConfig,
    leaf_rule: Option<LeafRule<'_>>,
    exec: Exec,
) -> Result<DecisionTree> {
    check_xy(x, targets)?;
    let builder = TreeBuilder {
        x,
        y: targets,
        impurity: Impurity::Variance,
        config: *config,
        mtry: None,
        exec,
        leaf_rule,
    };
    builder.build((0..x.n_rows()).collect(), &mut crate::rng::rng_from(0))
}

/// Gini impurity `2p(1-p)` of a set of 0/1 labels.
pub fn gini(labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    let s: f64 = labels.iter().sum();
    Impurity::Gini.of(n, s, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_data_gives_root_leaf() {
        let x = DesignMatrix::from_rows(&[vec![0.1], vec![0.7], vec![0.3]]).unwrap();
        let t = fit_tree(&x, &[1.0, 1.0, 1.0], &TreeConfig::default()).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.predict(&[0.5]), 1.0);
    }

    #[test]
    fn perfect_binary_split_gains_parent_impurity() {
        let x = DesignMatrix::from_rows(&[
            vec![0.3, 0.0],
            vec![0.9, 1.0],
            vec![0.1, 1.0],
            vec![0.5, 0.0],
            vec![0.7, 1.0],
        ])
        .unwrap();
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let t = fit_tree(&x, &y, &TreeConfig::default()).unwrap();
        assert_eq!(t.depth(), 1);
        match t.nodes[0] {
            Node::Split {
                feature,
                threshold,
                gain,
                ..
            } => {
                assert_eq!(feature, 1);
                assert_eq!(threshold, 0.5);
                assert_eq!(gain, gini(&y));
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn xor_is_learned_at_depth_two() {
        let x = DesignMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let y = [0.0, 1.0, 1.0, 0.0];
        let t = fit_tree(
            &x,
            &y,
            &TreeConfig {
                max_depth: Some(2),
                min_samples_leaf: 1,
            },
        )
        .unwrap();
        for (row, &label) in x.rows().zip(&y) {
            assert_eq!(t.predict(row), label);
        }
        // Zero-gain root split: the tie rule picks feature 0.
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        let x = DesignMatrix::from_rows(&rows).unwrap();
        let t = fit_tree(
            &x,
            &y,
            &TreeConfig {
                max_depth: Some(3),
                min_samples_leaf: 1,
            },
        )
        .unwrap();
        assert_eq!(t.depth(), 3);
        assert!(t.n_leaves() <= 8);
    }

    #[test]
    fn min_samples_leaf_respected() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let x = DesignMatrix::from_rows(&rows).unwrap();
        let t = fit_tree(
            &x,
            &y,
            &TreeConfig {
                max_depth: None,
                min_samples_leaf: 4,
            },
        )
        .unwrap();
        for node in &t.nodes {
            if let Node::Leaf { samples, .. } = node {
                assert!(*samples >= 4);
            }
        }
    }

    #[test]
    fn empty_rejected() {
        let x = DesignMatrix::from_flat(0, 2, vec![]).unwrap();
        assert!(matches!(
            fit_tree(&x, &[], &TreeConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn regression_tree_uses_leaf_rule() {
        let x = DesignMatrix::from_rows(&[vec![0.0], vec![0.1], vec![0.9], vec![1.0]]).unwrap();
        let r = [-1.0, -1.0, 2.0, 2.0];
        let rule = |idx: &[usize]| idx.len() as f64;
        let t = fit_regression_tree(&x, &r, &TreeConfig::default(), Some(&rule), Exec::Sequential)
            .unwrap();
        assert_eq!(t.predict(&[0.0]), 2.0);
        let t = fit_regression_tree(&x, &r, &TreeConfig::default(), None, Exec::Parallel).unwrap();
        assert_eq!(t.predict(&[0.05]), -1.0);
        assert_eq!(t.predict(&[0.95]), 2.0);
    }
}
