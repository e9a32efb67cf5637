//! Random forest: bootstrap samples, unpruned Gini trees with per-split
//! feature sampling, and soft-vote aggregation.
//!
//! Each tree draws from its own ChaCha8 stream derived from `(seed, tree)`,
//! so sequential and parallel builds produce identical forests.

mod importance;

pub use importance::{importance_csv, oob_importance, ImportanceEntry, ImportanceRanking};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::DesignMatrix;
use crate::rng;
use crate::tree::{DecisionTree, Impurity, TreeBuilder, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_tree: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Debug switch: when false every tree sees the full training set once.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_tree: 500,
            mtry: None,
            max_depth: None,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_tree == 0 {
            return Err(Error::InvalidConfig("n_tree must be >= 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(Error::InvalidConfig(format!(
                    "mtry must lie in 1..={n_features}, got {m}"
                )));
            }
        }
        self.tree_config().validate()
    }

    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub seed: u64,
    pub mtry: usize,
    pub config: ForestConfig,
    /// Sorted distinct training rows drawn into each tree's bootstrap sample.
    pub in_bag: Vec<Vec<usize>>,
    pub n_train: usize,
}

/// Size-`n` bootstrap sample (with replacement).
pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn fit_forest(
    x: &DesignMatrix,
    y: &[f64],
    config: &ForestConfig,
    seed: u64,
    exec: Exec,
) -> Result<ForestModel> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate(x.n_cols())?;
    let n = x.n_rows();
    let mtry = config.resolved_mtry(x.n_cols());
    let builder = TreeBuilder {
        x,
        y,
        impurity: Impurity::Gini,
        config: config.tree_config(),
        mtry: Some(mtry),
        exec: Exec::Sequential,
        leaf_rule: None,
    };
    let built = exec.map(config.n_tree, |t| {
        let mut rng = rng::stream(seed, &[t as u64]);
        let sample = if config.bootstrap {
            bootstrap_sample(n, &mut rng)
        } else {
            (0..n).collect()
        };
        let mut in_bag = sample.clone();
        in_bag.sort_unstable();
        in_bag.dedup();
        builder.build(sample, &mut rng).map(|tree| (tree, in_bag))
    });
    let mut trees = Vec::with_capacity(config.n_tree);
    let mut in_bag = Vec::with_capacity(config.n_tree);
    for result in built {
        let (tree, bag) = result?;
        trees.push(tree);
        in_bag.push(bag);
    }
    Ok(ForestModel {
        trees,
        seed,
        mtry,
        config: *config,
        in_bag,
        n_train: n,
    })
}

impl ForestModel {
    /// Mean of the trees' leaf probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let d = self.trees.first().map_or(0, |t| t.n_features);
        if x.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Training rows not drawn into tree `t`'s bootstrap sample.
    pub fn out_of_bag(&self, t: usize) -> Vec<usize> {
        let bag = &self.in_bag[t];
        let mut k = 0;
        (0..self.n_train)
            .filter(|&i| {
                while k < bag.len() && bag[k] < i {
                    k += 1;
                }
                !(k < bag.len() && bag[k] == i)
            })
            .collect()
    }
}

/// Out-of-bag estimate of the misclassification rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobError {
    pub error: f64,
    /// Rows with at least one out-of-bag tree.
    pub n_scored: usize,
}

/// Each row is scored by the mean probability of the trees that did not
/// see it, and classified positive at `>= 0.5`.
pub fn oob_error(model: &ForestModel, x: &DesignMatrix, y: &[f64]) -> Result<OobError> {
    let n = model.n_train;
    if x.n_rows() != n || y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: x.n_rows(),
        });
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (t, tree) in model.trees.iter().enumerate() {
        for i in model.out_of_bag(t) {
            sum[i] += tree.predict(x.row(i));
            count[i] += 1;
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| count[i] > 0).collect();
    if scored.is_empty() {
        return Err(Error::InsufficientData(
            "no row is out-of-bag for any tree".into(),
        ));
    }
    let wrong = scored
        .iter()
        .filter(|&&i| {
            let p = sum[i] / count[i] as f64;
            (p >= 0.5) != (y[i] == 1.0)
        })
        .count();
    Ok(OobError {
        error: wrong as f64 / scored.len() as f64,
        n_scored: scored.len(),
    })
}
