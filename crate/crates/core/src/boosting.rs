//! Gradient boosting on binomial deviance with regression-tree stages.
//!
//! Stage `m` fits a variance-reduction tree to the residuals `y - σ(F_{m-1})`
//! (the negative deviance gradient), replaces each leaf value with one Newton
//! step `Σ r / Σ p(1-p)`, and updates `F_m = F_{m-1} + ν · tree_m(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::logistic::sigmoid;
use crate::matrix::DesignMatrix;
use crate::tree::{fit_regression_tree, DecisionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_stages: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 5,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "boosting learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }

    fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: Some(self.max_depth),
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Log-odds of the training positive fraction.
    pub initial_score: f64,
    pub base_rate: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    pub config: BoostConfig,
}

/// Per-stage training diagnostics (not persisted).
#[derive(Debug, Clone, PartialEq)]
pub struct BoostTrace {
    /// Mean binomial deviance after each stage; entry 0 is the prior-only model.
    pub deviance: Vec<f64>,
    /// Regression targets fitted at each stage.
    pub residuals: Vec<Vec<f64>>,
}

/// Mean binomial deviance `-2/n Σ [y ln p + (1-y) ln(1-p)]` at scores `f`.
pub fn binomial_deviance(y: &[f64], f: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(f)
        .map(|(&t, &s)| {
            let softplus = if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            };
            softplus - t * s
        })
        .sum();
    2.0 * total / y.len() as f64
}

pub fn fit_gbc_traced(
    x: &DesignMatrix,
    y: &[f64],
    config: &BoostConfig,
    _seed: u64,
    exec: Exec,
) -> Result<(BoostedModel, BoostTrace)> {
    config.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pos = y.iter().filter(|&&t| t == 1.0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let base_rate = pos as f64 / y.len() as f64;
    let initial_score = (base_rate / (1.0 - base_rate)).ln();

    let mut scores = vec![initial_score; y.len()];
    let mut trace = BoostTrace {
        deviance: vec![binomial_deviance(y, &scores)],
        residuals: Vec::with_capacity(config.n_stages),
    };
    let mut trees = Vec::with_capacity(config.n_stages);
    for _ in 0..config.n_stages {
        let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
        let residuals: Vec<f64> = y.iter().zip(&probs).map(|(t, p)| t - p).collect();
        let newton = |idx: &[usize]| {
            let (num, den) = idx.iter().fold((0.0, 0.0), |(n, d), &i| {
                (n + residuals[i], d + probs[i] * (1.0 - probs[i]))
            });
            if den.abs() < 1e-150 {
                0.0
            } else {
                num / den
            }
        };
        let tree = fit_regression_tree(x, &residuals, &config.tree_config(), Some(&newton), exec)?;
        for (s, row) in scores.iter_mut().zip(x.rows()) {
            *s += config.learning_rate * tree.predict(row);
        }
        trace.deviance.push(binomial_deviance(y, &scores));
        trace.residuals.push(residuals);
        trees.push(tree);
    }
    let model = BoostedModel {
        initial_score,
        base_rate,
        learning_rate: config.learning_rate,
        trees,
        config: *config,
    };
    Ok((model, trace))
}

pub fn fit_gbc(
    x: &DesignMatrix,
    y: &[f64],
    config: &BoostConfig,
    seed: u64,
    exec: Exec,
) -> Result<BoostedModel> {
    fit_gbc_traced(x, y, config, seed, exec).map(|(m, _)| m)
}

impl BoostedModel {
    /// `σ(f)`, except that the untouched prior score maps to the stored base
    /// rate exactly (σ∘logit can be off by an ulp).
    fn link(&self, f: f64) -> f64 {
        if f == self.initial_score {
            self.base_rate
        } else {
            sigmoid(f)
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        match self.trees.first() {
            Some(t) if t.n_features != x.len() => Err(Error::LengthMismatch {
                expected: t.n_features,
                actual: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Raw scores `F_0 … F_M` for one record.
    pub fn staged_raw_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut f = self.initial_score;
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        out.push(f);
        for tree in &self.trees {
            f += self.learning_rate * tree.predict(x);
            out.push(f);
        }
        Ok(out)
    }

    /// Probabilities after each stage, starting with the prior-only model.
    pub fn staged_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .staged_raw_scores(x)?
            .into_iter()
            .map(|f| self.link(f))
            .collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let f = self
            .trees
            .iter()
            .fold(self.initial_score, |f, t| f + self.learning_rate * t.predict(x));
        Ok(self.link(f))
    }
}
