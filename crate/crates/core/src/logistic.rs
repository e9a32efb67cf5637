//! Logistic regression fit by full-batch gradient descent, with Wald
//! inference on the fitted coefficients.
//!
//! The model is `P(transplanted | x) = σ(w0 + Σ w_i x_i)`. Writing the
//! probability with the exponential in the denominator and negated weights
//! gives the same family.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matrix::DesignMatrix;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;
/// p-values below this mark a feature as important.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient's ∞-norm falls below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            // Features live in [0, 1], so the Hessian of the mean loss is at
            // most (1 + d) / 4; backtracking absorbs any overshoot.
            learning_rate: 4.0,
            max_iters: 5000,
            tolerance: 1e-8,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "logistic learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::InvalidConfig("logistic tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub training: TrainingInfo,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn score(intercept: f64, weights: &[f64], x: &[f64]) -> f64 {
    intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// Mean negative log-likelihood of the Bernoulli model.
pub fn mean_nll(intercept: f64, weights: &[f64], x: &DesignMatrix, y: &[f64]) -> f64 {
    let total: f64 = x
        .rows()
        .zip(y)
        .map(|(row, &t)| {
            let z = score(intercept, weights, row);
            softplus(z) - t * z
        })
        .sum();
    total / x.n_rows() as f64
}

/// Gradient of [`mean_nll`]; entry 0 is the intercept.
pub fn nll_gradient(intercept: f64, weights: &[f64], x: &DesignMatrix, y: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; weights.len() + 1];
    for (row, &t) in x.rows().zip(y) {
        let r = sigmoid(score(intercept, weights, row)) - t;
        g[0] += r;
        for (gj, v) in g[1..].iter_mut().zip(row) {
            *gj += r * v;
        }
    }
    let n = x.n_rows() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn check_training(x: &DesignMatrix, y: &[f64]) -> Result<()> {
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
    Ok(())
}

/// Fits from zero weights. Returns the model and the loss after every
/// accepted step (entry 0 is the initial loss).
pub fn fit_logistic_traced(
    x: &DesignMatrix,
    y: &[f64],
    config: &LogisticConfig,
) -> Result<(LogisticModel, Vec<f64>)> {
    config.validate()?;
    check_training(x, y)?;

    let mut intercept = 0.0;
    let mut weights = vec![0.0; x.n_cols()];
    let mut loss = mean_nll(intercept, &weights, x, y);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let grad = nll_gradient(intercept, &weights, x, y);
        let norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if norm < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        // Start from the configured rate; halve until the loss stops increasing.
        let mut step = config.learning_rate;
        loop {
            let cand_b = intercept - step * grad[0];
            let cand_w: Vec<f64> = weights
                .iter()
                .zip(&grad[1..])
                .map(|(w, g)| w - step * g)
                .collect();
            let cand_loss = mean_nll(cand_b, &cand_w, x, y);
            if !cand_loss.is_finite() {
                return Err(Error::Diverged {
                    learning_rate: config.learning_rate,
                });
            }
            if cand_loss <= loss {
                intercept = cand_b;
                weights = cand_w;
                loss = cand_loss;
                trace.push(loss);
                break;
            }
            step /= 2.0;
            if step < config.learning_rate * 1e-30 {
                // No descent possible at machine precision.
                let model = LogisticModel {
                    intercept,
                    weights,
                    training: TrainingInfo {
                        iterations,
                        final_loss: loss,
                        converged: false,
                    },
                };
                return Ok((model, trace));
            }
        }
    }
    if !converged {
        let grad = nll_gradient(intercept, &weights, x, y);
        converged = grad.iter().all(|g| g.abs() < config.tolerance);
    }
    let model = LogisticModel {
        intercept,
        weights,
        training: TrainingInfo {
            iterations,
            final_loss: loss,
            converged,
        },
    };
    Ok((model, trace))
}

pub fn fit_logistic(x: &DesignMatrix, y: &[f64], config: &LogisticConfig) -> Result<LogisticModel> {
    fit_logistic_traced(x, y, config).map(|(m, _)| m)
}

impl LogisticModel {
    /// Zero-weight model over `n_features` features.
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            intercept: 0.0,
            weights: vec![0.0; n_features],
            training: TrainingInfo {
                iterations: 0,
                final_loss: 0.0,
                converged: false,
            },
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(sigmoid(score(self.intercept, &self.weights, x)))
    }

    /// `(P(discarded), P(transplanted))`.
    pub fn class_probabilities(&self, x: &[f64]) -> Result<(f64, f64)> {
        let p1 = self.predict_proba(x)?;
        Ok((1.0 - p1, p1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRow {
    pub feature: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub odds_ratio: f64,
    pub important: bool,
}

impl InferenceRow {
    /// Builds a row from a coefficient and its standard error.
    pub fn from_estimate(feature: &str, coefficient: f64, std_error: f64) -> Self {
        let z = coefficient / std_error;
        let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
        InferenceRow {
            feature: feature.to_string(),
            coefficient,
            std_error,
            z,
            p_value,
            ci_low: coefficient - Z_95 * std_error,
            ci_high: coefficient + Z_95 * std_error,
            odds_ratio: coefficient.exp(),
            important: p_value < SIGNIFICANCE,
        }
    }
}

/// Observed Fisher information `Σ p(1-p) x̃ x̃ᵀ` with `x̃ = [1, x]`.
pub fn observed_information(model: &LogisticModel, x: &DesignMatrix) -> DMatrix<f64> {
    let d = model.weights.len() + 1;
    let mut info = DMatrix::<f64>::zeros(d, d);
    let mut xt = DVector::<f64>::zeros(d);
    for row in x.rows() {
        let p = sigmoid(score(model.intercept, &model.weights, row));
        xt[0] = 1.0;
        xt.rows_mut(1, d - 1).copy_from_slice(row);
        info.syger(p * (1.0 - p), &xt, &xt, 1.0);
    }
    info.fill_upper_triangle_with_lower_triangle();
    info
}

/// Wald z-tests, 95% intervals and odds ratios for every feature weight,
/// in feature order. The intercept is not reported.
pub fn wald_report(
    model: &LogisticModel,
    x: &DesignMatrix,
    feature_names: &[String],
) -> Result<Vec<InferenceRow>> {
    if feature_names.len() != model.weights.len() {
        return Err(Error::LengthMismatch {
            expected: model.weights.len(),
            actual: feature_names.len(),
        });
    }
    if x.n_cols() != model.weights.len() {
        return Err(Error::LengthMismatch {
            expected: model.weights.len(),
            actual: x.n_cols(),
        });
    }
    let info = observed_information(model, x);
    let cov = info
        .cholesky()
        .ok_or(Error::SingularInformation)?
        .inverse();
    let mut rows = Vec::with_capacity(feature_names.len());
    for (j, name) in feature_names.iter().enumerate() {
        let var = cov[(j + 1, j + 1)];
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::SingularInformation);
        }
        rows.push(InferenceRow::from_estimate(name, model.weights[j], var.sqrt()));
    }
    Ok(rows)
}

/// CSV with one row per feature.
pub fn inference_csv(rows: &[InferenceRow]) -> String {
    let mut out = String::from(
        "feature,coefficient,std_error,z,p_value,ci_low,ci_high,odds_ratio,important\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.feature,
            r.coefficient,
            r.std_error,
            r.z,
            r.p_value,
            r.ci_low,
            r.ci_high,
            r.odds_ratio,
            r.important
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_separable() -> (DesignMatrix, Vec<f64>) {
        let x = DesignMatrix::from_rows(&[
            vec![0.0],
            vec![0.1],
            vec![0.2],
            vec![0.8],
            vec![0.9],
            vec![1.0],
        ])
        .unwrap();
        (x, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    }

    #[test]
    fn loss_strictly_decreases_on_separable_toy() {
        let (x, y) = toy_separable();
        let cfg = LogisticConfig {
            max_iters: 500,
            ..Default::default()
        };
        let (_, trace) = fit_logistic_traced(&x, &y, &cfg).unwrap();
        assert!(trace.len() > 100);
        for w in trace.windows(2) {
            assert!(w[1] < w[0], "{} !< {}", w[1], w[0]);
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LogisticModel::zeros(7);
        assert_eq!(m.predict_proba(&[0.3; 7]).unwrap(), 0.5);
    }

    #[test]
    fn intercept_only_closed_form() {
        let mut m = LogisticModel::zeros(2);
        m.intercept = 1.0;
        let p = m.predict_proba(&[0.2, 0.9]).unwrap();
        assert!((p - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn arity_mismatch() {
        assert!(LogisticModel::zeros(3).predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = toy_separable();
        assert!(matches!(
            fit_logistic(&x, &[1.0; 6], &LogisticConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn divergence_names_learning_rate() {
        let (x, y) = toy_separable();
        let x = DesignMatrix::from_rows(
            &x.rows().map(|r| vec![r[0] * 1e300]).collect::<Vec<_>>(),
        )
        .unwrap();
        let cfg = LogisticConfig {
            learning_rate: 1e10,
            ..Default::default()
        };
        match fit_logistic(&x, &y, &cfg) {
            Err(Error::Diverged { learning_rate }) => assert_eq!(learning_rate, 1e10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn odds_ratio_of_zero_coefficient() {
        let r = InferenceRow::from_estimate("x", 0.0, 0.4);
        assert_eq!(r.odds_ratio, 1.0);
        assert_eq!(r.ci_low, -r.ci_high);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.important);
    }

    #[test]
    fn duplicate_columns_make_information_singular() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]])
            .unwrap();
        let y = [1.0, 0.0, 0.0, 1.0];
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(matches!(
            wald_report(&m, &x, &["a".into(), "b".into()]),
            Err(Error::SingularInformation)
        ));
    }
}
