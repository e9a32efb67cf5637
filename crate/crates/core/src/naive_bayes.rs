//! Naive Bayes with Gaussian likelihoods for continuous features and
//! Bernoulli likelihoods for binary ones, fit by maximum likelihood.
//!
//! Class index 0 is discarded, 1 is transplanted.

use serde::{Deserialize, Serialize};

use crate::data::FeatureKind;
use crate::error::{Error, Result};
use crate::matrix::DesignMatrix;

pub const VARIANCE_FLOOR: f64 = 1e-9;
/// Laplace pseudocount for Bernoulli parameters.
pub const PSEUDOCOUNT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureLikelihood {
    Gaussian { mean: [f64; 2], variance: [f64; 2] },
    Bernoulli { p: [f64; 2] },
}

impl FeatureLikelihood {
    /// `ln P(x | class)`.
    pub fn log_likelihood(&self, class: usize, x: f64) -> f64 {
        match self {
            FeatureLikelihood::Gaussian { mean, variance } => {
                let v = variance[class];
                let d = x - mean[class];
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v)
            }
            // Normalized binaries stay in [0, 1]; x = 0.5 arises only for a
            // constant training column and then contributes equally to both classes.
            FeatureLikelihood::Bernoulli { p } => {
                x * p[class].ln() + (1.0 - x) * (1.0 - p[class]).ln()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// `[P(discarded), P(transplanted)]`.
    pub priors: [f64; 2],
    pub features: Vec<FeatureLikelihood>,
    pub variance_floor: f64,
}

/// Fits class priors and per-class likelihood parameters.
///
/// Gaussian parameters are the per-class mean and maximum-likelihood variance
/// (divisor n, floored at [`VARIANCE_FLOOR`]); Bernoulli parameters are
/// `(successes + 1) / (n + 2)`.
pub fn fit_nb(x: &DesignMatrix, y: &[f64], kinds: &[FeatureKind]) -> Result<NaiveBayesModel> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if kinds.len() != x.n_cols() {
        return Err(Error::LengthMismatch {
            expected: x.n_cols(),
            actual: kinds.len(),
        });
    }
    let class_rows: [Vec<usize>; 2] = [
        (0..y.len()).filter(|&i| y[i] != 1.0).collect(),
        (0..y.len()).filter(|&i| y[i] == 1.0).collect(),
    ];
    if class_rows.iter().any(Vec::is_empty) {
        return Err(Error::SingleClass);
    }
    let n = y.len() as f64;
    let priors = [
        class_rows[0].len() as f64 / n,
        class_rows[1].len() as f64 / n,
    ];
    let features = kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let stats = |c: usize| {
                let vals: Vec<f64> = class_rows[c].iter().map(|&i| x.get(i, j)).collect();
                let m = vals.len() as f64;
                let sum: f64 = vals.iter().sum();
                let mean = sum / m;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                (m, sum, mean, var)
            };
            let (s0, s1) = (stats(0), stats(1));
            match kind {
                FeatureKind::Continuous => FeatureLikelihood::Gaussian {
                    mean: [s0.2, s1.2],
                    variance: [s0.3.max(VARIANCE_FLOOR), s1.3.max(VARIANCE_FLOOR)],
                },
                FeatureKind::Binary => FeatureLikelihood::Bernoulli {
                    p: [
                        (s0.1 + PSEUDOCOUNT) / (s0.0 + 2.0 * PSEUDOCOUNT),
                        (s1.1 + PSEUDOCOUNT) / (s1.0 + 2.0 * PSEUDOCOUNT),
                    ],
                },
            }
        })
        .collect();
    Ok(NaiveBayesModel {
        priors,
        features,
        variance_floor: VARIANCE_FLOOR,
    })
}

impl NaiveBayesModel {
    /// Unnormalized log posteriors `ln P(y) + Σ ln P(x_j | y)`.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.features.len() {
            return Err(Error::LengthMismatch {
                expected: self.features.len(),
                actual: x.len(),
            });
        }
        let mut out = [self.priors[0].ln(), self.priors[1].ln()];
        for (c, acc) in out.iter_mut().enumerate() {
            if *acc == f64::NEG_INFINITY {
                continue;
            }
            *acc += self
                .features
                .iter()
                .zip(x)
                .map(|(f, &v)| f.log_likelihood(c, v))
                .sum::<f64>();
        }
        Ok(out)
    }

    /// `[P(discarded | x), P(transplanted | x)]`.
    ///
    /// With two classes the log-sum-exp normalization reduces to
    /// `P(c) = 1 / (1 + exp(l_other - l_c))`, which never overflows.
    pub fn posterior(&self, x: &[f64]) -> Result<[f64; 2]> {
        let jl = self.joint_log_likelihood(x)?;
        let share = |own: f64, other: f64| {
            if own == f64::NEG_INFINITY {
                0.0
            } else {
                1.0 / (1.0 + (other - own).exp())
            }
        };
        Ok([share(jl[0], jl[1]), share(jl[1], jl[0])])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.posterior(x)?[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_model(priors: [f64; 2], p: &[[f64; 2]]) -> NaiveBayesModel {
        NaiveBayesModel {
            priors,
            features: p
                .iter()
                .map(|&p| FeatureLikelihood::Bernoulli { p })
                .collect(),
            variance_floor: VARIANCE_FLOOR,
        }
    }

    #[test]
    fn balanced_priors() {
        let x = DesignMatrix::from_rows(&[vec![0.1], vec![0.2], vec![0.3], vec![0.4]]).unwrap();
        let m = fit_nb(&x, &[0.0, 1.0, 0.0, 1.0], &[FeatureKind::Continuous]).unwrap();
        assert_eq!(m.priors, [0.5, 0.5]);
    }

    #[test]
    fn laplace_smoothing() {
        let x = DesignMatrix::from_rows(&[
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![0.0],
        ])
        .unwrap();
        let m = fit_nb(&x, &[1.0, 1.0, 1.0, 1.0, 0.0], &[FeatureKind::Binary]).unwrap();
        match &m.features[0] {
            FeatureLikelihood::Bernoulli { p } => {
                assert_eq!(p[1], 5.0 / 6.0);
                assert_eq!(p[0], 1.0 / 3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_class_variance_is_floored() {
        let x = DesignMatrix::from_rows(&[vec![0.5], vec![0.5], vec![0.1], vec![0.9]]).unwrap();
        let m = fit_nb(&x, &[1.0, 1.0, 0.0, 0.0], &[FeatureKind::Continuous]).unwrap();
        match &m.features[0] {
            FeatureLikelihood::Gaussian { variance, .. } => assert_eq!(variance[1], VARIANCE_FLOOR),
            other => panic!("unexpected {other:?}"),
        }
        let p = m.posterior(&[0.5]).unwrap();
        assert!(p[1] > 0.99);
    }

    #[test]
    fn single_class_rejected() {
        let x = DesignMatrix::from_rows(&[vec![0.1], vec![0.2]]).unwrap();
        assert!(matches!(
            fit_nb(&x, &[1.0, 1.0], &[FeatureKind::Continuous]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn symmetric_model_gives_half() {
        let m = binary_model([0.5, 0.5], &[[0.3, 0.3], [0.8, 0.8]]);
        assert_eq!(m.posterior(&[1.0, 0.0]).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn degenerate_prior_dominates() {
        let m = binary_model([0.0, 1.0], &[[0.01, 0.99]]);
        assert_eq!(m.posterior(&[0.0]).unwrap(), [0.0, 1.0]);
        let m = binary_model([1.0, 0.0], &[[0.01, 0.99]]);
        assert_eq!(m.posterior(&[1.0]).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn extreme_inputs_do_not_underflow() {
        let m = NaiveBayesModel {
            priors: [0.4, 0.6],
            features: vec![
                FeatureLikelihood::Gaussian {
                    mean: [0.0, 1.0],
                    variance: [1e-6, 1e-6],
                };
                20
            ],
            variance_floor: VARIANCE_FLOOR,
        };
        let p = m.posterior(&[0.6; 20]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0]);
    }
}
