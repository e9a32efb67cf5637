//! Class-conditional synthetic donor cohorts.
//!
//! Labels are fixed first (exactly `round(positive_fraction * n)` positives,
//! then shuffled), and each feature is drawn from its class's distribution
//! and clamped into the feature's valid domain. Everything comes from one
//! ChaCha8 stream seeded by `seed`.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, FeatureSpec, Outcome};
use crate::error::{Error, Result};
use crate::rng;

/// Positive (transplanted) fraction of the default cohort: 89 of 146.
pub const DEFAULT_POSITIVE_FRACTION: f64 = 89.0 / 146.0;
/// Mean cold-ischemia hours at arrival of transplanted kidneys.
pub const CIT_MEAN_TRANSPLANTED: f64 = 18.43;
/// Mean cold-ischemia hours at arrival of discarded kidneys.
pub const CIT_MEAN_DISCARDED: f64 = 21.90;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum FeatureDist {
    Gaussian {
        transplanted_mean: f64,
        transplanted_sd: f64,
        discarded_mean: f64,
        discarded_sd: f64,
    },
    Bernoulli {
        p_transplanted: f64,
        p_discarded: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub positive_fraction: f64,
    /// One distribution per donor feature, in pipeline order.
    pub features: Vec<FeatureDist>,
    /// Appended standard-normal columns independent of the label.
    pub noise_columns: usize,
    /// Per-cell probability that a donor-feature value is blanked.
    pub missing_rate: f64,
}

fn gaussian(t_mean: f64, t_sd: f64, d_mean: f64, d_sd: f64) -> FeatureDist {
    FeatureDist::Gaussian {
        transplanted_mean: t_mean,
        transplanted_sd: t_sd,
        discarded_mean: d_mean,
        discarded_sd: d_sd,
    }
}

fn bernoulli(p_t: f64, p_d: f64) -> FeatureDist {
    FeatureDist::Bernoulli {
        p_transplanted: p_t,
        p_discarded: p_d,
    }
}

impl Default for SyntheticSpec {
    /// 584 donors. KDPI, CIT, age and glomerulosclerosis separate the
    /// classes (in that order of strength), gender weakly, diabetes and
    /// hypertension not at all.
    fn default() -> Self {
        SyntheticSpec {
            n: 584,
            positive_fraction: DEFAULT_POSITIVE_FRACTION,
            features: vec![
                gaussian(45.0, 13.0, 53.0, 13.0),
                bernoulli(0.60, 0.55),
                gaussian(5.0, 6.0, 8.0, 7.5),
                gaussian(0.44, 0.2, 0.66, 0.2),
                gaussian(CIT_MEAN_TRANSPLANTED, 3.5, CIT_MEAN_DISCARDED, 3.5),
                bernoulli(0.12, 0.12),
                bernoulli(0.38, 0.38),
            ],
            noise_columns: 0,
            missing_rate: 0.02,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 {
            return bad("synthetic n must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad(format!(
                "positive fraction must lie in [0, 1], got {}",
                self.positive_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing rate must lie in [0, 1), got {}", self.missing_rate));
        }
        if self.features.len() != data::DONOR_FEATURES.len() {
            return bad(format!(
                "expected {} feature distributions, got {}",
                data::DONOR_FEATURES.len(),
                self.features.len()
            ));
        }
        let specs = data::donor_feature_specs();
        for (spec, dist) in specs.iter().zip(&self.features) {
            match (spec.is_binary(), dist) {
                (
                    false,
                    FeatureDist::Gaussian {
                        transplanted_mean,
                        transplanted_sd,
                        discarded_mean,
                        discarded_sd,
                    },
                ) => {
                    let finite = [transplanted_mean, transplanted_sd, discarded_mean, discarded_sd]
                        .iter()
                        .all(|v| v.is_finite());
                    if !finite || *transplanted_sd < 0.0 || *discarded_sd < 0.0 {
                        return bad(format!("invalid Gaussian parameters for `{}`", spec.name));
                    }
                }
                (
                    true,
                    FeatureDist::Bernoulli {
                        p_transplanted,
                        p_discarded,
                    },
                ) => {
                    if !(0.0..=1.0).contains(p_transplanted) || !(0.0..=1.0).contains(p_discarded)
                    {
                        return bad(format!("invalid Bernoulli parameters for `{}`", spec.name));
                    }
                }
                _ => {
                    return bad(format!("distribution kind does not match feature `{}`", spec.name))
                }
            }
        }
        Ok(())
    }

    /// Number of transplanted rows the generator will emit.
    pub fn positive_count(&self) -> usize {
        (self.positive_fraction * self.n as f64).round() as usize
    }
}

pub fn noise_column_name(k: usize) -> String {
    format!("noise_{}", k + 1)
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::rng_from(seed);
    let n_pos = spec.positive_count();
    let mut labels: Vec<Outcome> = (0..spec.n).map(|i| Outcome::from_positive(i < n_pos)).collect();
    rng::fisher_yates(&mut labels, &mut rng);

    let mut specs = data::donor_feature_specs();
    let donor = specs.len();
    for k in 0..spec.noise_columns {
        specs.push(FeatureSpec::continuous(&noise_column_name(k), None, None));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rows = Vec::with_capacity(spec.n);
    for label in &labels {
        let positive = label.is_positive();
        let mut row = Vec::with_capacity(specs.len());
        for (fs, dist) in specs.iter().zip(&spec.features) {
            let v = match *dist {
                FeatureDist::Gaussian {
                    transplanted_mean,
                    transplanted_sd,
                    discarded_mean,
                    discarded_sd,
                } => {
                    let (m, s) = if positive {
                        (transplanted_mean, transplanted_sd)
                    } else {
                        (discarded_mean, discarded_sd)
                    };
                    let normal = Normal::new(m, s)
                        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", fs.name)))?;
                    fs.clamp(normal.sample(&mut rng))
                }
                FeatureDist::Bernoulli {
                    p_transplanted,
                    p_discarded,
                } => {
                    let p = if positive { p_transplanted } else { p_discarded };
                    let b = Bernoulli::new(p)
                        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", fs.name)))?;
                    if b.sample(&mut rng) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            row.push(Some(v));
        }
        for _ in 0..spec.noise_columns {
            row.push(Some(noise.sample(&mut rng)));
        }
        rows.push(row);
    }
    if spec.missing_rate > 0.0 {
        for row in rows.iter_mut() {
            for cell in row.iter_mut().take(donor) {
                if rng.random::<f64>() < spec.missing_rate {
                    *cell = None;
                }
            }
        }
    }
    Dataset::new(specs, rows, labels)
}
