//! Imputation, MAD outlier flagging, min-max normalization and the seeded
//! train/test split.
//!
//! Imputer and normalizer are fit on the training split only and then applied
//! unchanged to the test split and to served records.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, Outcome};
use crate::error::{Error, Result};
use crate::matrix::DesignMatrix;
use crate::rng;

/// Scale making the MAD a consistent estimator of a normal standard deviation.
pub const MAD_SCALE: f64 = 1.4826;
/// Scale making the mean absolute deviation consistent for a normal (√(π/2)).
pub const MEAN_AD_SCALE: f64 = 1.253_314_137_315_500_3;
pub const DEFAULT_MAD_CUTOFF: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousStrategy {
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryStrategy {
    #[default]
    Mode,
}

/// Missing-value fill rules and, once fit, the learned fill per feature.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputationPolicy {
    pub continuous: ContinuousStrategy,
    pub binary: BinaryStrategy,
    /// One fill value per feature, empty until fit.
    pub fills: Vec<f64>,
}

impl ImputationPolicy {
    pub fn is_fit(&self) -> bool {
        !self.fills.is_empty()
    }

    pub fn impute_row(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.fills.len() {
            return Err(Error::LengthMismatch {
                expected: self.fills.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.fills)
            .map(|(v, fill)| v.unwrap_or(*fill))
            .collect())
    }

    /// Fills every missing cell; present cells are untouched.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_features() != self.fills.len() {
            return Err(Error::LengthMismatch {
                expected: self.fills.len(),
                actual: ds.n_features(),
            });
        }
        Ok(ds.map_values(|j, v| Some(v.unwrap_or(self.fills[j]))))
    }
}

/// Learns fill values from `train`: mean for continuous features, mode for
/// binary ones (ties go to 0).
pub fn fit_imputer(train: &Dataset, policy: &ImputationPolicy) -> Result<ImputationPolicy> {
    let mut fills = Vec::with_capacity(train.n_features());
    for (j, spec) in train.features().iter().enumerate() {
        let present: Vec<f64> = train.column(j).flatten().collect();
        if present.is_empty() {
            return Err(Error::FullyMissingFeature(spec.name.clone()));
        }
        let fill = match spec.kind {
            FeatureKind::Continuous => match policy.continuous {
                ContinuousStrategy::Mean => present.iter().sum::<f64>() / present.len() as f64,
            },
            FeatureKind::Binary => match policy.binary {
                BinaryStrategy::Mode => {
                    let ones = present.iter().filter(|&&v| v == 1.0).count();
                    if 2 * ones > present.len() {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
        };
        fills.push(fill);
    }
    Ok(ImputationPolicy {
        fills,
        ..policy.clone()
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// Flags for one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEntry {
    pub feature: String,
    pub median: f64,
    /// Robust spread on the standard-deviation scale; 0 means nothing can be flagged.
    pub spread: f64,
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub cutoff: f64,
    pub entries: Vec<OutlierEntry>,
}

/// Median-absolute-deviation outlier flags over the present values.
///
/// `x` is flagged iff `|x - median| / (1.4826 * MAD) > cutoff`. When the MAD
/// is 0, the mean absolute deviation around the median (scaled by √(π/2))
/// stands in; if that is 0 too the column is constant and nothing is flagged.
/// Returned indices are positions in `values`.
pub fn mad_flags(values: &[Option<f64>], cutoff: f64) -> Result<OutlierEntry> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "MAD needs at least 2 values, got {}",
            present.len()
        )));
    }
    let med = median(&present).expect("non-empty");
    let deviations: Vec<f64> = present.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&deviations).expect("non-empty");
    let spread = if mad > 0.0 {
        MAD_SCALE * mad
    } else {
        MEAN_AD_SCALE * deviations.iter().sum::<f64>() / deviations.len() as f64
    };
    let flagged = if spread > 0.0 {
        values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.filter(|x| (x - med).abs() / spread > cutoff).map(|_| i))
            .collect()
    } else {
        Vec::new()
    };
    Ok(OutlierEntry {
        feature: String::new(),
        median: med,
        spread,
        flagged,
    })
}

/// MAD flags for every continuous feature of `ds`.
pub fn detect_outliers(ds: &Dataset, cutoff: f64) -> Result<OutlierReport> {
    let mut entries = Vec::new();
    for (j, spec) in ds.features().iter().enumerate() {
        if spec.kind != FeatureKind::Continuous {
            continue;
        }
        let column: Vec<Option<f64>> = ds.column(j).collect();
        let mut entry = mad_flags(&column, cutoff)?;
        entry.feature = spec.name.clone();
        entries.push(entry);
    }
    Ok(OutlierReport { cutoff, entries })
}

/// Clamps flagged features into `median ± cutoff * spread`.
pub fn winsorize(ds: &Dataset, report: &OutlierReport) -> Dataset {
    let bounds: Vec<Option<(f64, f64)>> = ds
        .features()
        .iter()
        .map(|spec| {
            report
                .entries
                .iter()
                .find(|e| e.feature == spec.name && e.spread > 0.0)
                .map(|e| {
                    let half = report.cutoff * e.spread;
                    (e.median - half, e.median + half)
                })
        })
        .collect();
    ds.map_values(|j, v| match (v, bounds[j]) {
        (Some(x), Some((lo, hi))) => Some(x.clamp(lo, hi)),
        (v, _) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub e_min: f64,
    pub e_max: f64,
}

impl FeatureRange {
    /// `(e - e_min) / (e_max - e_min)` clipped to [0, 1]; 0.5 for a constant feature.
    pub fn normalize(&self, e: f64) -> f64 {
        if self.e_max == self.e_min {
            0.5
        } else {
            ((e - self.e_min) / (self.e_max - self.e_min)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub ranges: Vec<FeatureRange>,
}

impl NormalizationParams {
    pub fn normalize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.ranges.len() {
            return Err(Error::LengthMismatch {
                expected: self.ranges.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.ranges)
            .map(|(e, r)| r.normalize(*e))
            .collect())
    }
}

fn complete_value(ds: &Dataset, i: usize, j: usize) -> Result<f64> {
    ds.row(i)[j].ok_or_else(|| Error::Validation {
        row: i + 1,
        field: ds.features()[j].name.clone(),
        message: "missing value; impute before normalizing".into(),
    })
}

/// Per-feature minimum and maximum of an imputed training set.
pub fn fit_normalizer(train: &Dataset) -> Result<NormalizationParams> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ranges = vec![
        FeatureRange {
            e_min: f64::INFINITY,
            e_max: f64::NEG_INFINITY,
        };
        train.n_features()
    ];
    for i in 0..train.len() {
        for (j, range) in ranges.iter_mut().enumerate() {
            let v = complete_value(train, i, j)?;
            range.e_min = range.e_min.min(v);
            range.e_max = range.e_max.max(v);
        }
    }
    Ok(NormalizationParams { ranges })
}

/// Normalized copy of an imputed dataset. Values outside the training range
/// are clipped to [0, 1].
pub fn apply_normalizer(params: &NormalizationParams, ds: &Dataset) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.n_features() != params.ranges.len() {
        return Err(Error::LengthMismatch {
            expected: params.ranges.len(),
            actual: ds.n_features(),
        });
    }
    for i in 0..ds.len() {
        for j in 0..ds.n_features() {
            complete_value(ds, i, j)?;
        }
    }
    Ok(ds.map_values(|j, v| v.map(|e| params.ranges[j].normalize(e))))
}

/// Fitted imputer plus normalizer: the transform every model artifact carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub imputer: ImputationPolicy,
    pub normalizer: NormalizationParams,
}

impl Preprocessor {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let imputer = fit_imputer(train, &ImputationPolicy::default())?;
        let normalizer = fit_normalizer(&imputer.apply(train)?)?;
        Ok(Preprocessor {
            imputer,
            normalizer,
        })
    }

    pub fn n_features(&self) -> usize {
        self.imputer.fills.len()
    }

    /// Imputed (raw-scale) and normalized versions of one row.
    pub fn transform_row_verbose(&self, row: &[Option<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let imputed = self.imputer.impute_row(row)?;
        let normalized = self.normalizer.normalize_row(&imputed)?;
        Ok((imputed, normalized))
    }

    pub fn transform_row(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        Ok(self.transform_row_verbose(row)?.1)
    }

    pub fn transform(&self, ds: &Dataset) -> Result<DesignMatrix> {
        let rows = ds
            .rows()
            .iter()
            .map(|r| self.transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return DesignMatrix::from_flat(0, self.n_features(), Vec::new());
        }
        DesignMatrix::from_rows(&rows)
    }
}

/// Row indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Smallest number of rows allowed on either side of a split.
pub const MIN_SPLIT_ROWS: usize = 2;

/// Seeded permutation of `0..n` cut at `floor(train_fraction * n)`.
///
/// With `stratify_by`, the cut is applied per class (in permuted order), so
/// each class contributes `floor(train_fraction * n_class)` training rows.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    seed: u64,
    stratify_by: Option<&[Outcome]>,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 * MIN_SPLIT_ROWS {
        return Err(Error::InvalidSplit(format!(
            "need at least {} rows to split, got {n}",
            2 * MIN_SPLIT_ROWS
        )));
    }
    let perm = rng::permutation(n, &mut rng::rng_from(seed));
    let (train, test): (Vec<usize>, Vec<usize>) = match stratify_by {
        None => {
            let n_train = (train_fraction * n as f64).floor() as usize;
            (perm[..n_train].to_vec(), perm[n_train..].to_vec())
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: labels.len(),
                });
            }
            let n_pos = labels.iter().filter(|l| l.is_positive()).count();
            let quota_pos = (train_fraction * n_pos as f64).floor() as usize;
            let quota_neg = (train_fraction * (n - n_pos) as f64).floor() as usize;
            let (mut taken_pos, mut taken_neg) = (0, 0);
            perm.iter().partition(|&&i| {
                let (taken, quota) = if labels[i].is_positive() {
                    (&mut taken_pos, quota_pos)
                } else {
                    (&mut taken_neg, quota_neg)
                };
                *taken += 1;
                *taken <= quota
            })
        }
    };
    if train.len() < MIN_SPLIT_ROWS || test.len() < MIN_SPLIT_ROWS {
        return Err(Error::InvalidSplit(format!(
            "fraction {train_fraction} on {n} rows gives {} train / {} test rows; each side needs at least {MIN_SPLIT_ROWS}",
            train.len(),
            test.len()
        )));
    }
    Ok(SplitIndices { train, test })
}

/// Seeded, unstratified shuffle/split of a dataset.
pub fn shuffle_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = split_indices(ds.len(), train_fraction, seed, None)?;
    Ok((ds.subset(&split.train), ds.subset(&split.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DonorRecord, FeatureSpec};

    fn ages(values: &[Option<f64>]) -> Dataset {
        let recs: Vec<DonorRecord> = values
            .iter()
            .map(|&age| DonorRecord {
                age,
                gender: Some(1.0),
                per_gs: Some(1.0),
                per_kdpi: Some(0.5),
                cit_arrival: Some(10.0),
                hist_diabetes: Some(0.0),
                hist_htn: Some(0.0),
            })
            .collect();
        let labels = vec![Outcome::Transplanted; recs.len()];
        Dataset::from_records(&recs, labels).unwrap()
    }

    #[test]
    fn mean_fill() {
        let ds = ages(&[Some(40.0), None, Some(60.0)]);
        let imp = fit_imputer(&ds, &ImputationPolicy::default()).unwrap();
        assert_eq!(imp.fills[0], 50.0);
        assert_eq!(imp.apply(&ds).unwrap().row(1)[0], Some(50.0));
    }

    #[test]
    fn mode_fill_and_tie() {
        let specs = vec![FeatureSpec::binary("b")];
        let labels = vec![Outcome::Discarded; 3];
        let ds = Dataset::new(
            specs.clone(),
            vec![vec![Some(1.0)], vec![Some(1.0)], vec![Some(0.0)]],
            labels,
        )
        .unwrap();
        let imp = fit_imputer(&ds, &ImputationPolicy::default()).unwrap();
        assert_eq!(imp.fills, vec![1.0]);

        let tie = Dataset::new(
            specs,
            vec![vec![Some(1.0)], vec![Some(0.0)]],
            vec![Outcome::Discarded; 2],
        )
        .unwrap();
        assert_eq!(
            fit_imputer(&tie, &ImputationPolicy::default()).unwrap().fills,
            vec![0.0]
        );
    }

    #[test]
    fn fully_missing_feature_is_named() {
        let ds = ages(&[None, None]);
        match fit_imputer(&ds, &ImputationPolicy::default()) {
            Err(Error::FullyMissingFeature(name)) => assert_eq!(name, "age"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mad_zero_falls_back_to_mean_absolute_deviation() {
        let v: Vec<Option<f64>> = [1.0, 1.0, 1.0, 1.0, 100.0].map(Some).to_vec();
        assert_eq!(mad_flags(&v, 3.0).unwrap().flagged, vec![4]);
    }

    #[test]
    fn mad_no_flags_on_constant_or_symmetric() {
        let c: Vec<Option<f64>> = [5.0, 5.0, 5.0].map(Some).to_vec();
        assert!(mad_flags(&c, 0.0).unwrap().flagged.is_empty());
        let s: Vec<Option<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0].map(Some).to_vec();
        assert!(mad_flags(&s, 3.0).unwrap().flagged.is_empty());
    }

    #[test]
    fn mad_needs_two_values() {
        assert!(matches!(
            mad_flags(&[Some(1.0), None], 3.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mad_skips_missing_positions() {
        let v = vec![Some(0.0), None, Some(1.0), Some(-1.0), Some(0.5), Some(50.0)];
        assert_eq!(mad_flags(&v, 3.0).unwrap().flagged, vec![5]);
    }

    #[test]
    fn winsorize_clamps_to_cutoff_boundary() {
        let ds = ages(&[Some(40.0), Some(41.0), Some(39.0), Some(40.5), Some(400.0)]);
        let report = detect_outliers(&ds, 3.0).unwrap();
        let age = &report.entries[0];
        assert_eq!(age.flagged, vec![4]);
        let w = winsorize(&ds, &report);
        let top = w.row(4)[0].unwrap();
        assert!((top - (age.median + 3.0 * age.spread)).abs() < 1e-12);
        assert_eq!(w.row(0)[0], Some(40.0));
    }

    #[test]
    fn normalization_identities() {
        let r = FeatureRange {
            e_min: 0.0,
            e_max: 10.0,
        };
        assert_eq!(r.normalize(5.0), 0.5);
        assert_eq!(r.normalize(0.0), 0.0);
        assert_eq!(r.normalize(10.0), 1.0);
        assert_eq!(r.normalize(12.0), 1.0);
        assert_eq!(r.normalize(-3.0), 0.0);
        let c = FeatureRange {
            e_min: 3.0,
            e_max: 3.0,
        };
        assert_eq!(c.normalize(3.0), 0.5);
        assert_eq!(c.normalize(-100.0), 0.5);
    }

    #[test]
    fn normalizer_rejects_missing() {
        let ds = ages(&[Some(1.0), None]);
        assert!(fit_normalizer(&ds).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = split_indices(584, 0.9, 1, None).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (525, 59));
        assert_eq!(s, split_indices(584, 0.9, 1, None).unwrap());
    }

    #[test]
    fn split_partitions_index_set() {
        for seed in 0..20 {
            let s = split_indices(10, 0.5, seed, None).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
            assert_eq!(s.train.len(), 5);
        }
    }

    #[test]
    fn degenerate_splits_rejected() {
        assert!(split_indices(10, 0.999, 0, None).is_err());
        assert!(split_indices(10, 0.0, 0, None).is_err());
        assert!(split_indices(10, 1.0, 0, None).is_err());
        assert!(split_indices(1, 0.5, 0, None).is_err());
    }

    #[test]
    fn stratified_split_keeps_class_quota() {
        let labels: Vec<Outcome> = (0..100).map(|i| Outcome::from_positive(i % 4 != 0)).collect();
        let s = split_indices(100, 0.8, 3, Some(&labels)).unwrap();
        let pos = s.train.iter().filter(|&&i| labels[i].is_positive()).count();
        assert_eq!(pos, 60);
        assert_eq!(s.train.len(), 80);
    }
}
