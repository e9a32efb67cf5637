//! Donor-record schema, the labeled [`Dataset`], CSV ingestion and group
//! summaries.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AGE: &str = "age";
pub const GENDER: &str = "gender";
pub const PER_GS: &str = "per_gs";
pub const PER_KDPI: &str = "per_kdpi";
pub const CIT_ARRIVAL: &str = "cit_arrival";
pub const HIST_DIABETES: &str = "hist_diabetes";
pub const HIST_HTN: &str = "hist_htn";
pub const OUTCOME: &str = "outcome";

/// The seven donor features, in pipeline order.
pub const DONOR_FEATURES: [&str; 7] = [
    AGE,
    GENDER,
    PER_GS,
    PER_KDPI,
    CIT_ARRIVAL,
    HIST_DIABETES,
    HIST_HTN,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// Name, kind and valid domain of one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl FeatureSpec {
    pub fn continuous(name: &str, lower: Option<f64>, upper: Option<f64>) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            lower,
            upper,
        }
    }

    pub fn binary(name: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Binary,
            lower: Some(0.0),
            upper: Some(1.0),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.kind == FeatureKind::Binary
    }

    /// Checks a present value against the feature's domain.
    pub fn check(&self, value: f64) -> std::result::Result<(), String> {
        if !value.is_finite() {
            return Err(format!("value {value} is not finite"));
        }
        if self.is_binary() {
            if value != 0.0 && value != 1.0 {
                return Err(format!("binary field must be 0 or 1, got {value}"));
            }
            return Ok(());
        }
        if let Some(lo) = self.lower {
            if value < lo {
                return Err(format!("value {value} is below the minimum {lo}"));
            }
        }
        if let Some(hi) = self.upper {
            if value > hi {
                return Err(format!("value {value} is above the maximum {hi}"));
            }
        }
        Ok(())
    }

    /// Clamps a value into the feature's domain (used by the generator).
    pub fn clamp(&self, value: f64) -> f64 {
        let v = self.lower.map_or(value, |lo| value.max(lo));
        self.upper.map_or(v, |hi| v.min(hi))
    }
}

/// Specs of the seven donor features.
pub fn donor_feature_specs() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::continuous(AGE, Some(0.0), None),
        FeatureSpec::binary(GENDER),
        FeatureSpec::continuous(PER_GS, Some(0.0), Some(100.0)),
        FeatureSpec::continuous(PER_KDPI, Some(0.0), Some(1.0)),
        FeatureSpec::continuous(CIT_ARRIVAL, Some(0.0), None),
        FeatureSpec::binary(HIST_DIABETES),
        FeatureSpec::binary(HIST_HTN),
    ]
}

/// Transplant outcome. `Transplanted` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Transplanted,
    Discarded,
}

impl Outcome {
    pub fn is_positive(self) -> bool {
        self == Outcome::Transplanted
    }

    /// 1 for transplanted, 0 for discarded.
    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Outcome::Transplanted
        } else {
            Outcome::Discarded
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Transplanted => "TRANSPLANTED",
            Outcome::Discarded => "DISCARDED",
        })
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRANSPLANTED" => Ok(Outcome::Transplanted),
            "DISCARDED" => Ok(Outcome::Discarded),
            other => Err(Error::Schema(format!("unknown outcome token `{other}`"))),
        }
    }
}

/// One donor's seven features; `None` marks a missing value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DonorRecord {
    pub age: Option<f64>,
    pub gender: Option<f64>,
    pub per_gs: Option<f64>,
    pub per_kdpi: Option<f64>,
    pub cit_arrival: Option<f64>,
    pub hist_diabetes: Option<f64>,
    pub hist_htn: Option<f64>,
}

impl DonorRecord {
    /// Values in [`DONOR_FEATURES`] order.
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.age,
            self.gender,
            self.per_gs,
            self.per_kdpi,
            self.cit_arrival,
            self.hist_diabetes,
            self.hist_htn,
        ]
    }

    pub fn from_values(v: [Option<f64>; 7]) -> Self {
        DonorRecord {
            age: v[0],
            gender: v[1],
            per_gs: v[2],
            per_kdpi: v[3],
            cit_arrival: v[4],
            hist_diabetes: v[5],
            hist_htn: v[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (spec, value) in donor_feature_specs().iter().zip(self.values()) {
            if let Some(v) = value {
                spec.check(v).map_err(|message| Error::Validation {
                    row: 0,
                    field: spec.name.clone(),
                    message,
                })?;
            }
        }
        Ok(())
    }
}

/// Labeled rows over an ordered feature schema.
///
/// The first columns are normally the seven donor features; extra columns
/// (noise or duplicated features used in experiments) may follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<FeatureSpec>,
    rows: Vec<Vec<Option<f64>>>,
    labels: Vec<Outcome>,
}

impl Dataset {
    /// Builds a dataset, validating arity and domains of every present value.
    pub fn new(
        features: Vec<FeatureSpec>,
        rows: Vec<Vec<Option<f64>>>,
        labels: Vec<Outcome>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != features.len() {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("expected {} values, got {}", features.len(), row.len()),
                });
            }
            for (spec, value) in features.iter().zip(row) {
                if let Some(v) = value {
                    spec.check(*v).map_err(|message| Error::Validation {
                        row: r + 1,
                        field: spec.name.clone(),
                        message,
                    })?;
                }
            }
        }
        Ok(Dataset {
            features,
            rows,
            labels,
        })
    }

    pub fn from_records(records: &[DonorRecord], labels: Vec<Outcome>) -> Result<Self> {
        let rows = records.iter().map(|r| r.values().to_vec()).collect();
        Dataset::new(donor_feature_specs(), rows, labels)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[Outcome] {
        &self.labels
    }

    /// Labels as 0/1 targets.
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.as_f64()).collect()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.positive_count();
        pos > 0 && pos < self.len()
    }

    pub fn missing_counts(&self) -> Vec<usize> {
        (0..self.n_features())
            .map(|j| self.column(j).filter(Option::is_none).count())
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Appends a column. Values are validated against `spec`.
    pub fn with_column(&self, spec: FeatureSpec, values: &[Option<f64>]) -> Result<Dataset> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        let mut features = self.features.clone();
        features.push(spec);
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, v)| {
                let mut r = r.clone();
                r.push(*v);
                r
            })
            .collect();
        Dataset::new(features, rows, self.labels.clone())
    }

    /// Same schema and labels, with every value passed through `f(feature, value)`.
    pub(crate) fn map_values<F>(&self, f: F) -> Dataset
    where
        F: Fn(usize, Option<f64>) -> Option<f64>,
    {
        Dataset {
            features: self.features.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().enumerate().map(|(j, v)| f(j, *v)).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Maps canonical field names to CSV header names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnMap {
    renames: HashMap<String, String>,
}

impl ColumnMap {
    /// Identity mapping: headers are the canonical snake_case names.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Reads canonical field `canonical` from the CSV column `header`.
    pub fn rename(mut self, canonical: &str, header: &str) -> Self {
        self.renames
            .insert(canonical.to_string(), header.to_string());
        self
    }

    pub fn header_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames
            .get(canonical)
            .map(String::as_str)
            .unwrap_or(canonical)
    }

    fn canonical_for<'a>(&'a self, header: &'a str) -> &'a str {
        self.renames
            .iter()
            .find(|(_, h)| h.as_str() == header)
            .map(|(c, _)| c.as_str())
            .unwrap_or(header)
    }
}

/// Parses a dataset from CSV.
///
/// The header must name the seven donor features and the outcome column
/// (after applying `columns`). Any other column is read as an extra
/// unbounded continuous feature. Empty cells are missing. Row numbers in
/// errors count data rows from 1.
pub fn parse_csv<R: Read>(source: R, columns: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| columns.canonical_for(h).to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Schema("missing header row".into()));
    }

    let outcome_col = headers
        .iter()
        .position(|h| h == OUTCOME)
        .ok_or_else(|| Error::Schema(format!("no `{}` column", columns.header_for(OUTCOME))))?;

    let mut features = donor_feature_specs();
    let mut source_cols = Vec::with_capacity(headers.len());
    for spec in &features {
        let col = headers
            .iter()
            .position(|h| *h == spec.name)
            .ok_or_else(|| {
                Error::Schema(format!("no `{}` column", columns.header_for(&spec.name)))
            })?;
        source_cols.push(col);
    }
    for (col, h) in headers.iter().enumerate() {
        if col != outcome_col && !DONOR_FEATURES.contains(&h.as_str()) {
            features.push(FeatureSpec::continuous(h, None, None));
            source_cols.push(col);
        }
    }
    let kdpi = features
        .iter()
        .position(|f| f.name == PER_KDPI)
        .expect("donor features present");

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_no,
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        labels.push(record[outcome_col].parse::<Outcome>()?);
        let mut row = Vec::with_capacity(features.len());
        for (j, &col) in source_cols.iter().enumerate() {
            let cell = &record[col];
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let mut v: f64 = cell.parse().map_err(|_| Error::Validation {
                row: row_no,
                field: features[j].name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if j == kdpi && v > 1.0 {
                log::warn!("row {row_no}: per_kdpi {v} > 1 read as a percentage");
                v /= 100.0;
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    Dataset::new(features, rows, labels)
}

/// Writes a dataset as CSV (feature columns in schema order, then outcome).
pub fn write_csv<W: Write>(ds: &Dataset, sink: W, columns: &ColumnMap) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = ds
        .features()
        .iter()
        .map(|f| columns.header_for(&f.name))
        .collect();
    header.push(columns.header_for(OUTCOME));
    writer.write_record(&header)?;
    for (row, label) in ds.rows().iter().zip(ds.labels()) {
        let mut cells: Vec<String> = row
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        cells.push(label.to_string());
        writer.write_record(&cells)?;
    }
    writer.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Non-missing values in this class.
    pub count: usize,
    /// Mean over non-missing values; `None` when `count` is 0.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub missing: usize,
    pub transplanted: ClassStats,
    pub discarded: ClassStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_transplanted: usize,
    pub n_discarded: usize,
    pub features: Vec<FeatureSummary>,
}

impl DatasetSummary {
    pub fn feature(&self, name: &str) -> Option<&FeatureSummary> {
        self.features.iter().find(|f| f.name == name)
    }
}

/// Per-feature, per-class means over non-missing values.
pub fn summarize(ds: &Dataset) -> Result<DatasetSummary> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = |j: usize, class: Outcome| {
        let (sum, count) = ds
            .column(j)
            .zip(ds.labels())
            .filter(|(_, l)| **l == class)
            .filter_map(|(v, _)| v)
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        ClassStats {
            count,
            mean: (count > 0).then(|| sum / count as f64),
        }
    };
    let missing = ds.missing_counts();
    let features = ds
        .features()
        .iter()
        .enumerate()
        .map(|(j, spec)| FeatureSummary {
            name: spec.name.clone(),
            missing: missing[j],
            transplanted: stats(j, Outcome::Transplanted),
            discarded: stats(j, Outcome::Discarded),
        })
        .collect();
    let n_transplanted = ds.positive_count();
    Ok(DatasetSummary {
        n_transplanted,
        n_discarded: ds.len() - n_transplanted,
        features,
    })
}
