//! Request and response bodies. Field names follow the CSV exports.
//!
//! Numbers are written in serde_json's shortest round-trip form, which reads
//! back to the identical `f64`.

use serde::{Deserialize, Serialize};

use renal_core::artifact::ModelKind;
use renal_core::forest::ImportanceEntry;
use renal_core::logistic::InferenceRow;

/// A donor record: feature name to value. Absent keys and `null` are
/// missing and get imputed.
pub type RecordBody = std::collections::BTreeMap<String, Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub kind: ModelKind,
    pub model: String,
    pub primary: bool,
    /// `P(TRANSPLANTED)`.
    pub probability: f64,
    /// `TRANSPLANTED` iff `probability >= threshold`.
    pub decision: String,
    pub digest: String,
    /// Feature values after imputation, in `features` order.
    pub imputed: Vec<f64>,
    /// Feature values after min-max normalization.
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub threshold: f64,
    pub features: Vec<String>,
    pub models: Vec<ModelPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub record: RecordBody,
    pub feature: String,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProbability {
    pub kind: ModelKind,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfPoint {
    pub value: f64,
    pub probabilities: Vec<ModelProbability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub feature: String,
    pub points: Vec<WhatIfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResponse {
    pub digest: String,
    pub trees_used: usize,
    pub rows_skipped: usize,
    /// Rank order.
    pub entries: Vec<ImportanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub digest: String,
    pub rows: Vec<InferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedModelInfo {
    pub kind: ModelKind,
    pub model: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    /// `ok` once models are loaded, `loading` before.
    pub status: String,
    pub threshold: f64,
    pub models: Vec<LoadedModelInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
