//! Versioned, digest-checked model files.
//!
//! A model file is one header line followed by a JSON body:
//!
//! ```text
//! RENAL-MODEL <version> sha256:<hex digest of the body bytes>
//! {"kind":"gbc", ...}
//! ```
//!
//! The header is checked before the body is parsed, so an unsupported
//! version never yields a partially loaded model.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boosting::BoostedModel;
use crate::data::FeatureSpec;
use crate::error::{Error, Result};
use crate::forest::ImportanceRanking;
use crate::forest::ForestModel;
use crate::logistic::{InferenceRow, LogisticModel};
use crate::naive_bayes::NaiveBayesModel;
use crate::preprocess::Preprocessor;

pub const MAGIC: &str = "RENAL-MODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbc,
    Rf,
    Nb,
    Lr,
}

impl ModelKind {
    /// Report order: boosting, forest, naive Bayes, logistic regression.
    pub const ALL: [ModelKind; 4] = [ModelKind::Gbc, ModelKind::Rf, ModelKind::Nb, ModelKind::Lr];

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Gbc => "gbc",
            ModelKind::Rf => "rf",
            ModelKind::Nb => "nb",
            ModelKind::Lr => "lr",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Gbc => "Gradient Boosting Classifier",
            ModelKind::Rf => "Random Forest",
            ModelKind::Nb => "Naive Bayes",
            ModelKind::Lr => "Logistic Regression",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.model", self.slug())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainedModel {
    Boosting(BoostedModel),
    Forest(ForestModel),
    NaiveBayes(NaiveBayesModel),
    Logistic(LogisticModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Boosting(_) => ModelKind::Gbc,
            TrainedModel::Forest(_) => ModelKind::Rf,
            TrainedModel::NaiveBayes(_) => ModelKind::Nb,
            TrainedModel::Logistic(_) => ModelKind::Lr,
        }
    }

    /// `P(TRANSPLANTED)` for one normalized row.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedModel::Boosting(m) => m.predict_proba(x),
            TrainedModel::Forest(m) => m.predict_proba(x),
            TrainedModel::NaiveBayes(m) => m.predict_proba(x),
            TrainedModel::Logistic(m) => m.predict_proba(x),
        }
    }
}

/// How the artifact was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_train: usize,
    /// The experiment config in its canonical text form.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    /// Feature order expected by `preprocessor` and `model`.
    pub features: Vec<FeatureSpec>,
    pub preprocessor: Preprocessor,
    pub model: TrainedModel,
    pub provenance: Provenance,
    /// Out-of-bag permutation importance (forest only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceRanking>,
    /// Wald inference table (logistic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<Vec<InferenceRow>>,
}

/// A probability plus the imputed and normalized vectors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub imputed: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ModelArtifact {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Validates and predicts one raw record given in feature order; missing
    /// cells are imputed with the artifact's own fill values.
    pub fn predict_verbose(&self, row: &[Option<f64>]) -> Result<Prediction> {
        if row.len() != self.features.len() {
            return Err(Error::LengthMismatch {
                expected: self.features.len(),
                actual: row.len(),
            });
        }
        for (spec, v) in self.features.iter().zip(row) {
            if let Some(x) = v {
                spec.check(*x).map_err(|message| Error::Validation {
                    row: 1,
                    field: spec.name.clone(),
                    message,
                })?;
            }
        }
        let (imputed, normalized) = self.preprocessor.transform_row_verbose(row)?;
        let probability = self.model.predict_proba(&normalized)?;
        Ok(Prediction {
            probability,
            imputed,
            normalized,
        })
    }

    pub fn predict_record(&self, row: &[Option<f64>]) -> Result<f64> {
        Ok(self.predict_verbose(row)?.probability)
    }

    /// Canonical body bytes.
    pub fn body(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Hex sha256 of the canonical body.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.body()?)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = self.body()?;
        let mut out = format!(
            "{MAGIC} {FORMAT_VERSION} sha256:{}\n",
            hex::encode(Sha256::digest(&body))
        )
        .into_bytes();
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(corrupt("not a model file"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("malformed version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let expected = parts
            .next()
            .and_then(|d| d.strip_prefix("sha256:"))
            .ok_or_else(|| corrupt("malformed digest"))?;
        if parts.next().is_some() {
            return Err(corrupt("trailing header fields"));
        }
        let body = &bytes[nl + 1..];
        if hex::encode(Sha256::digest(body)) != expected {
            return Err(corrupt("digest mismatch (truncated or modified file)"));
        }
        let artifact: ModelArtifact =
            serde_json::from_slice(body).map_err(|e| Error::Corrupt(format!("body: {e}")))?;
        if artifact.model.kind() != artifact.kind {
            return Err(corrupt("model kind does not match its parameters"));
        }
        if artifact.preprocessor.n_features() != artifact.features.len() {
            return Err(corrupt("preprocessor width does not match feature list"));
        }
        Ok(artifact)
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    fs::write(path, artifact.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)
}
