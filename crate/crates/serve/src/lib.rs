//! HTTP decision-support service over saved model artifacts.
//!
//! Endpoints:
//!
//! | method | path          | body                 |
//! |--------|---------------|----------------------|
//! | GET    | `/health`     |                      |
//! | POST   | `/predict`    | record               |
//! | POST   | `/whatif`     | [`wire::WhatIfRequest`] |
//! | GET    | `/importance` |                      |
//! | GET    | `/inference`  |                      |
//!
//! Models are read once from a directory of `<kind>.model` files and never
//! change afterwards. Until they are installed every model endpoint answers
//! 503. Bad records and sweeps answer 400 with `{"error": ...}`.

pub mod wire;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower_http::cors::CorsLayer;

use renal_core::artifact::{load_model, ModelArtifact, ModelKind};
use renal_core::data::Outcome;
use renal_core::Error as CoreError;

use wire::*;

/// Kind marked primary in prediction responses.
pub const PRIMARY: ModelKind = ModelKind::Gbc;
/// Upper bound on what-if grid size.
pub const MAX_STEPS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("no model files found in {0}")]
    NoModels(PathBuf),
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: CoreError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct LoadedModel {
    pub artifact: ModelArtifact,
    /// sha256 of the artifact body, computed at load.
    pub digest: String,
}

/// Immutable set of loaded artifacts in report order.
#[derive(Debug)]
pub struct ModelSet {
    models: Vec<LoadedModel>,
}

impl ModelSet {
    pub fn new(artifacts: Vec<ModelArtifact>) -> Result<Self, CoreError> {
        let mut models = artifacts
            .into_iter()
            .map(|artifact| {
                let digest = artifact.digest()?;
                Ok(LoadedModel { artifact, digest })
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        models.sort_by_key(|m| m.artifact.kind);
        Ok(ModelSet { models })
    }

    pub fn models(&self) -> &[LoadedModel] {
        &self.models
    }

    pub fn get(&self, kind: ModelKind) -> Option<&LoadedModel> {
        self.models.iter().find(|m| m.artifact.kind == kind)
    }
}

/// Loads every `<kind>.model` present in `dir`.
pub fn load_model_dir(dir: &Path) -> Result<ModelSet, ServeError> {
    let mut artifacts = Vec::new();
    for kind in ModelKind::ALL {
        let path = dir.join(kind.file_name());
        if !path.exists() {
            continue;
        }
        let artifact = load_model(&path).map_err(|source| ServeError::Model {
            path: path.clone(),
            source,
        })?;
        log::info!("loaded {} from {}", kind.display_name(), path.display());
        artifacts.push(artifact);
    }
    if artifacts.is_empty() {
        return Err(ServeError::NoModels(dir.to_path_buf()));
    }
    ModelSet::new(artifacts).map_err(|source| ServeError::Model {
        path: dir.to_path_buf(),
        source,
    })
}

struct Shared {
    models: OnceLock<ModelSet>,
    threshold: f64,
}

/// Shared handler state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

impl AppState {
    /// State with no models yet; model endpoints answer 503.
    pub fn new(threshold: f64) -> Result<Self, ServeError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ServeError::BadThreshold(threshold));
        }
        Ok(AppState {
            inner: Arc::new(Shared {
                models: OnceLock::new(),
                threshold,
            }),
        })
    }

    pub fn with_models(models: ModelSet, threshold: f64) -> Result<Self, ServeError> {
        let state = AppState::new(threshold)?;
        state.install(models);
        Ok(state)
    }

    /// Installs the model set. Returns false if one was already installed.
    pub fn install(&self, models: ModelSet) -> bool {
        self.inner.models.set(models).is_ok()
    }

    pub fn models(&self) -> Option<&ModelSet> {
        self.inner.models.get()
    }

    pub fn threshold(&self) -> f64 {
        self.inner.threshold
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn loaded(state: &AppState) -> Result<&ModelSet, ApiError> {
    state.models().ok_or_else(|| {
        ApiError(
            StatusCode::SERVICE_UNAVAILABLE,
            "models are not loaded yet".into(),
        )
    })
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed body: {e}")))
}

/// Lays a named record onto an artifact's feature order.
fn record_row(artifact: &ModelArtifact, record: &RecordBody) -> Result<Vec<Option<f64>>, ApiError> {
    if let Some(unknown) = record
        .keys()
        .find(|k| !artifact.features.iter().any(|f| &f.name == *k))
    {
        return Err(bad_request(format!("unknown field `{unknown}`")));
    }
    Ok(artifact
        .features
        .iter()
        .map(|f| record.get(&f.name).copied().flatten())
        .collect())
}

fn core_to_api(e: CoreError) -> ApiError {
    match e {
        CoreError::Validation { field, message, .. } => bad_request(format!("field `{field}`: {message}")),
        CoreError::LengthMismatch { .. } => bad_request(e.to_string()),
        other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

/// The prediction `/predict` returns for `record`.
pub fn predict(models: &ModelSet, threshold: f64, record: &RecordBody) -> Result<PredictionResponse, String> {
    predict_inner(models, threshold, record).map_err(|e| e.1)
}

fn predict_inner(
    models: &ModelSet,
    threshold: f64,
    record: &RecordBody,
) -> Result<PredictionResponse, ApiError> {
    let features = models.models[0].artifact.feature_names();
    let mut out = Vec::with_capacity(models.models.len());
    for m in &models.models {
        let row = record_row(&m.artifact, record)?;
        let p = m.artifact.predict_verbose(&row).map_err(core_to_api)?;
        out.push(ModelPrediction {
            kind: m.artifact.kind,
            model: m.artifact.kind.display_name().to_string(),
            primary: m.artifact.kind == PRIMARY,
            probability: p.probability,
            decision: Outcome::from_positive(p.probability >= threshold).to_string(),
            digest: m.digest.clone(),
            imputed: p.imputed,
            normalized: p.normalized,
        });
    }
    Ok(PredictionResponse {
        threshold,
        features,
        models: out,
    })
}

/// `steps` equally spaced values from `lo` to `hi`, endpoints exact.
pub fn sweep_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let last = steps.saturating_sub(1).max(1) as f64;
    (0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * (i as f64 / last)
            }
        })
        .collect()
}

fn whatif_inner(models: &ModelSet, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
    if req.steps < 2 || req.steps > MAX_STEPS {
        return Err(bad_request(format!("steps must lie in 2..={MAX_STEPS}, got {}", req.steps)));
    }
    if req.lo > req.hi {
        return Err(bad_request(format!("need lo <= hi, got lo = {} and hi = {}", req.lo, req.hi)));
    }
    let spec = models.models[0]
        .artifact
        .features
        .iter()
        .find(|f| f.name == req.feature)
        .ok_or_else(|| bad_request(format!("unknown sweep feature `{}`", req.feature)))?;
    for bound in [req.lo, req.hi] {
        spec.check(bound)
            .map_err(|m| bad_request(format!("sweep range for `{}`: {m}", req.feature)))?;
    }
    let mut record = req.record.clone();
    let mut points = Vec::with_capacity(req.steps);
    for value in sweep_grid(req.lo, req.hi, req.steps) {
        record.insert(req.feature.clone(), Some(value));
        let probabilities = models
            .models
            .iter()
            .map(|m| {
                let row = record_row(&m.artifact, &record)?;
                let probability = m.artifact.predict_record(&row).map_err(core_to_api)?;
                Ok(ModelProbability {
                    kind: m.artifact.kind,
                    probability,
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        points.push(WhatIfPoint { value, probabilities });
    }
    Ok(WhatIfResponse {
        feature: req.feature.clone(),
        points,
    })
}

async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    let models = state.models().map_or_else(Vec::new, |set| {
        set.models
            .iter()
            .map(|m| LoadedModelInfo {
                kind: m.artifact.kind,
                model: m.artifact.kind.display_name().to_string(),
                digest: m.digest.clone(),
            })
            .collect()
    });
    Json(HealthResponse {
        status: if state.models().is_some() { "ok" } else { "loading" }.to_string(),
        threshold: state.threshold(),
        models,
    })
}

fn json<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

async fn predict_handler(State(state): State<AppState>, body: Bytes) -> Response {
    let run = || {
        let models = loaded(&state)?;
        let record: RecordBody = parse_body(&body)?;
        predict_inner(models, state.threshold(), &record)
    };
    run().map_or_else(IntoResponse::into_response, json)
}

async fn whatif_handler(State(state): State<AppState>, body: Bytes) -> Response {
    let run = || {
        let models = loaded(&state)?;
        let req: WhatIfRequest = parse_body(&body)?;
        whatif_inner(models, &req)
    };
    run().map_or_else(IntoResponse::into_response, json)
}

async fn importance_handler(State(state): State<AppState>) -> Response {
    let run = || {
        let models = loaded(&state)?;
        let rf = models
            .get(ModelKind::Rf)
            .and_then(|m| m.artifact.importance.as_ref().map(|imp| (m, imp)));
        let (m, imp) = rf.ok_or_else(|| {
            ApiError(StatusCode::NOT_FOUND, "no random forest importance loaded".into())
        })?;
        Ok::<_, ApiError>(ImportanceResponse {
            digest: m.digest.clone(),
            trees_used: imp.trees_used,
            rows_skipped: imp.rows_skipped,
            entries: imp.ranked().into_iter().cloned().collect(),
        })
    };
    run().map_or_else(IntoResponse::into_response, json)
}

async fn inference_handler(State(state): State<AppState>) -> Response {
    let run = || {
        let models = loaded(&state)?;
        let lr = models
            .get(ModelKind::Lr)
            .and_then(|m| m.artifact.inference.as_ref().map(|rows| (m, rows)));
        let (m, rows) = lr.ok_or_else(|| {
            ApiError(StatusCode::NOT_FOUND, "no logistic inference table loaded".into())
        })?;
        Ok::<_, ApiError>(InferenceResponse {
            digest: m.digest.clone(),
            rows: rows.clone(),
        })
    };
    run().map_or_else(IntoResponse::into_response, json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict_handler))
        .route("/whatif", post(whatif_handler))
        .route("/importance", get(importance_handler))
        .route("/inference", get(inference_handler))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr`, loads models from `dir` in the background (answering 503
/// meanwhile) and serves until Ctrl-C.
pub async fn run(addr: SocketAddr, dir: PathBuf, threshold: f64) -> Result<(), ServeError> {
    let state = AppState::new(threshold)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let (fail_tx, fail_rx) = tokio::sync::oneshot::channel();
    {
        let state = state.clone();
        tokio::task::spawn_blocking(move || match load_model_dir(&dir) {
            Ok(set) => {
                state.install(set);
                log::info!("models loaded");
            }
            Err(e) => {
                let _ = fail_tx.send(e);
            }
        });
    }
    let server = axum::serve(listener, router(state)).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    });
    // A dropped sender (successful load) disables the second branch.
    tokio::select! {
        res = server => res?,
        Ok(e) = fail_rx => return Err(e),
    }
    Ok(())
}
