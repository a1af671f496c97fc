//! HTTP service: reward scoring for RL trainers and the trace-review
//! workflow for annotators.

pub mod error;
pub mod review;
pub mod review_api;
pub mod reward_api;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use tower_http::services::{ServeDir, ServeFile};
use venus_core::RewardConfig64;

pub use error::{ApiError, ErrorBody};
pub use review::{ReviewDecision, ReviewError, ReviewStatus, ReviewStore};
pub use review_api::ReviewHandle;

#[derive(Debug, Clone)]
pub struct AppState {
    pub reward_config: RewardConfig64,
    pub review: Option<Arc<ReviewHandle>>,
}

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub addr: Option<SocketAddr>,
    pub port: u16,
    pub reward_config: RewardConfig64,
    pub review_dataset: Option<PathBuf>,
    pub store_dir: Option<PathBuf>,
    /// Built UI bundle to serve under `/ui/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(health))
        .route("/v1/reward/config", get(reward_api::config))
        .route("/v1/reward/grounding", post(reward_api::grounding))
        .route("/v1/reward/navigation", post(reward_api::navigation))
        .route("/v1/reward/batch", post(reward_api::batch))
        .route("/v1/review/traces", get(review_api::list))
        .route("/v1/review/traces/{id}", get(review_api::get_trace))
        .route("/v1/review/traces/{id}/decision", post(review_api::post_decision))
        .route("/v1/review/traces/{id}/steps/{n}/screenshot", get(review_api::screenshot))
        .route("/v1/review/export", get(review_api::export));
    if let Some(dir) = ui_dir {
        let index = dir.join("index.html");
        app = app.nest_service("/ui", ServeDir::new(dir).fallback(ServeFile::new(index)));
    }
    app.fallback(not_found).with_state(state)
}

/// Builds the application state from a serve configuration.
pub fn build_state(cfg: &ServeConfig) -> Result<AppState, ServeError> {
    cfg.reward_config
        .validate()
        .map_err(|e| ServeError::Config(e.to_string()))?;
    let review = match (&cfg.review_dataset, &cfg.store_dir) {
        (Some(dataset), Some(store)) => {
            let s = ReviewStore::open_with_dataset(store, dataset)?;
            let base = dataset
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            tracing::info!(traces = s.traces().len(), decisions = s.decisions().len(), "review store opened");
            Some(Arc::new(ReviewHandle::new(s, base)))
        }
        (None, None) => None,
        _ => {
            return Err(ServeError::Config(
                "--review-dataset and --store must be given together".into(),
            ))
        }
    };
    Ok(AppState {
        reward_config: cfg.reward_config,
        review,
    })
}

/// Runs the service until the process is stopped.
pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    let state = build_state(&cfg)?;
    let addr = cfg.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], cfg.port)));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, cfg.ui_dir.clone())).await?;
    Ok(())
}
