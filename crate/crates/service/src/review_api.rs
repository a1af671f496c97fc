//! Review endpoints backed by a [`ReviewStore`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::Json;
use serde::Serialize;
use venus_core::trajectory::{resolve_screenshot, Trajectory};

use crate::error::{ApiError, ApiJson};
use crate::review::{apply_decision, DecisionInput, Entry, ReviewDecision, ReviewError, ReviewStatus, ReviewStore};
use crate::AppState;

/// Shared store plus the directory screenshot references resolve against.
///
/// Writers are serialized by the write lock; readers see the index as of
/// the last completed append.
#[derive(Debug)]
pub struct ReviewHandle {
    store: RwLock<ReviewStore>,
    screenshot_base: PathBuf,
}

impl ReviewHandle {
    pub fn new(store: ReviewStore, screenshot_base: impl Into<PathBuf>) -> Self {
        Self {
            store: RwLock::new(store),
            screenshot_base: screenshot_base.into(),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ReviewStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, ReviewStore> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let msg = e.to_string();
        match e {
            ReviewError::UnknownTrace(_) => ApiError::not_found("unknown_trace", msg),
            ReviewError::InvalidFix { step, .. } => {
                ApiError::bad_request("invalid_fix", msg).with_detail(serde_json::json!({ "step": step }))
            }
            ReviewError::InvalidDecision(_) => ApiError::bad_request("invalid_decision", msg),
            _ => ApiError::internal(msg),
        }
    }
}

fn handle(state: &AppState) -> Result<&Arc<ReviewHandle>, ApiError> {
    state
        .review
        .as_ref()
        .ok_or_else(|| ApiError::not_found("review_disabled", "no review dataset is loaded"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub task: String,
    pub source: String,
    pub category: String,
    pub steps: usize,
    pub status: ReviewStatus,
}

fn summary(t: &Trajectory, e: &Entry) -> TraceSummary {
    TraceSummary {
        trace_id: t.trace_id.clone(),
        task: t.task.clone(),
        source: t.source.clone(),
        category: t.category.clone(),
        steps: t.len(),
        status: e.status,
    }
}

pub async fn list(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<TraceSummary>>, ApiError> {
    let status = match q.get("status").map(String::as_str) {
        None | Some("") | Some("all") => None,
        Some(s) => Some(ReviewStatus::parse(s).ok_or_else(|| {
            ApiError::bad_request("invalid_query", format!("unknown status `{s}`"))
                .with_detail(serde_json::json!({ "allowed": ["pending", "accepted", "rejected", "fixed", "all"] }))
        })?),
    };
    let store = handle(&state)?.read();
    Ok(Json(store.list(status).into_iter().map(|(t, e)| summary(t, e)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceDetail {
    pub status: ReviewStatus,
    pub decision: Option<ReviewDecision>,
    pub trace: Trajectory,
    /// One URL per step, in step order.
    pub screenshots: Vec<String>,
    /// The trace as it would be exported under the current decision.
    pub result: Option<Trajectory>,
}

fn screenshot_url(id: &str, n: u32) -> String {
    format!("/v1/review/traces/{}/steps/{n}/screenshot", encode_segment(id))
}

/// Percent-encodes everything outside the unreserved URL set.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn detail(store: &ReviewStore, id: &str) -> Result<TraceDetail, ApiError> {
    let t = store
        .trace(id)
        .ok_or_else(|| ApiError::not_found("unknown_trace", format!("unknown trace `{id}`")))?;
    let e = store.entry(id).expect("indexed");
    Ok(TraceDetail {
        status: e.status,
        decision: e.decision.clone(),
        screenshots: t.steps.iter().map(|s| screenshot_url(id, s.index)).collect(),
        result: e.decision.as_ref().and_then(|d| apply_decision(t, d)),
        trace: t.clone(),
    })
}

pub async fn get_trace(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<TraceDetail>, ApiError> {
    let store = handle(&state)?.read();
    detail(&store, &id).map(Json)
}

pub async fn post_decision(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(input): ApiJson<DecisionInput>,
) -> Result<Json<TraceDetail>, ApiError> {
    let h = handle(&state)?;
    let mut store = h.write();
    let d = store.record(&id, input)?;
    tracing::info!(trace_id = %d.trace_id, verdict = ?d.verdict, reviewer = %d.reviewer, "decision recorded");
    detail(&store, &id).map(Json)
}

pub async fn export(State(state): State<AppState>) -> Result<Response, ApiError> {
    let body = handle(&state)?.read().export_string();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

pub async fn screenshot(
    State(state): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let h = handle(&state)?;
    let n: u32 = n
        .parse()
        .map_err(|_| ApiError::bad_request("invalid_path", format!("step `{n}` is not a number")))?;
    let reference = {
        let store = h.read();
        let t = store
            .trace(&id)
            .ok_or_else(|| ApiError::not_found("unknown_trace", format!("unknown trace `{id}`")))?;
        t.steps
            .iter()
            .find(|s| s.index == n)
            .map(|s| s.screenshot_ref.clone())
            .ok_or_else(|| ApiError::not_found("unknown_step", format!("trace `{id}` has no step {n}")))?
    };
    let Some(path) = resolve_screenshot(&h.screenshot_base, &reference) else {
        return Ok(Redirect::temporary(&reference).into_response());
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok((
            StatusCode::OK,
            [(header::CONTENT_TYPE, content_type(&path))],
            Body::from(bytes),
        )
            .into_response()),
        Err(e) => Err(ApiError::not_found("screenshot_missing", format!("screenshot for step {n} is unavailable"))
            .with_detail(serde_json::json!({ "reference": reference, "error": e.to_string() }))),
    }
}
