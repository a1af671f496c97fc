//! Stateless reward endpoints.

use axum::extract::State;
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use venus_core::action::{parse_model_output, Action};
use venus_core::geometry::{BBox, ScreenSize};
use venus_core::reward::{grounding_reward, navigation_reward, GroundingTarget, NavigationTarget};
use venus_core::{RewardBreakdown64, RewardConfig64};

use crate::error::{ApiError, ApiJson};
use crate::AppState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingRequest {
    pub response: String,
    pub gt_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RewardConfig64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavigationRequest {
    pub response: String,
    pub gt_action: Action,
    pub screen: ScreenSize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RewardConfig64>,
}

/// One element of a batch; the presence of `gt_box` or `gt_action` selects
/// the kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RewardRequest {
    Grounding(GroundingRequest),
    Navigation(NavigationRequest),
}

fn effective(cfg: Option<RewardConfig64>, default: &RewardConfig64) -> Result<RewardConfig64, ApiError> {
    let cfg = cfg.unwrap_or(*default);
    cfg.validate().map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
    Ok(cfg)
}

impl GroundingRequest {
    pub fn score(&self, default: &RewardConfig64) -> Result<RewardBreakdown64, ApiError> {
        let cfg = effective(self.config, default)?;
        Ok(grounding_reward(&self.response, &GroundingTarget { gt_box: self.gt_box }, &cfg))
    }
}

impl NavigationRequest {
    pub fn score(&self, default: &RewardConfig64) -> Result<RewardBreakdown64, ApiError> {
        let cfg = effective(self.config, default)?;
        let target = NavigationTarget {
            gt_action: self.gt_action.clone(),
            screen: self.screen,
        };
        Ok(navigation_reward(&parse_model_output(&self.response), &target, &cfg))
    }
}

impl RewardRequest {
    pub fn score(&self, default: &RewardConfig64) -> Result<RewardBreakdown64, ApiError> {
        match self {
            RewardRequest::Grounding(r) => r.score(default),
            RewardRequest::Navigation(r) => r.score(default),
        }
    }

    fn from_value(v: Value) -> Result<Self, String> {
        let has = |k: &str| v.get(k).is_some();
        if has("gt_box") {
            serde_json::from_value(v).map(RewardRequest::Grounding).map_err(|e| e.to_string())
        } else if has("gt_action") {
            serde_json::from_value(v).map(RewardRequest::Navigation).map_err(|e| e.to_string())
        } else {
            Err("item has neither `gt_box` nor `gt_action`".to_string())
        }
    }
}

pub async fn grounding(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<GroundingRequest>,
) -> Result<Json<RewardBreakdown64>, ApiError> {
    req.score(&state.reward_config).map(Json)
}

pub async fn navigation(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<NavigationRequest>,
) -> Result<Json<RewardBreakdown64>, ApiError> {
    req.score(&state.reward_config).map(Json)
}

/// Scores every item or fails as a whole, naming the first bad index.
pub async fn batch(
    State(state): State<AppState>,
    ApiJson(items): ApiJson<Vec<Value>>,
) -> Result<Json<Vec<RewardBreakdown64>>, ApiError> {
    let mut out = Vec::with_capacity(items.len());
    for (i, v) in items.into_iter().enumerate() {
        let req = RewardRequest::from_value(v).map_err(|e| {
            ApiError::bad_request("invalid_body", format!("batch item {i} rejected"))
                .with_detail(serde_json::json!({ "index": i, "error": e }))
        })?;
        let b = req.score(&state.reward_config).map_err(|e| {
            let detail = serde_json::json!({ "index": i, "error": e.message });
            e.with_detail(detail)
        })?;
        out.push(b);
    }
    Ok(Json(out))
}

pub async fn config(State(state): State<AppState>) -> Json<RewardConfig64> {
    Json(state.reward_config)
}
