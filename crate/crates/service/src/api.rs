use std::collections::BTreeMap;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use da6_core::env::{Action, CondKind, GridMap, Region};
use da6_core::interp::{probe_model, Aggregation, CmSummary, Heatmap, Layer, ProbeOptions, Scenario, Violation};
use da6_core::Error as CoreError;

use crate::registry::{CheckpointInfo, Registry};
use crate::AppState;

#[derive(Debug, Serialize)]
struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            violations: Vec::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let code = match status {
            StatusCode::PAYLOAD_TOO_LARGE => "payload_too_large",
            StatusCode::UNSUPPORTED_MEDIA_TYPE => "unsupported_media_type",
            StatusCode::UNPROCESSABLE_ENTITY => "invalid_body",
            _ => "bad_request",
        };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(violations) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "illegal_scenario",
                message: format!("scenario has {} violation(s)", violations.len()),
                violations,
            },
            CoreError::Config(m) | CoreError::Contract(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", m),
            CoreError::Parse { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_map", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Round to nine significant digits so floats serialize compactly and
/// identically across runs.
fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn sig9_grid(g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    g.iter().map(|r| r.iter().copied().map(sig9).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapBody {
    pub grid: Vec<Vec<f64>>,
    pub saliency: f64,
    pub encoder: String,
    pub layer: usize,
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

impl From<&Heatmap> for HeatmapBody {
    fn from(h: &Heatmap) -> Self {
        Self {
            grid: sig9_grid(&h.grid),
            saliency: sig9(h.saliency),
            encoder: h.source.encoder.clone(),
            layer: h.source.layer,
            aggregation: h.source.aggregation,
            head: h.source.head,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct InferRequest {
    pub scenario: Scenario,
    pub checkpoint_id: String,
    #[serde(default)]
    pub layer: Layer,
    #[serde(default)]
    pub agg: Aggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub checkpoint_id: String,
    pub variant: String,
    pub scenario_hash: String,
    pub action: Action,
    pub action_index: usize,
    pub scores: Vec<f64>,
    /// Head-averaged saliency heatmap; null for models without attention.
    pub heatmap: Option<HeatmapBody>,
    /// Per-head heatmaps when `agg` is `per-head`.
    pub heads: Vec<HeatmapBody>,
    pub cm_attention: Vec<CmSummary>,
    pub conditional_states: Vec<CondKind>,
}

#[derive(Debug, Serialize)]
struct RegionBody {
    name: Region,
    x_min: usize,
    x_max: usize,
    y_min: usize,
    y_max: usize,
}

#[derive(Debug, Serialize)]
struct MapBody {
    width: usize,
    height: usize,
    grid: Vec<String>,
    legend: BTreeMap<String, &'static str>,
    regions: Vec<RegionBody>,
}

fn map_body(map: &GridMap) -> MapBody {
    let legend = [
        ("#", "wall"),
        (".", "empty"),
        ("B", "agent start"),
        ("g", "star spawn"),
        ("r", "triangle spawn"),
        ("b", "star and triangle spawn"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let regions = Region::ALL
        .into_iter()
        .filter_map(|region| {
            let cells: Vec<_> = (0..map.width * map.height)
                .map(|i| map.pos(i))
                .filter(|&p| map.region(p) == region)
                .collect();
            let xs = cells.iter().map(|p| p.x as usize);
            let ys = cells.iter().map(|p| p.y as usize);
            Some(RegionBody {
                name: region,
                x_min: xs.clone().min()?,
                x_max: xs.max()?,
                y_min: ys.clone().min()?,
                y_max: ys.max()?,
            })
        })
        .collect();
    MapBody {
        width: map.width,
        height: map.height,
        grid: map.to_text().lines().map(str::to_string).collect(),
        legend,
        regions,
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/api/checkpoints", get(list_checkpoints))
        .route("/api/map", get(get_map))
        .route("/api/validate", post(validate))
        .route("/api/infer", post(infer))
        .route("/api/reload", post(reload))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn list_checkpoints(State(state): State<AppState>) -> Json<Vec<CheckpointInfo>> {
    Json(state.registry.read().await.list())
}

async fn get_map(State(state): State<AppState>) -> Json<MapBody> {
    Json(map_body(&state.registry.read().await.map))
}

#[derive(Debug, Deserialize)]
struct ValidateQuery {
    checkpoint_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct Verdict {
    valid: bool,
    violations: Vec<Violation>,
}

async fn validate(
    State(state): State<AppState>,
    Query(query): Query<ValidateQuery>,
    body: Result<Json<Scenario>, JsonRejection>,
) -> ApiResult<Verdict> {
    let Json(scenario) = body?;
    let registry = state.registry.read().await;
    let fallback = match &query.checkpoint_id {
        Some(id) => &lookup(&registry, id)?.map,
        None => &registry.map,
    };
    let map = scenario.resolve_map(fallback)?;
    let violations = scenario.validate(&map);
    Ok(Json(Verdict {
        valid: violations.is_empty(),
        violations,
    }))
}

fn lookup<'a>(registry: &'a Registry, id: &str) -> Result<&'a crate::registry::Entry, ApiError> {
    registry
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_checkpoint", format!("no checkpoint {id:?}")))
}

async fn infer(State(state): State<AppState>, body: Result<Json<InferRequest>, JsonRejection>) -> ApiResult<InferResponse> {
    let Json(req) = body?;
    let registry = state.registry.read().await;
    let entry = lookup(&registry, &req.checkpoint_id)?;
    let map = req.scenario.resolve_map(&entry.map)?;
    if map != entry.map {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "map_mismatch",
            "scenario map differs from the checkpoint's map",
        ));
    }
    let agent = if req.scenario.observer < entry.models.len() { req.scenario.observer } else { 0 };
    let model = &entry.models[agent];
    let mean = probe_model(
        model,
        &req.scenario,
        &map,
        ProbeOptions {
            layer: req.layer,
            agg: Aggregation::MeanHeads,
        },
    )?;
    let heads = match req.agg {
        Aggregation::PerHead => probe_model(
            model,
            &req.scenario,
            &map,
            ProbeOptions {
                layer: req.layer,
                agg: Aggregation::PerHead,
            },
        )?
        .heatmaps
        .iter()
        .map(HeatmapBody::from)
        .collect(),
        Aggregation::MeanHeads => Vec::new(),
    };
    let cm_attention = mean
        .cm_attention
        .iter()
        .map(|c| CmSummary {
            saliency: sig9(c.saliency),
            grid: sig9_grid(&c.grid),
            top: c
                .top
                .iter()
                .map(|t| da6_core::interp::PatchWeight {
                    weight: sig9(t.weight),
                    ..t.clone()
                })
                .collect(),
            ..c.clone()
        })
        .collect();
    Ok(Json(InferResponse {
        checkpoint_id: req.checkpoint_id,
        variant: mean.variant.name().to_string(),
        scenario_hash: mean.scenario_hash,
        action: mean.action,
        action_index: mean.action.index(),
        scores: mean.scores.iter().copied().map(sig9).collect(),
        heatmap: mean.heatmaps.first().map(HeatmapBody::from),
        heads,
        cm_attention,
        conditional_states: mean.cond,
    }))
}

async fn reload(State(state): State<AppState>) -> ApiResult<Vec<CheckpointInfo>> {
    let fresh = Registry::load(&state.config)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "reload_failed", e.to_string()))?;
    let mut registry = state.registry.write().await;
    *registry = fresh;
    Ok(Json(registry.list()))
}
