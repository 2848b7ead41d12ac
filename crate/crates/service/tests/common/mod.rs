#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use da6_core::checkpoint::{Checkpoint, EnvSection};
use da6_core::env::{AgentEntry, AgentType, CondKind, EnvConfig, DEFAULT_MAP};
use da6_core::model::{ArchDims, Model, ModelConfig, Variant};
use da6_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub fn dims() -> ArchDims {
    ArchDims {
        dim: 8,
        heads: 2,
        cond_layers: 1,
        local_layers: 1,
        ff_mult: 2,
        head_hidden: 16,
        n_cos: 8,
        train_quantiles: 4,
        eval_quantiles: 8,
        ..ArchDims::default()
    }
}

pub fn write_checkpoint(dir: &Path, id: &str, variant: Variant, cond: &[CondKind], seed: u64) {
    let config = ModelConfig::build(variant, cond, 25, 25, &dims()).unwrap();
    let env = EnvSection {
        map: DEFAULT_MAP.into(),
        config: EnvConfig {
            roster: vec![AgentEntry::of(AgentType::A), AgentEntry::of(AgentType::B)],
            ..EnvConfig::default()
        },
    };
    let models: Vec<Model<f32>> = (0..2).map(|i| Model::new(config.clone(), seed + i).unwrap()).collect();
    Checkpoint::from_models(&models, env)
        .unwrap()
        .save(dir.join(format!("{id}.ckpt")))
        .unwrap();
}

pub fn app(dir: &Path) -> Router {
    let config = ServiceConfig {
        checkpoint_dir: dir.to_path_buf(),
        max_body_bytes: 16 * 1024,
        ..ServiceConfig::default()
    };
    router(AppState::load(config).unwrap())
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

pub fn scenario() -> serde_json::Value {
    serde_json::json!({
        "name": "star to the right",
        "agents": [{"type": "A", "x": 12, "y": 11}, {"type": "B", "x": 13, "y": 12}],
        "objects": [{"type": "star", "x": 14, "y": 11}, {"type": "triangle", "x": 10, "y": 10}],
        "observer": 0
    })
}

pub fn infer_body(id: &str, agg: &str) -> String {
    serde_json::json!({"scenario": scenario(), "checkpoint_id": id, "agg": agg}).to_string()
}
