//! HTTP API for what-if probing of trained checkpoints.
//!
//! | method | path               | body                                       |
//! |--------|--------------------|--------------------------------------------|
//! | GET    | `/api/checkpoints` |                                            |
//! | GET    | `/api/map`         |                                            |
//! | POST   | `/api/validate`    | scenario                                   |
//! | POST   | `/api/infer`       | `{scenario, checkpoint_id, layer?, agg?}`  |
//! | POST   | `/api/reload`      |                                            |
//!
//! Errors come back as `{code, message}` with an optional `violations`
//! list.

mod api;
mod config;
mod registry;

pub use api::{router, InferRequest, InferResponse};
pub use config::{ServiceConfig, PORT_ENV};
pub use registry::{CheckpointInfo, Registry};

use std::sync::Arc;

use tokio::sync::RwLock;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] da6_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// Shared state behind every handler.
#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<RwLock<Registry>>,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<Self> {
        let registry = Registry::load(&config)?;
        Ok(Self {
            registry: Arc::new(RwLock::new(registry)),
            config: Arc::new(config),
        })
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let addr = config.socket_addr()?;
    let state = AppState::load(config)?;
    let n = state.registry.read().await.len();
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Io {
        context: format!("binding {addr}"),
        source,
    })?;
    log::info!("serving {n} checkpoints on http://{addr}");
    axum::serve(listener, router(state)).await.map_err(|source| ServiceError::Io {
        context: "serving".into(),
        source,
    })
}
