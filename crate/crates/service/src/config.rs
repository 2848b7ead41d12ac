use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

/// Environment variable that overrides the configured port.
pub const PORT_ENV: &str = "DA6_PORT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Directory scanned for `*.ckpt` files; ids are the file stems.
    pub checkpoint_dir: PathBuf,
    /// Map served by `/api/map`; the built-in map when unset.
    pub map: Option<PathBuf>,
    pub max_body_bytes: usize,
    /// Replaces every loaded model's evaluation τ seed when set.
    pub tau_seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            checkpoint_dir: PathBuf::from("checkpoints"),
            map: None,
            max_body_bytes: 1 << 20,
            tau_seed: None,
        }
    }
}

impl ServiceConfig {
    /// Reads JSON; relative paths resolve against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        let mut config: Self = serde_json::from_str(&text).map_err(da6_core::Error::from)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.checkpoint_dir = base.join(&config.checkpoint_dir);
        config.map = config.map.map(|m| base.join(m));
        Ok(config)
    }

    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(port) = std::env::var(PORT_ENV) {
            self.port = port
                .parse()
                .map_err(|_| ServiceError::Config(format!("{PORT_ENV}={port:?} is not a valid port")))?;
        }
        Ok(self)
    }

    pub fn socket_addr(&self) -> Result<SocketAddr> {
        let ip: IpAddr = self
            .bind
            .parse()
            .map_err(|_| ServiceError::Config(format!("invalid bind address {:?}", self.bind)))?;
        Ok(SocketAddr::new(ip, self.port))
    }
}
