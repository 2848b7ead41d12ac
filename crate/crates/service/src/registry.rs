use std::collections::BTreeMap;

use serde::Serialize;

use da6_core::checkpoint::Checkpoint;
use da6_core::env::{load_map, CondKind, GridMap, DEFAULT_MAP};
use da6_core::model::{Model, Variant};

use crate::config::ServiceConfig;
use crate::{Result, ServiceError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointInfo {
    pub id: String,
    pub variant: Variant,
    pub conditional_states: Vec<CondKind>,
    pub agents: usize,
    pub map_width: usize,
    pub map_height: usize,
}

pub struct Entry {
    pub info: CheckpointInfo,
    pub checkpoint: Checkpoint,
    pub models: Vec<Model<f32>>,
    pub map: GridMap,
}

/// Immutable snapshot of the checkpoint directory and the served map.
pub struct Registry {
    pub map: GridMap,
    entries: BTreeMap<String, Entry>,
}

impl Registry {
    pub fn load(config: &ServiceConfig) -> Result<Self> {
        let map = match &config.map {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
                    context: format!("reading {}", path.display()),
                    source,
                })?;
                load_map(&text)?
            }
            None => load_map(DEFAULT_MAP)?,
        };
        let dir = &config.checkpoint_dir;
        let listing = std::fs::read_dir(dir).map_err(|source| ServiceError::Io {
            context: format!("reading checkpoint directory {}", dir.display()),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for item in listing {
            let path = item
                .map_err(|source| ServiceError::Io {
                    context: format!("listing {}", dir.display()),
                    source,
                })?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some("ckpt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let mut checkpoint = match Checkpoint::load(&path) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
            };
            if let Some(seed) = config.tau_seed {
                checkpoint.model.tau_seed = seed;
            }
            let ckpt_map = checkpoint.env.grid()?;
            let models = checkpoint.models()?;
            entries.insert(
                id.clone(),
                Entry {
                    info: CheckpointInfo {
                        id,
                        variant: checkpoint.model.variant,
                        conditional_states: checkpoint.model.cond.clone(),
                        agents: checkpoint.num_agents(),
                        map_width: ckpt_map.width,
                        map_height: ckpt_map.height,
                    },
                    checkpoint,
                    models,
                    map: ckpt_map,
                },
            );
        }
        Ok(Self { map, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.get(id)
    }

    pub fn list(&self) -> Vec<CheckpointInfo> {
        self.entries.values().map(|e| e.info.clone()).collect()
    }
}
