use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use super::policy::LinearSchedule;
use crate::env::{CondKind, EnvConfig, DEFAULT_MAP};
use crate::error::{Error, Result};
use crate::model::{ArchDims, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonConfig {
    pub start: f64,
    pub end: f64,
    /// Environment steps over which ε decays linearly.
    pub steps: u64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            steps: 100_000,
        }
    }
}

impl EpsilonConfig {
    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.start,
            end: self.end,
            steps: self.steps,
        }
    }
}

/// Training run settings, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Map file, relative to the config file. Ignored when `map_text` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_text: Option<String>,
    pub env: EnvConfig,
    pub variant: Variant,
    /// Enabled conditional states; empty means none.
    pub cond: Vec<CondKind>,
    pub arch: ArchDims,
    pub episodes: usize,
    pub gamma: f64,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions an agent must have stored before it starts updating.
    pub warmup: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    pub epsilon: EpsilonConfig,
    pub grad_clip: Option<f64>,
    /// Episodes between greedy evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes between checkpoints; 0 writes one only at the end.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            map: None,
            map_text: None,
            env: EnvConfig::default(),
            variant: Variant::Da6Iqn,
            cond: vec![CondKind::GPos, CondKind::OPos],
            arch: ArchDims::default(),
            episodes: 5000,
            gamma: 0.9,
            optimizer: AdamConfig::default(),
            batch_size: 32,
            replay_capacity: 100_000,
            warmup: 1000,
            target_sync: 2000,
            epsilon: EpsilonConfig::default(),
            grad_clip: Some(10.0),
            eval_every: 0,
            eval_episodes: 10,
            checkpoint_every: 100,
            seed: 0,
            trace: false,
        }
    }
}

impl TrainConfig {
    /// Reads a config file and inlines the referenced map.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        if config.map_text.is_none() {
            if let Some(map) = &config.map {
                let map = path.parent().unwrap_or(Path::new(".")).join(map);
                config.map_text = Some(std::fs::read_to_string(&map).map_err(|e| Error::io(&map, e))?);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn map_source(&self) -> &str {
        self.map_text.as_deref().unwrap_or(DEFAULT_MAP)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        for e in [self.epsilon.start, self.epsilon.end] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("epsilon {e} outside [0, 1]"));
            }
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync == 0 {
            return bad("batch size, replay capacity and target sync must be positive".into());
        }
        if self.optimizer.lr <= 0.0 {
            return bad("learning rate must be positive".into());
        }
        let mut seen = self.cond.clone();
        seen.dedup();
        if seen.len() != self.cond.len() {
            return bad("duplicate conditional state".into());
        }
        Ok(())
    }
}
