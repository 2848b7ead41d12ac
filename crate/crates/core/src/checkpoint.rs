//! Binary checkpoint format.
//!
//! ```text
//! b"DA6CKPT1"                      magic
//! u64 little-endian                manifest length in bytes
//! manifest                         UTF-8 JSON, see `Manifest`
//! f32 little-endian buffers        one per manifest parameter, in order
//! ```
//!
//! Parameter names are `agent{i}/{group}/{name}` with group one of
//! `online`, `target`, `adam_m`, `adam_v`. Serialization is
//! deterministic, so save → load → save reproduces the same bytes.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{load_map, EnvConfig, EnvSpec, GridMap};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DA6CKPT1";

const GROUPS: [&str; 4] = ["online", "target", "adam_m", "adam_v"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSection {
    pub map: String,
    pub config: EnvConfig,
}

impl EnvSection {
    pub fn grid(&self) -> Result<GridMap> {
        load_map(&self.map)
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        EnvSpec::new(self.grid()?, &self.config)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub episodes: usize,
    pub env_steps: u64,
}

/// Serializable ChaCha8 position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
}

#[derive(Clone, Debug)]
pub struct LearnerState {
    pub online: ParamStore<f32>,
    pub target: Option<ParamStore<f32>>,
    pub adam: Option<AdamState>,
    pub grad_steps: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub env: EnvSection,
    pub train: Option<TrainConfig>,
    pub progress: Progress,
    pub rng: Vec<RngState>,
    pub learners: Vec<LearnerState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LearnerEntry {
    grad_steps: u64,
    adam_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    env: EnvSection,
    train: Option<TrainConfig>,
    progress: Progress,
    rng: Vec<RngState>,
    learners: Vec<LearnerEntry>,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    /// Inference-only checkpoint holding one online network per agent.
    pub fn from_models(models: &[Model<f32>], env: EnvSection) -> Result<Self> {
        let model = models
            .first()
            .ok_or_else(|| Error::Checkpoint("no models".into()))?
            .config()
            .clone();
        if models.iter().any(|m| m.config() != &model) {
            return Err(Error::Checkpoint("agents use different model configs".into()));
        }
        Ok(Self {
            model,
            env,
            train: None,
            progress: Progress::default(),
            rng: Vec::new(),
            learners: models
                .iter()
                .map(|m| LearnerState {
                    online: m.params().clone(),
                    target: None,
                    adam: None,
                    grad_steps: 0,
                })
                .collect(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.learners.len()
    }

    pub fn model(&self, agent: usize) -> Result<Model<f32>> {
        let learner = self
            .learners
            .get(agent)
            .ok_or_else(|| Error::Checkpoint(format!("no agent {agent} in checkpoint")))?;
        Model::from_params(self.model.clone(), learner.online.clone())
    }

    pub fn models(&self) -> Result<Vec<Model<f32>>> {
        (0..self.learners.len()).map(|i| self.model(i)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut params = Vec::new();
        let mut buffers: Vec<&Tensor<f32>> = Vec::new();
        for (i, learner) in self.learners.iter().enumerate() {
            let stores = [
                Some(&learner.online),
                learner.target.as_ref(),
                learner.adam.as_ref().map(|a| &a.m),
                learner.adam.as_ref().map(|a| &a.v),
            ];
            for (group, store) in GROUPS.iter().zip(stores) {
                let Some(store) = store else { continue };
                for (_, name, t) in store.iter() {
                    params.push(ParamEntry {
                        name: format!("agent{i}/{group}/{name}"),
                        shape: t.shape().to_vec(),
                        dtype: "f32".into(),
                    });
                    buffers.push(t);
                }
            }
        }
        let manifest = Manifest {
            model: self.model.clone(),
            env: self.env.clone(),
            train: self.train.clone(),
            progress: self.progress.clone(),
            rng: self.rng.clone(),
            learners: self
                .learners
                .iter()
                .map(|l| LearnerEntry {
                    grad_steps: l.grad_steps,
                    adam_step: l.adam.as_ref().map(|a| a.step),
                })
                .collect(),
            params,
        };
        let json = serde_json::to_vec(&manifest)?;
        let floats: usize = buffers.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in buffers {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing DA6CKPT1 magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        manifest.model.validate()?;
        let mut cursor = 16 + len;

        let n = manifest.learners.len();
        let mut stores: Vec<[Option<ParamStore<f32>>; 4]> = (0..n).map(|_| Default::default()).collect();
        for entry in &manifest.params {
            if entry.dtype != "f32" {
                return Err(bad(&format!("unsupported dtype {}", entry.dtype)));
            }
            let mut parts = entry.name.splitn(3, '/');
            let (agent, group, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(g), Some(n)) => (a, g, n),
                _ => return Err(bad(&format!("malformed parameter name {}", entry.name))),
            };
            let agent: usize = agent
                .strip_prefix("agent")
                .and_then(|s| s.parse().ok())
                .filter(|&i| i < n)
                .ok_or_else(|| bad(&format!("bad agent in {}", entry.name)))?;
            let group = GROUPS
                .iter()
                .position(|g| *g == group)
                .ok_or_else(|| bad(&format!("bad group in {}", entry.name)))?;
            let count: usize = entry.shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 4 * count)
                .ok_or_else(|| bad("truncated parameter data"))?;
            cursor += 4 * count;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            stores[agent][group]
                .get_or_insert_with(ParamStore::new)
                .insert(name, Tensor::new(entry.shape.clone(), data)?);
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        let learners = stores
            .into_iter()
            .zip(&manifest.learners)
            .map(|([online, target, m, v], entry)| {
                let online = online.ok_or_else(|| bad("learner without online parameters"))?;
                let adam = match (m, v, entry.adam_step) {
                    (Some(m), Some(v), Some(step)) => Some(AdamState { step, m, v }),
                    (None, None, None) => None,
                    _ => return Err(bad("incomplete optimizer state")),
                };
                Ok(LearnerState {
                    online,
                    target,
                    adam,
                    grad_steps: entry.grad_steps,
                })
            })
            .collect::<Result<_>>()?;
        let ckpt = Self {
            model: manifest.model,
            env: manifest.env,
            train: manifest.train,
            progress: manifest.progress,
            rng: manifest.rng,
            learners,
        };
        // layout check
        for i in 0..ckpt.learners.len() {
            ckpt.model(i)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
