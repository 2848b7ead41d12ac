use serde::{Deserialize, Serialize};

use super::map::{GridMap, ObjectKind, Region};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
    A,
    B,
    C,
    D,
}

impl AgentType {
    /// Default task assignment per agent type.
    pub fn default_assignment(self) -> Assignment {
        use ObjectKind::*;
        use Region::*;
        let (symbols, regions) = match self {
            AgentType::A => (vec![Star], vec![Gamma, Lambda]),
            AgentType::B => (vec![Triangle], vec![Delta, Theta]),
            AgentType::C => (vec![Star, Triangle], vec![Gamma, Delta]),
            AgentType::D => (vec![Star, Triangle], vec![Theta, Lambda]),
        };
        Assignment { symbols, regions }
    }
}

/// Which objects an agent is rewarded for, and where.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub symbols: Vec<ObjectKind>,
    pub regions: Vec<Region>,
}

impl Assignment {
    pub fn accepts(&self, kind: ObjectKind, region: Region) -> bool {
        self.symbols.contains(&kind) && self.regions.contains(&region)
    }
}

/// Roster entry as written in config files. Missing fields fall back to
/// the type's default assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEntry {
    pub kind: AgentType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<Vec<ObjectKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<Region>>,
}

impl AgentEntry {
    pub fn of(kind: AgentType) -> Self {
        Self {
            kind,
            symbols: None,
            regions: None,
        }
    }

    pub fn assignment(&self) -> Assignment {
        let base = self.kind.default_assignment();
        Assignment {
            symbols: self.symbols.clone().unwrap_or(base.symbols),
            regions: self.regions.clone().unwrap_or(base.regions),
        }
    }
}

fn default_roster() -> Vec<AgentEntry> {
    [AgentType::A, AgentType::A, AgentType::B, AgentType::B, AgentType::C, AgentType::C, AgentType::D, AgentType::D]
        .into_iter()
        .map(AgentEntry::of)
        .collect()
}

fn default_objects() -> [usize; 2] {
    [20, 20]
}

fn default_horizon() -> usize {
    200
}

fn default_reward_object() -> f32 {
    1.0
}

fn default_reward_collision() -> f32 {
    -1.0
}

/// Serializable environment settings (everything except the geometry).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(default = "default_roster")]
    pub roster: Vec<AgentEntry>,
    /// Objects kept alive per type, `[★, ▲]`.
    #[serde(default = "default_objects")]
    pub objects_per_type: [usize; 2],
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_reward_object")]
    pub reward_object: f32,
    #[serde(default = "default_reward_collision")]
    pub reward_collision: f32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            roster: default_roster(),
            objects_per_type: default_objects(),
            horizon: default_horizon(),
            reward_object: default_reward_object(),
            reward_collision: default_reward_collision(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub kind: AgentType,
    pub assignment: Assignment,
}

/// Validated map plus configuration.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub map: GridMap,
    pub agents: Vec<AgentSpec>,
    pub objects_per_type: [usize; 2],
    pub horizon: usize,
    pub reward_object: f32,
    pub reward_collision: f32,
}

impl EnvSpec {
    pub fn new(map: GridMap, config: &EnvConfig) -> Result<Self> {
        let starts = map.start_cells().len();
        if starts < config.roster.len() {
            return Err(Error::Setup(format!(
                "{} agents but only {starts} start cells",
                config.roster.len()
            )));
        }
        for kind in ObjectKind::ALL {
            let wanted = config.objects_per_type[kind.index()];
            let cells = map.spawn_cells(kind).len();
            if wanted > 0 && cells == 0 {
                return Err(Error::Setup(format!("no spawn cells for {kind:?}")));
            }
        }
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            agents: config
                .roster
                .iter()
                .map(|e| AgentSpec {
                    kind: e.kind,
                    assignment: e.assignment(),
                })
                .collect(),
            map,
            objects_per_type: config.objects_per_type,
            horizon: config.horizon,
            reward_object: config.reward_object,
            reward_collision: config.reward_collision,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}
