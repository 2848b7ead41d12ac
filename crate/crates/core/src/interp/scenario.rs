use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{load_map, Action, AgentType, CondKind, EnvState, GridMap, Object, ObjectKind, Pos, DEFAULT_MAP};
use crate::error::{Error, Result};

/// Where a scenario's geometry comes from.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRef {
    /// Whatever map the probed checkpoint was trained on.
    #[default]
    Checkpoint,
    /// The built-in 25×25 map.
    Default,
    /// Map file, relative to the scenario file.
    File(PathBuf),
    /// Inline map text.
    Text(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPlacement {
    #[serde(rename = "type")]
    pub kind: AgentType,
    pub x: i32,
    pub y: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    #[serde(rename = "type")]
    pub kind: ObjectKind,
    pub x: i32,
    pub y: i32,
}

/// A frozen situation to probe. Coordinates have their origin at the top
/// left, `x` to the right and `y` downward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Placements transcribed by eye rather than measured.
    #[serde(default)]
    pub approximate: bool,
    #[serde(default)]
    pub map: MapRef,
    pub agents: Vec<AgentPlacement>,
    #[serde(default)]
    pub objects: Vec<ObjectPlacement>,
    /// Index into `agents` of the agent whose policy is probed.
    #[serde(default)]
    pub observer: usize,
    /// Conditional states the scenario was staged for. Informational:
    /// each checkpoint is fed the states it was trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<Vec<CondKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_action: Option<Action>,
}

/// One legality problem, tied to a cell when there is one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<i32>,
}

impl Violation {
    fn at(code: &str, p: Pos, message: String) -> Self {
        Self {
            code: code.into(),
            message,
            x: Some(p.x),
            y: Some(p.y),
        }
    }

    fn global(code: &str, message: String) -> Self {
        Self {
            code: code.into(),
            message,
            x: None,
            y: None,
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.x, self.y) {
            (Some(x), Some(y)) => write!(f, "({x}, {y}) {}: {}", self.code, self.message),
            _ => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a scenario and inlines a file map reference.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_json(&text)?;
        if let MapRef::File(rel) = &s.map {
            let map = path.parent().unwrap_or(Path::new(".")).join(rel);
            s.map = MapRef::Text(std::fs::read_to_string(&map).map_err(|e| Error::io(&map, e))?);
        }
        Ok(s)
    }

    /// Resolves the map, using `fallback` for [`MapRef::Checkpoint`].
    pub fn resolve_map(&self, fallback: &GridMap) -> Result<GridMap> {
        match &self.map {
            MapRef::Checkpoint => Ok(fallback.clone()),
            MapRef::Default => load_map(DEFAULT_MAP),
            MapRef::Text(text) => load_map(text),
            MapRef::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                load_map(&text)
            }
        }
    }

    /// Hex SHA-256 of the scenario's JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn observer_pos(&self) -> Option<Pos> {
        self.agents.get(self.observer).map(|a| Pos::new(a.x, a.y))
    }

    /// Lists every illegal placement on `map`.
    pub fn validate(&self, map: &GridMap) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.agents.is_empty() {
            out.push(Violation::global("no_agents", "scenario has no agents".into()));
        } else if self.observer >= self.agents.len() {
            out.push(Violation::global(
                "bad_observer",
                format!("observer {} but only {} agents", self.observer, self.agents.len()),
            ));
        }
        let mut check = |what: &str, p: Pos, seen: &mut HashSet<Pos>| {
            if !map.in_bounds(p) {
                out.push(Violation::at("out_of_bounds", p, format!("{what} outside the {}×{} map", map.width, map.height)));
            } else if map.is_blocked(p) {
                out.push(Violation::at("wall", p, format!("{what} placed on a wall")));
            } else if !seen.insert(p) {
                out.push(Violation::at("overlap", p, format!("{what} shares its cell with another {what}")));
            }
        };
        let mut agents = HashSet::new();
        for a in &self.agents {
            check("agent", Pos::new(a.x, a.y), &mut agents);
        }
        let mut objects = HashSet::new();
        for o in &self.objects {
            check("object", Pos::new(o.x, o.y), &mut objects);
        }
        out
    }

    /// Environment state with exactly the scenario's placements.
    pub fn state(&self, map: &GridMap) -> Result<EnvState> {
        let violations = self.validate(map);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(EnvState::staged(
            self.agents.iter().map(|a| Pos::new(a.x, a.y)).collect(),
            self.objects
                .iter()
                .map(|o| Object {
                    kind: o.kind,
                    pos: Pos::new(o.x, o.y),
                })
                .collect(),
            0,
        ))
    }
}
