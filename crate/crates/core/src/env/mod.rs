//! Object-collection grid world with heterogeneous agents.
//!
//! Moves resolve simultaneously against start-of-step occupancy: a move
//! fails (agent stays, collision penalty) when its target is a wall or
//! outside the grid, when another agent stood there at the start of the
//! step, or when two or more agents target the same cell. Successful
//! movers collect an object on their new cell only if both its symbol
//! and its region are in their assignment; the object then respawns on a
//! free cell of its spawn region.

pub mod map;
pub mod obs;
pub mod spec;
pub mod state;
pub mod trace;

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

pub use map::{default_map, load_map, Cell, GridMap, ObjectKind, Pos, Region, DEFAULT_MAP};
pub use obs::{local_observation, merged_view, recenter, relative_view, CondKind, ObsBundle, SparseMap};
pub use spec::{AgentEntry, AgentSpec, AgentType, Assignment, EnvConfig, EnvSpec};
pub use state::{Action, EnvState, Object};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collision {
    Agent,
    Wall,
}

/// Per-step outcome of the transition rules, without observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub rewards: Vec<f32>,
    pub collisions: Vec<Option<Collision>>,
    pub collected: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collected: Vec<bool>,
    pub agent_collisions: usize,
    pub wall_collisions: usize,
    pub collisions: Vec<Option<Collision>>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observations: Vec<ObsBundle>,
    pub rewards: Vec<f32>,
    pub done: bool,
    pub info: StepInfo,
}

/// Applies one joint action to `state` in place.
pub fn transition(spec: &EnvSpec, state: &mut EnvState, actions: &[Action]) -> Result<Transition> {
    let n = state.agents.len();
    if actions.len() != n {
        return Err(Error::Contract(format!("{} actions for {n} agents", actions.len())));
    }
    if state.t >= spec.horizon {
        return Err(Error::Contract(format!("episode already ended at t={}", state.t)));
    }
    let map = &spec.map;
    let targets: Vec<_> = state.agents.iter().zip(actions).map(|(&p, a)| a.apply(p)).collect();
    let mut claims: HashMap<_, usize> = HashMap::new();
    for &t in &targets {
        *claims.entry(t).or_default() += 1;
    }
    let mut collisions = vec![None; n];
    for i in 0..n {
        let t = targets[i];
        collisions[i] = if map.is_blocked(t) {
            Some(Collision::Wall)
        } else if state.agent_at(t).is_some_and(|j| j != i) || claims[&t] > 1 {
            Some(Collision::Agent)
        } else {
            None
        };
    }
    for i in 0..n {
        if collisions[i].is_none() {
            state.agents[i] = targets[i];
        }
    }

    let mut rewards = vec![0.0; n];
    let mut collected = vec![false; n];
    for i in 0..n {
        if collisions[i].is_some() {
            rewards[i] = spec.reward_collision;
            continue;
        }
        let here = state.agents[i];
        let Some(o) = state.object_at(here) else { continue };
        let kind = state.objects[o].kind;
        if spec.agents[i].assignment.accepts(kind, map.region(here)) {
            rewards[i] = spec.reward_object;
            collected[i] = true;
            state.objects[o].pos = respawn_cell(spec, state, kind, here);
        }
    }
    state.t += 1;
    Ok(Transition {
        rewards,
        collisions,
        collected,
    })
}

/// Uniform free spawn cell (no object, no agent). Falls back to cells
/// without objects, then to the current cell, so counts never change.
fn respawn_cell(spec: &EnvSpec, state: &mut EnvState, kind: ObjectKind, current: Pos) -> Pos {
    let cells = spec.map.spawn_cells(kind);
    let no_object: Vec<Pos> = cells.into_iter().filter(|&p| state.object_at(p).is_none()).collect();
    let free: Vec<Pos> = no_object.iter().copied().filter(|&p| state.agent_at(p).is_none()).collect();
    let pool = if !free.is_empty() { free } else { no_object };
    pool.choose(&mut state.rng).copied().unwrap_or(current)
}

/// A running environment instance.
#[derive(Clone, Debug)]
pub struct Env {
    spec: std::sync::Arc<EnvSpec>,
    cond: Vec<CondKind>,
    state: EnvState,
}

impl Env {
    pub fn new(spec: std::sync::Arc<EnvSpec>, cond: Vec<CondKind>, seed: u64) -> Result<Self> {
        let state = EnvState::reset(&spec, seed)?;
        Ok(Self { spec, cond, state })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn cond_kinds(&self) -> &[CondKind] {
        &self.cond
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<ObsBundle>> {
        self.state = EnvState::reset(&self.spec, seed)?;
        Ok(self.observe_all())
    }

    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    pub fn observe(&self, agent: usize) -> ObsBundle {
        observe(&self.spec.map, &self.state, agent, &self.cond)
    }

    pub fn observe_all(&self) -> Vec<ObsBundle> {
        (0..self.state.agents.len()).map(|i| self.observe(i)).collect()
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        let tr = transition(&self.spec, &mut self.state, actions)?;
        let info = StepInfo {
            agent_collisions: tr.collisions.iter().filter(|c| **c == Some(Collision::Agent)).count(),
            wall_collisions: tr.collisions.iter().filter(|c| **c == Some(Collision::Wall)).count(),
            collected: tr.collected,
            collisions: tr.collisions,
        };
        Ok(StepResult {
            observations: self.observe_all(),
            rewards: tr.rewards,
            done: self.state.t == self.spec.horizon,
            info,
        })
    }
}

pub fn observe(map: &GridMap, state: &EnvState, agent: usize, cond: &[CondKind]) -> ObsBundle {
    ObsBundle {
        local: local_observation(map, state, agent),
        cond: cond.iter().map(|&k| merged_view(map, state, agent, k)).collect(),
        position: state.agents[agent],
    }
}

#[cfg(test)]
mod tests;
