use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::map::{ObjectKind, Pos};
use super::spec::EnvSpec;
use crate::error::{Error, Result};

/// Movement actions in fixed index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Right,
    Left,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Right, Action::Left];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Right => (1, 0),
            Action::Left => (-1, 0),
        }
    }

    pub fn apply(self, p: Pos) -> Pos {
        let (dx, dy) = self.delta();
        Pos::new(p.x + dx, p.y + dy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Right => "right",
            Action::Left => "left",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub kind: ObjectKind,
    pub pos: Pos,
}

/// Full world state. The episode RNG drives object respawns.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub agents: Vec<Pos>,
    pub objects: Vec<Object>,
    pub t: usize,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    /// Agents on start cells in roster order; objects sampled without
    /// replacement from their free spawn cells.
    pub fn reset(spec: &EnvSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents: Vec<Pos> = spec.map.start_cells().into_iter().take(spec.num_agents()).collect();
        if agents.len() < spec.num_agents() {
            return Err(Error::Setup("not enough start cells".into()));
        }
        let mut taken: std::collections::HashSet<Pos> = agents.iter().copied().collect();
        let mut objects = Vec::new();
        for kind in ObjectKind::ALL {
            let count = spec.objects_per_type[kind.index()];
            let free: Vec<Pos> = spec
                .map
                .spawn_cells(kind)
                .into_iter()
                .filter(|p| !taken.contains(p))
                .collect();
            if free.len() < count {
                return Err(Error::Setup(format!(
                    "{count} {kind:?} objects requested but only {} free spawn cells",
                    free.len()
                )));
            }
            for &pos in free.choose_multiple(&mut rng, count) {
                taken.insert(pos);
                objects.push(Object { kind, pos });
            }
        }
        Ok(Self {
            agents,
            objects,
            t: 0,
            rng,
        })
    }

    /// State with explicit placements (scenarios, tests). The RNG is
    /// seeded from `seed`.
    pub fn staged(agents: Vec<Pos>, objects: Vec<Object>, seed: u64) -> Self {
        Self {
            agents,
            objects,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn object_count(&self, kind: ObjectKind) -> usize {
        self.objects.iter().filter(|o| o.kind == kind).count()
    }

    pub fn agent_at(&self, p: Pos) -> Option<usize> {
        self.agents.iter().position(|&a| a == p)
    }

    pub fn object_at(&self, p: Pos) -> Option<usize> {
        self.objects.iter().position(|o| o.pos == p)
    }
}
