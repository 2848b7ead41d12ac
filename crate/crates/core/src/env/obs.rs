//! Observation encodings: the agent-centred local view and the two
//! global encodings (absolute "merged" maps and agent-centred "relative"
//! canvases).

use serde::{Deserialize, Serialize};

use super::map::{Cell, GridMap, ObjectKind, Pos};
use super::state::EnvState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side length of the local view.
pub const VIEW: usize = 7;
/// Channels of the local view: self, other agents, ★, ▲, wall/out-of-bounds.
pub const LOCAL_CHANNELS: usize = 5;

pub mod channel {
    pub const SELF: usize = 0;
    pub const AGENTS: usize = 1;
    pub const STAR: usize = 2;
    pub const TRIANGLE: usize = 3;
    pub const WALL: usize = 4;
}

/// Auxiliary global input fed to the conditional module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondKind {
    /// One-hot of the observing agent's cell.
    GPos,
    /// Per-type object occupancy.
    OPos,
}

impl CondKind {
    pub fn channels(self) -> usize {
        match self {
            CondKind::GPos => 1,
            CondKind::OPos => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CondKind::GPos => "g_pos",
            CondKind::OPos => "o_pos",
        }
    }
}

/// Binary `channels×height×width` map storing only the set cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SparseMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Sorted flat indices `(c·height + y)·width + x` of cells equal to 1.
    pub ones: Vec<u32>,
}

impl SparseMap {
    pub fn empty(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            ones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self, c: usize, y: usize, x: usize) -> u32 {
        ((c * self.height + y) * self.width + x) as u32
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize) {
        let i = self.flat(c, y, x);
        if let Err(at) = self.ones.binary_search(&i) {
            self.ones.insert(at, i);
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.ones.binary_search(&self.flat(c, y, x)).is_ok()
    }

    pub fn channel_sum(&self, c: usize) -> usize {
        let plane = (self.height * self.width) as u32;
        self.ones.iter().filter(|&&i| i / plane == c as u32).count()
    }

    pub fn to_dense<T: Scalar>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        for &i in &self.ones {
            out[i as usize] = T::one();
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(vec![self.channels, self.height, self.width], self.to_dense()).expect("map shape")
    }
}

/// Everything one agent observes at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsBundle {
    pub local: SparseMap,
    /// Enabled conditional maps in configuration order.
    pub cond: Vec<SparseMap>,
    pub position: Pos,
}

pub fn local_observation(map: &GridMap, state: &EnvState, agent: usize) -> SparseMap {
    let me = state.agents[agent];
    let r = (VIEW / 2) as i32;
    let mut out = SparseMap::empty(LOCAL_CHANNELS, VIEW, VIEW);
    for row in 0..VIEW {
        for col in 0..VIEW {
            let p = Pos::new(me.x + col as i32 - r, me.y + row as i32 - r);
            match map.cell(p) {
                None | Some(Cell::Wall) => out.set(channel::WALL, row, col),
                Some(_) => {}
            }
        }
    }
    out.set(channel::SELF, VIEW / 2, VIEW / 2);
    let in_view = |p: Pos| {
        let (dx, dy) = (p.x - me.x + r, p.y - me.y + r);
        (0..VIEW as i32).contains(&dx) && (0..VIEW as i32).contains(&dy)
    };
    for (i, &p) in state.agents.iter().enumerate() {
        if i != agent && in_view(p) {
            out.set(channel::AGENTS, (p.y - me.y + r) as usize, (p.x - me.x + r) as usize);
        }
    }
    for obj in &state.objects {
        if in_view(obj.pos) {
            let c = match obj.kind {
                ObjectKind::Star => channel::STAR,
                ObjectKind::Triangle => channel::TRIANGLE,
            };
            out.set(c, (obj.pos.y - me.y + r) as usize, (obj.pos.x - me.x + r) as usize);
        }
    }
    out
}

/// Global map in absolute coordinates.
pub fn merged_view(map: &GridMap, state: &EnvState, agent: usize, kind: CondKind) -> SparseMap {
    let mut out = SparseMap::empty(kind.channels(), map.height, map.width);
    match kind {
        CondKind::GPos => {
            let p = state.agents[agent];
            out.set(0, p.y as usize, p.x as usize);
        }
        CondKind::OPos => {
            for obj in &state.objects {
                out.set(obj.kind.index(), obj.pos.y as usize, obj.pos.x as usize);
            }
        }
    }
    out
}

/// Re-centres a global map on `at` inside a zero-padded
/// `(2H−1)×(2W−1)` canvas; the canvas centre is the agent's own cell.
pub fn recenter(global: &SparseMap, at: Pos) -> SparseMap {
    let (h, w) = (global.height, global.width);
    let mut out = SparseMap::empty(global.channels, 2 * h - 1, 2 * w - 1);
    let plane = h * w;
    for &i in &global.ones {
        let i = i as usize;
        let (c, y, x) = (i / plane, (i % plane) / w, i % w);
        let cy = (y as i32 - at.y + h as i32 - 1) as usize;
        let cx = (x as i32 - at.x + w as i32 - 1) as usize;
        out.set(c, cy, cx);
    }
    out
}

/// Agent-centred encoding of a global map, flattened row-major per channel.
pub fn relative_view(map: &GridMap, state: &EnvState, agent: usize, kind: CondKind) -> SparseMap {
    recenter(&merged_view(map, state, agent, kind), state.agents[agent])
}
