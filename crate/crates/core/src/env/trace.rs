//! Episode trace log: one JSON object per step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Action, Collision, StepInfo};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: usize,
    pub t: usize,
    pub actions: Vec<Action>,
    pub rewards: Vec<f32>,
    pub collisions: Vec<Option<Collision>>,
    pub collections: Vec<bool>,
}

impl TraceStep {
    pub fn new(episode: usize, t: usize, actions: &[Action], rewards: &[f32], info: &StepInfo) -> Self {
        Self {
            episode,
            t,
            actions: actions.to_vec(),
            rewards: rewards.to_vec(),
            collisions: info.collisions.clone(),
            collections: info.collected.clone(),
        }
    }
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, step: &TraceStep) -> Result<()> {
        serde_json::to_writer(&mut self.out, step)?;
        self.out.write_all(b"\n").map_err(|e| crate::error::Error::io("trace", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| crate::error::Error::io("trace", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trace(text: &str) -> Result<Vec<TraceStep>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
