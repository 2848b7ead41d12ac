use std::io::Write;

use crate::env::{Collision, StepInfo};
use crate::error::{Error, Result};

/// Per-episode counters. Collisions count colliding agents, so a
/// two-agent bump adds 2 to `agent_collisions`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub rewards: Vec<f32>,
    pub collections: Vec<usize>,
    pub collisions: Vec<usize>,
    pub agent_collisions: usize,
    pub wall_collisions: usize,
}

impl EpisodeMetrics {
    pub fn new(episode: usize, agents: usize) -> Self {
        Self {
            episode,
            rewards: vec![0.0; agents],
            collections: vec![0; agents],
            collisions: vec![0; agents],
            ..Default::default()
        }
    }

    pub fn record(&mut self, rewards: &[f32], info: &StepInfo) {
        for (i, &r) in rewards.iter().enumerate() {
            self.rewards[i] += r;
            self.collections[i] += usize::from(info.collected[i]);
            match info.collisions[i] {
                Some(Collision::Agent) => {
                    self.collisions[i] += 1;
                    self.agent_collisions += 1;
                }
                Some(Collision::Wall) => {
                    self.collisions[i] += 1;
                    self.wall_collisions += 1;
                }
                None => {}
            }
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }

    pub fn objects(&self) -> usize {
        self.collections.iter().sum()
    }

    pub fn header(agents: usize) -> String {
        let mut cols = vec!["episode".to_string()];
        cols.extend((0..agents).map(|i| format!("reward_{i}")));
        cols.extend(["total_reward", "objects", "agent_collisions", "wall_collisions"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.episode.to_string()];
        cols.extend(self.rewards.iter().map(|r| r.to_string()));
        cols.push(self.total_reward().to_string());
        cols.push(self.objects().to_string());
        cols.push(self.agent_collisions.to_string());
        cols.push(self.wall_collisions.to_string());
        cols.join(",")
    }
}

/// Serialized CSV sink for episode rows.
pub struct MetricsWriter<W: Write> {
    out: std::sync::Mutex<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, agents: usize, write_header: bool) -> Result<Self> {
        if write_header {
            writeln!(out, "{}", EpisodeMetrics::header(agents)).map_err(|e| Error::io("metrics", e))?;
        }
        Ok(Self {
            out: std::sync::Mutex::new(out),
        })
    }

    pub fn append(&self, m: &EpisodeMetrics) -> Result<()> {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(out, "{}", m.csv_row())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io("metrics", e))
    }

    pub fn into_inner(self) -> W {
        self.out.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}
