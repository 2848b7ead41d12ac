use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::EpisodeMetrics;
use super::trainer::derive_seed;
use crate::checkpoint::Checkpoint;
use crate::env::trace::{TraceStep, TraceWriter};
use crate::env::{Action, CondKind, Env, EnvSpec, ObsBundle};
use crate::error::{Error, Result};
use crate::model::{Model, PolicyInput};

/// Sample mean and standard deviation (n − 1 denominator).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub episode_reward: MetricSummary,
    pub objects: MetricSummary,
    pub agent_collisions: MetricSummary,
    pub wall_collisions: MetricSummary,
}

impl Summary {
    pub fn of(episodes: &[EpisodeMetrics]) -> Self {
        let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| MetricSummary::of(&episodes.iter().map(f).collect::<Vec<_>>());
        Self {
            episodes: episodes.len(),
            episode_reward: col(&|m| m.total_reward()),
            objects: col(&|m| m.objects() as f64),
            agent_collisions: col(&|m| m.agent_collisions as f64),
            wall_collisions: col(&|m| m.wall_collisions as f64),
        }
    }

    pub fn columns(&self) -> [(&'static str, MetricSummary); 4] {
        [
            ("episode_reward", self.episode_reward),
            ("objects", self.objects),
            ("agent_collisions", self.agent_collisions),
            ("wall_collisions", self.wall_collisions),
        ]
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["episode".to_string()];
        for (name, _) in Self::of(&[]).columns() {
            cols.push(format!("{name}_mean"));
            cols.push(format!("{name}_std"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.columns()
            .iter()
            .flat_map(|(_, s)| [s.mean.to_string(), s.std.to_string()])
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "episodes          {}", self.episodes)?;
        writeln!(f, "episode reward    {}", self.episode_reward)?;
        writeln!(f, "objects           {}", self.objects)?;
        writeln!(f, "agent collisions  {}", self.agent_collisions)?;
        write!(f, "wall collisions   {}", self.wall_collisions)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub summary: Summary,
}

/// Plays one episode with `policy(agent, obs) -> action index`.
pub fn rollout_episode<W: Write>(
    env: &mut Env,
    episode: usize,
    seed: u64,
    mut policy: impl FnMut(usize, &ObsBundle) -> Result<usize>,
    mut trace: Option<&mut TraceWriter<W>>,
) -> Result<EpisodeMetrics> {
    let mut obs = env.reset(seed)?;
    let mut metrics = EpisodeMetrics::new(episode, obs.len());
    loop {
        let actions = obs
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let a = policy(i, o)?;
                Action::from_index(a).ok_or_else(|| Error::Contract(format!("action index {a}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = env.state().t;
        let step = env.step(&actions)?;
        metrics.record(&step.rewards, &step.info);
        if let Some(w) = trace.as_deref_mut() {
            w.write(&TraceStep::new(episode, t, &actions, &step.rewards, &step.info))?;
        }
        obs = step.observations;
        if step.done {
            return Ok(metrics);
        }
    }
}

/// Greedy rollouts of one model per agent.
pub fn evaluate_models(
    models: &[Model<f32>],
    spec: &EnvSpec,
    cond: &[CondKind],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if models.len() != spec.num_agents() {
        return Err(Error::Config(format!(
            "{} models for {} agents",
            models.len(),
            spec.num_agents()
        )));
    }
    for m in models {
        let c = m.config();
        if c.map_height != spec.map.height || c.map_width != spec.map.width || c.cond != cond {
            return Err(Error::Config(format!(
                "{} model built for a {}×{} map does not match the environment",
                c.variant.name(),
                c.map_width,
                c.map_height
            )));
        }
    }
    let mut env = Env::new(Arc::new(spec.clone()), cond.to_vec(), seed)?;
    let episodes = (0..episodes)
        .map(|e| {
            rollout_episode::<std::io::Sink>(
                &mut env,
                e,
                derive_seed(seed, 0, e as u64),
                |i, o| Ok(models[i].forward_policy(&PolicyInput::from_bundle(o), false)?.greedy()),
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        summary: Summary::of(&episodes),
        episodes,
    })
}

/// Greedy evaluation of a checkpoint on its own map.
pub fn evaluate(ckpt: &Checkpoint, episodes: usize, seed: u64) -> Result<EvalReport> {
    let spec = ckpt.env.spec()?;
    evaluate_models(&ckpt.models()?, &spec, &ckpt.model.cond, episodes, seed)
}

/// Uniform-random policy baseline on the same episode seeds.
pub fn random_policy_metrics(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = Env::new(Arc::new(spec.clone()), Vec::new(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes = (0..episodes)
        .map(|e| {
            rollout_episode::<std::io::Sink>(
                &mut env,
                e,
                derive_seed(seed, 0, e as u64),
                |_, _| Ok(rng.random_range(0..Action::COUNT)),
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        summary: Summary::of(&episodes),
        episodes,
    })
}
