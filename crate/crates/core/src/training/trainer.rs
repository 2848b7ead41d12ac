use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::evaluate::{evaluate_models, Summary};
use super::loss::{dqn_loss, iqn_quantile_huber_loss, QuantileDraw};
use super::metrics::{EpisodeMetrics, MetricsWriter};
use super::optim::{clip_grad_norm, Adam};
use super::policy::{explore, LinearSchedule};
use super::replay::{ReplayBuffer, Transition};
use crate::checkpoint::{AdamState, Checkpoint, EnvSection, LearnerState, Progress, RngState};
use crate::env::trace::{TraceStep, TraceWriter};
use crate::env::{load_map, Action, Env, EnvSpec, ObsBundle};
use crate::error::{Error, Result};
use crate::model::{sample_taus, Model, ModelConfig, PolicyInput};
use crate::params::ParamStore;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const TRACE_FILE: &str = "trace.jsonl";

const STREAM_MODEL: u64 = 1;
const STREAM_LEARNER: u64 = 2;
const STREAM_EPISODE: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent sub-seed for `(stream, index)` under a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// One agent's learning state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub online: Model<f32>,
    pub target: Model<f32>,
    pub adam: Adam<f32>,
    pub replay: ReplayBuffer<Transition>,
    pub rng: ChaCha8Rng,
    pub grad_steps: u64,
}

impl Learner {
    fn new(model_config: &ModelConfig, config: &TrainConfig, agent: usize) -> Result<Self> {
        let online = Model::new(model_config.clone(), derive_seed(config.seed, STREAM_MODEL, agent as u64))?;
        Ok(Self {
            target: online.clone(),
            adam: Adam::new(config.optimizer, online.params()),
            online,
            replay: ReplayBuffer::new(config.replay_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_LEARNER, agent as u64)),
            grad_steps: 0,
        })
    }

    fn act(&mut self, obs: &ObsBundle, epsilon: f64) -> Result<usize> {
        match explore(epsilon, &mut self.rng) {
            Some(a) => Ok(a),
            None => Ok(self.online.forward_policy(&PolicyInput::from_bundle(obs), false)?.greedy()),
        }
    }

    /// One gradient step once the replay holds `warmup` transitions.
    /// Returns the batch loss when an update happened.
    pub fn update(&mut self, config: &TrainConfig) -> Result<Option<f64>> {
        if self.replay.is_empty() || self.replay.len() < config.warmup {
            return Ok(None);
        }
        let batch = self.replay.sample(config.batch_size, &mut self.rng)?;
        let head = &self.online.config().head;
        let mut out = if self.online.config().variant.is_iqn() {
            let draws: Vec<QuantileDraw<f32>> = (0..batch.len())
                .map(|_| QuantileDraw {
                    online: sample_taus(&mut self.rng, head.train_quantiles),
                    target: sample_taus(&mut self.rng, head.target_quantiles),
                })
                .collect();
            iqn_quantile_huber_loss(&batch, &self.online, &self.target, config.gamma, &draws, head.kappa)?
        } else {
            dqn_loss(&batch, &self.online, &self.target, config.gamma)?
        };
        if !out.loss.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite loss {} at gradient step {}",
                out.loss, self.grad_steps
            )));
        }
        if let Some(max) = config.grad_clip {
            clip_grad_norm(&mut out.grads, max);
        }
        self.adam.update(self.online.params_mut(), &out.grads);
        self.grad_steps += 1;
        if self.grad_steps % config.target_sync == 0 {
            self.target.params_mut().copy_from(self.online.params())?;
        }
        Ok(Some(out.loss as f64))
    }

    fn state(&self) -> LearnerState {
        let store = |tensors: &[crate::Tensor<f32>]| {
            let mut s = ParamStore::new();
            for ((_, name, _), t) in self.online.params().iter().zip(tensors) {
                s.insert(name, t.clone());
            }
            s
        };
        LearnerState {
            online: self.online.params().clone(),
            target: Some(self.target.params().clone()),
            adam: Some(AdamState {
                step: self.adam.step,
                m: store(&self.adam.m),
                v: store(&self.adam.v),
            }),
            grad_steps: self.grad_steps,
        }
    }
}

/// Drives all learners through episodes of one environment.
pub struct Trainer {
    config: TrainConfig,
    env_section: EnvSection,
    env: Env,
    learners: Vec<Learner>,
    schedule: LinearSchedule,
    episode: usize,
    env_steps: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env_section = EnvSection {
            map: load_map(config.map_source())?.to_text(),
            config: config.env.clone(),
        };
        let spec = Arc::new(env_section.spec()?);
        let model_config = ModelConfig::build(
            config.variant,
            &config.cond,
            spec.map.height,
            spec.map.width,
            &config.arch,
        )?;
        let learners = (0..spec.num_agents())
            .map(|i| Learner::new(&model_config, &config, i))
            .collect::<Result<_>>()?;
        let env = Env::new(spec, config.cond.clone(), derive_seed(config.seed, STREAM_EPISODE, 0))?;
        Ok(Self {
            schedule: config.epsilon.schedule(),
            config,
            env_section,
            env,
            learners,
            episode: 0,
            env_steps: 0,
        })
    }

    /// Restores a run saved by [`Trainer::checkpoint`]. Replay buffers
    /// start empty and refill through warmup.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let config = ckpt
            .train
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        let mut trainer = Self::new(config)?;
        if ckpt.model != *trainer.learners[0].online.config() || ckpt.env != trainer.env_section {
            return Err(Error::Config("checkpoint does not match its training config".into()));
        }
        if ckpt.learners.len() != trainer.learners.len() || ckpt.rng.len() != trainer.learners.len() {
            return Err(Error::Checkpoint("learner count mismatch".into()));
        }
        for ((learner, saved), rng) in trainer.learners.iter_mut().zip(&ckpt.learners).zip(&ckpt.rng) {
            let (Some(target), Some(adam)) = (&saved.target, &saved.adam) else {
                return Err(Error::Checkpoint("checkpoint has no optimizer state".into()));
            };
            learner.online.params_mut().copy_from(&saved.online)?;
            learner.target.params_mut().copy_from(target)?;
            learner.adam.step = adam.step;
            learner.adam.m = adam.m.iter().map(|(_, _, t)| t.clone()).collect();
            learner.adam.v = adam.v.iter().map(|(_, _, t)| t.clone()).collect();
            learner.grad_steps = saved.grad_steps;
            learner.rng = rng.restore()?;
        }
        trainer.episode = ckpt.progress.episodes;
        trainer.env_steps = ckpt.progress.env_steps;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Runs one training episode. `on_update` sees `(agent, loss)` after
    /// every gradient step.
    pub fn run_episode<W: Write>(
        &mut self,
        mut trace: Option<&mut TraceWriter<W>>,
        mut on_update: impl FnMut(usize, f64),
    ) -> Result<EpisodeMetrics> {
        let n = self.learners.len();
        let mut obs = self
            .env
            .reset(derive_seed(self.config.seed, STREAM_EPISODE, self.episode as u64))?;
        let mut metrics = EpisodeMetrics::new(self.episode, n);
        loop {
            let epsilon = self.schedule.at(self.env_steps);
            let actions = self
                .learners
                .iter_mut()
                .zip(&obs)
                .map(|(l, o)| l.act(o, epsilon))
                .collect::<Result<Vec<_>>>()?;
            let joint: Vec<Action> = actions.iter().map(|&a| Action::from_index(a).unwrap()).collect();
            let t = self.env.state().t;
            let step = self.env.step(&joint)?;
            metrics.record(&step.rewards, &step.info);
            if let Some(w) = trace.as_deref_mut() {
                w.write(&TraceStep::new(self.episode, t, &joint, &step.rewards, &step.info))?;
            }
            for (i, learner) in self.learners.iter_mut().enumerate() {
                learner.replay.push(Transition {
                    obs: obs[i].clone(),
                    action: actions[i],
                    reward: step.rewards[i],
                    next_obs: step.observations[i].clone(),
                    done: step.done,
                });
            }
            self.env_steps += 1;
            for (i, learner) in self.learners.iter_mut().enumerate() {
                if let Some(loss) = learner.update(&self.config)? {
                    on_update(i, loss);
                }
            }
            obs = step.observations;
            if step.done {
                break;
            }
        }
        self.episode += 1;
        Ok(metrics)
    }

    pub fn models(&self) -> Vec<Model<f32>> {
        self.learners.iter().map(|l| l.online.clone()).collect()
    }

    /// Greedy evaluation of the current online networks.
    pub fn evaluate(&self, episodes: usize) -> Result<Summary> {
        let seed = derive_seed(self.config.seed, STREAM_EVAL, self.episode as u64);
        let report = evaluate_models(&self.models(), self.env.spec(), &self.config.cond, episodes, seed)?;
        Ok(report.summary)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.learners[0].online.config().clone(),
            env: self.env_section.clone(),
            train: Some(self.config.clone()),
            progress: Progress {
                episodes: self.episode,
                env_steps: self.env_steps,
            },
            rng: self.learners.iter().map(|l| RngState::capture(&l.rng)).collect(),
            learners: self.learners.iter().map(Learner::state).collect(),
        }
    }
}

/// Files produced by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub episodes: Vec<EpisodeMetrics>,
}

fn truncate_metrics(path: &Path, episodes: usize) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kept: Vec<&str> = text.lines().take(episodes + 1).collect();
    std::fs::write(path, kept.join("\n") + "\n").map_err(|e| Error::io(path, e))
}

/// Trains into `out_dir`, resuming when it already holds a checkpoint of
/// the same configuration. `on_episode` sees every finished episode.
pub fn train(config: &TrainConfig, out_dir: &Path, mut on_episode: impl FnMut(&EpisodeMetrics)) -> Result<TrainOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut trainer = if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let mut saved = ckpt.train.clone();
        if let Some(saved) = saved.as_mut() {
            saved.episodes = config.episodes;
        }
        if saved.as_ref() != Some(config) {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration",
                out_dir.display()
            )));
        }
        let mut t = Trainer::resume(&ckpt)?;
        t.config.episodes = config.episodes;
        t
    } else {
        Trainer::new(config.clone())?
    };
    let resumed = trainer.episode() > 0;
    if resumed {
        log::info!("resuming {} at episode {}", out_dir.display(), trainer.episode());
        truncate_metrics(&metrics_path, trainer.episode())?;
    }
    let open = |path: &Path, append: bool| -> Result<BufWriter<File>> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(BufWriter::new(f))
    };
    let n = trainer.learners().len();
    let metrics = MetricsWriter::new(open(&metrics_path, resumed)?, n, !resumed)?;
    let mut trace = if config.trace {
        Some(TraceWriter::new(open(&out_dir.join(TRACE_FILE), resumed)?))
    } else {
        None
    };
    let mut eval = if config.eval_every > 0 {
        let mut w = open(&out_dir.join(EVAL_FILE), resumed)?;
        if !resumed {
            writeln!(w, "{}", Summary::csv_header()).map_err(|e| Error::io(EVAL_FILE, e))?;
        }
        Some(w)
    } else {
        None
    };

    let mut episodes = Vec::new();
    while trainer.episode() < config.episodes {
        let m = trainer.run_episode(trace.as_mut(), |_, _| {})?;
        metrics.append(&m)?;
        on_episode(&m);
        episodes.push(m);
        let done = trainer.episode();
        if let Some(w) = eval.as_mut() {
            if done % config.eval_every == 0 {
                let s = trainer.evaluate(config.eval_episodes)?;
                writeln!(w, "{done},{}", s.csv_row())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(EVAL_FILE, e))?;
            }
        }
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.episodes {
            if let Some(w) = trace.as_mut() {
                w.flush()?;
            }
            trainer.checkpoint().save(&ckpt_path)?;
            log::info!("episode {done}: checkpoint written to {}", ckpt_path.display());
        }
    }
    if let Some(w) = trace.as_mut() {
        w.flush()?;
    }
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(TrainOutput {
        checkpoint: ckpt_path,
        metrics: metrics_path,
        episodes,
    })
}
