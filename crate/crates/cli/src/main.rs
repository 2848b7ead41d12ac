use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use da6_core::checkpoint::Checkpoint;
use da6_core::interp::{
    compare_variants, render_heatmap, run_scenario, write_report, Aggregation, HeatmapFormat, Layer, ProbeOptions,
    Scenario,
};
use da6_core::training::{evaluate, random_policy_metrics, train, TrainConfig};

#[derive(Parser)]
#[command(name = "da6", version, about = "Conditional-attention agents for multi-agent grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one independent learner per agent.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of episodes in the config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedy rollouts of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also report a uniform-random policy on the same episodes.
        #[arg(long)]
        random_baseline: bool,
        #[arg(long)]
        json: bool,
    },
    /// Attention heatmap and action scores for one scenario.
    Probe {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "last")]
        layer: Layer,
        #[arg(long, default_value = "mean-heads")]
        agg: Aggregation,
        #[arg(long, default_value = "csv")]
        format: HeatmapFormat,
        /// Write report.json and renders here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe several checkpoints on one scenario side by side.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 2..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "last")]
        layer: Layer,
        #[arg(long, default_value = "mean-heads")]
        agg: Aggregation,
        #[arg(long, default_value = "csv")]
        format: HeatmapFormat,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
    /// Serve the probe HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            episodes,
        } => cmd_train(&config, seed, &out, episodes),
        Command::Evaluate {
            checkpoint,
            episodes,
            seed,
            random_baseline,
            json,
        } => cmd_evaluate(&checkpoint, episodes, seed, random_baseline, json),
        Command::Probe {
            scenario,
            checkpoint,
            layer,
            agg,
            format,
            out,
        } => cmd_probe(&scenario, &checkpoint, ProbeOptions { layer, agg }, format, out.as_deref()),
        Command::Compare {
            scenario,
            checkpoints,
            layer,
            agg,
            format,
            out,
        } => {
            let scenario = Scenario::from_file(&scenario)?;
            let loaded = checkpoints
                .iter()
                .map(|p| Ok((label(p), load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let index = compare_variants(&scenario, &loaded, ProbeOptions { layer, agg }, format, &out)?;
            for e in &index.entries {
                println!("{:<20} {:<8} {:<6} {:?}", e.label, e.variant.name(), e.action.name(), e.scores);
            }
            println!("wrote {}", out.join("index.json").display());
            Ok(())
        }
        Command::Serve { config } => {
            let config = da6_service::ServiceConfig::from_file(&config)?.with_env_overrides()?;
            tokio::runtime::Runtime::new()?.block_on(da6_service::serve(config))?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    match (stem.as_deref(), path.parent().and_then(Path::file_name)) {
        (Some("checkpoint"), Some(dir)) => dir.to_string_lossy().into_owned(),
        (Some(s), _) => s.to_string(),
        _ => path.display().to_string(),
    }
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path, episodes: Option<usize>) -> Result<()> {
    let mut config = TrainConfig::from_file(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(n) = episodes {
        config.episodes = n;
    }
    let start = Instant::now();
    let every = (config.episodes / 20).max(1);
    let result = train(&config, out, |m| {
        if (m.episode + 1) % every == 0 {
            log::info!(
                "episode {:>5}  reward {:>7.1}  objects {:>4}  collisions {}/{}  ({:.0?})",
                m.episode + 1,
                m.total_reward(),
                m.objects(),
                m.agent_collisions,
                m.wall_collisions,
                start.elapsed()
            );
        }
    })?;
    println!("metrics    {}", result.metrics.display());
    println!("checkpoint {}", result.checkpoint.display());
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, episodes: usize, seed: u64, random: bool, json: bool) -> Result<()> {
    let ckpt = load(checkpoint)?;
    let report = evaluate(&ckpt, episodes, seed)?;
    let baseline = if random {
        Some(random_policy_metrics(&ckpt.env.spec()?, episodes, seed)?.summary)
    } else {
        None
    };
    if json {
        let value = serde_json::json!({
            "variant": ckpt.model.variant.name(),
            "summary": report.summary,
            "random": baseline,
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!("{} on {} episodes (seed {seed})", ckpt.model.variant.name(), episodes);
        println!("{}", report.summary);
        if let Some(b) = baseline {
            println!("\nrandom policy");
            println!("{b}");
        }
    }
    Ok(())
}

fn cmd_probe(
    scenario: &Path,
    checkpoint: &Path,
    options: ProbeOptions,
    format: HeatmapFormat,
    out: Option<&Path>,
) -> Result<()> {
    let scenario = Scenario::from_file(scenario)?;
    let ckpt = load(checkpoint)?;
    let report = run_scenario(&scenario, &ckpt, options)?;
    if let Some(dir) = out {
        for f in write_report(&report, dir, format)? {
            println!("{}", dir.join(f).display());
        }
        return Ok(());
    }
    println!("variant {}  action {}  scores {:?}", report.variant.name(), report.action.name(), report.scores);
    if report.heatmaps.is_empty() {
        bail!("{} has no attention to render", report.variant.name());
    }
    for h in &report.heatmaps {
        if let Some(head) = h.source.head {
            println!("# head {head}");
        }
        print!("{}", String::from_utf8_lossy(&render_heatmap(h, format)));
    }
    Ok(())
}
