//! Attention probing: heatmaps from the local encoder, staged scenarios
//! and side-by-side comparisons of checkpoints.

mod heatmap;
mod scenario;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use heatmap::{
    extract_attention, mean_row, parse_heatmap_csv, render_heatmap, Aggregation, Heatmap, HeatmapFormat,
    HeatmapSource, Layer,
};
pub use scenario::{AgentPlacement, MapRef, ObjectPlacement, Scenario, Violation};

use crate::checkpoint::Checkpoint;
use crate::env::{observe, Action, CondKind, Pos};
use crate::error::{Error, Result};
use crate::model::{Model, PolicyInput, Variant};
use crate::transformer::{token_cell, AttentionRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub layer: Layer,
    pub agg: Aggregation,
}

/// Saliency-row attention of one conditional-module encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmSummary {
    pub kind: CondKind,
    pub layer: usize,
    pub patch: usize,
    /// Head-averaged weight of the saliency token on itself.
    pub saliency: f64,
    /// Weight per patch, laid out over the patch grid.
    pub grid: Vec<Vec<f64>>,
    /// Up to three strongest patches.
    pub top: Vec<PatchWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchWeight {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario_hash: String,
    pub variant: Variant,
    pub observer: usize,
    pub position: Pos,
    pub action: Action,
    pub scores: Vec<f64>,
    pub heatmaps: Vec<Heatmap>,
    pub cm_attention: Vec<CmSummary>,
    /// Conditional states fed to the network.
    pub cond: Vec<CondKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_action: Option<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_expected: Option<bool>,
}

fn cm_summary(model: &Model<f32>, record: &AttentionRecord, layer: Layer) -> Result<CmSummary> {
    let sub = model
        .config()
        .submodules
        .iter()
        .find(|s| record.encoder == format!("cm:{}", s.kind.name()))
        .ok_or_else(|| Error::Contract(format!("no submodule for {}", record.encoder)))?;
    let l = layer.resolve(record.layers.len())?;
    let row = mean_row(record, l, 0);
    let gx = sub.width / sub.patch;
    let mut grid = vec![vec![0.0; gx]; sub.height / sub.patch];
    let mut patches = Vec::new();
    for (i, &w) in row.iter().enumerate().skip(1) {
        let (r, c) = token_cell(i - 1, sub.width, sub.patch);
        grid[r][c] = w;
        patches.push(PatchWeight { row: r, col: c, weight: w });
    }
    patches.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    patches.truncate(3);
    Ok(CmSummary {
        kind: sub.kind,
        layer: l,
        patch: sub.patch,
        saliency: row[0],
        grid,
        top: patches,
    })
}

/// Probes one model on a scenario already validated against `map`.
pub fn probe_model(model: &Model<f32>, scenario: &Scenario, map: &crate::env::GridMap, options: ProbeOptions) -> Result<ScenarioReport> {
    if model.config().map_height != map.height || model.config().map_width != map.width {
        return Err(Error::Config(format!(
            "scenario map is {}×{} but the model expects {}×{}",
            map.width,
            map.height,
            model.config().map_width,
            model.config().map_height
        )));
    }
    let state = scenario.state(map)?;
    let cond = model.config().cond.clone();
    let obs = observe(map, &state, scenario.observer, &cond);
    let out = model.forward_policy(&PolicyInput::from_bundle(&obs), true)?;
    let variant = model.config().variant;
    let heatmaps = match &out.local {
        Some(record) => extract_attention(record, options.layer, options.agg)?
            .into_iter()
            .map(|mut h| {
                h.source.variant = Some(variant.name().to_string());
                h
            })
            .collect(),
        None => Vec::new(),
    };
    let cm_attention = out
        .cm
        .iter()
        .map(|r| cm_summary(model, r, options.layer))
        .collect::<Result<_>>()?;
    let action = Action::from_index(out.greedy()).expect("four actions");
    Ok(ScenarioReport {
        scenario_hash: scenario.hash(),
        variant,
        observer: scenario.observer,
        position: obs.position,
        action,
        scores: out.scores.iter().map(|&s| s as f64).collect(),
        heatmaps,
        cm_attention,
        cond,
        expected_action: scenario.expected_action,
        matches_expected: scenario.expected_action.map(|a| a == action),
    })
}

/// Runs the scenario's observer through the checkpoint's network of the
/// same agent index (agent 0 when the checkpoint has fewer agents).
pub fn run_scenario(scenario: &Scenario, ckpt: &Checkpoint, options: ProbeOptions) -> Result<ScenarioReport> {
    let own = ckpt.env.grid()?;
    let map = scenario.resolve_map(&own)?;
    if map != own {
        return Err(Error::Config("scenario map differs from the checkpoint's map".into()));
    }
    let agent = if scenario.observer < ckpt.num_agents() { scenario.observer } else { 0 };
    probe_model(&ckpt.model(agent)?, scenario, &map, options)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub variant: Variant,
    pub scenario_hash: String,
    pub action: Action,
    pub scores: Vec<f64>,
    pub dir: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareIndex {
    pub scenario_hash: String,
    pub entries: Vec<CompareEntry>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn heatmap_file(h: &Heatmap, format: HeatmapFormat) -> String {
    let which = h.source.head.map_or("mean".to_string(), |i| format!("head{i}"));
    format!("local_layer{}_{which}.{}", h.source.layer, format.extension())
}

/// Writes one report's renders into `dir` and returns the file names.
pub fn write_report(report: &ScenarioReport, dir: &Path, format: HeatmapFormat) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec!["report.json".to_string()];
    write(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    for h in &report.heatmaps {
        let name = heatmap_file(h, format);
        write(&dir.join(&name), &render_heatmap(h, format))?;
        files.push(name);
    }
    Ok(files)
}

/// Probes every checkpoint on the same scenario and writes one
/// subdirectory per checkpoint plus `index.json` into `out`.
pub fn compare_variants(
    scenario: &Scenario,
    checkpoints: &[(String, Checkpoint)],
    options: ProbeOptions,
    format: HeatmapFormat,
    out: &Path,
) -> Result<CompareIndex> {
    if checkpoints.len() < 2 {
        return Err(Error::Contract("comparison needs at least two checkpoints".into()));
    }
    let first = checkpoints[0].1.env.grid()?;
    for (label, c) in &checkpoints[1..] {
        if c.env.grid()? != first {
            return Err(Error::Config(format!("checkpoint {label} uses a different map")));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::new();
    for (i, (label, ckpt)) in checkpoints.iter().enumerate() {
        let report = run_scenario(scenario, ckpt, options)?;
        let dir = format!("{i}_{}", sanitize(label));
        let files = write_report(&report, &out.join(&dir), format)?;
        entries.push(CompareEntry {
            label: label.clone(),
            variant: report.variant,
            scenario_hash: report.scenario_hash,
            action: report.action,
            scores: report.scores,
            dir,
            files,
        });
    }
    let index = CompareIndex {
        scenario_hash: scenario.hash(),
        entries,
    };
    write(&out.join("index.json"), &serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
