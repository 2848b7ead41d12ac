use da6_core::checkpoint::{Checkpoint, EnvSection};
use da6_core::env::{default_map, AgentEntry, AgentType, CondKind, EnvConfig, ObjectKind, DEFAULT_MAP};
use da6_core::interp::{
    compare_variants, extract_attention, mean_row, parse_heatmap_csv, render_heatmap, AgentPlacement, Aggregation,
    HeatmapFormat, Layer, MapRef, ObjectPlacement, ProbeOptions, Scenario,
};
use da6_core::model::{Model, ModelConfig, Variant};
use da6_core::testkit::{attention_normalization, conditional_independence, da3_da6_mismatches, tiny_dims};
use da6_core::transformer::AttentionRecord;
use da6_core::Error;

const TOKENS: usize = 50;

fn record(heads: Vec<Vec<f64>>) -> AttentionRecord {
    AttentionRecord {
        encoder: "local".into(),
        layers: vec![heads],
        tokens: TOKENS,
    }
}

fn uniform() -> Vec<f64> {
    vec![1.0 / TOKENS as f64; TOKENS * TOKENS]
}

fn impulse(token: usize) -> Vec<f64> {
    let mut w = vec![0.0; TOKENS * TOKENS];
    for row in 0..TOKENS {
        w[row * TOKENS + token] = 1.0;
    }
    w
}

#[test]
fn uniform_attention_gives_a_flat_map() {
    let maps = extract_attention(&record(vec![uniform(), uniform()]), Layer::Last, Aggregation::MeanHeads).unwrap();
    assert_eq!(maps.len(), 1);
    let h = &maps[0];
    assert_eq!(h.grid.len(), 7);
    assert!(h.grid.iter().flatten().all(|&w| (w - 0.02).abs() < 1e-15));
    assert!((h.saliency - 0.02).abs() < 1e-15);
    assert!((h.total() - 1.0).abs() < 1e-12);
}

#[test]
fn per_head_yields_one_map_per_head() {
    let maps = extract_attention(&record(vec![uniform(), impulse(3), uniform()]), Layer::Index(0), Aggregation::PerHead).unwrap();
    assert_eq!(maps.len(), 3);
    assert_eq!(maps.iter().map(|h| h.source.head).collect::<Vec<_>>(), vec![Some(0), Some(1), Some(2)]);
    assert_eq!(maps[1].at(0, 2), 1.0);
    assert!(extract_attention(&record(vec![uniform()]), Layer::Index(1), Aggregation::PerHead).is_err());
}

#[test]
fn head_mean_matches_hand_average() {
    let a = impulse(0);
    let b = impulse(10);
    let row = mean_row(&record(vec![a, b]), 0, 0);
    for (i, &w) in row.iter().enumerate() {
        let want = if i == 0 || i == 10 { 0.5 } else { 0.0 };
        assert_eq!(w, want);
    }
    let maps = extract_attention(&record(vec![impulse(0), impulse(10)]), Layer::Last, Aggregation::MeanHeads).unwrap();
    assert_eq!(maps[0].saliency, 0.5);
    assert_eq!(maps[0].at(1, 2), 0.5);
}

#[test]
fn impulse_lands_on_its_view_cell() {
    for r in 0..7 {
        for c in 0..7 {
            let maps = extract_attention(&record(vec![impulse(1 + r * 7 + c)]), Layer::Last, Aggregation::MeanHeads).unwrap();
            assert_eq!(maps[0].at(r, c), 1.0);
            assert_eq!(maps[0].total(), 1.0);
        }
    }
}

#[test]
fn csv_and_pgm_renderings() {
    let h = &extract_attention(&record(vec![impulse(1 + 3 * 7 + 5)]), Layer::Last, Aggregation::MeanHeads).unwrap()[0];
    let csv = String::from_utf8(render_heatmap(h, HeatmapFormat::Csv)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[3], "0.000000,0.000000,0.000000,0.000000,0.000000,1.000000,0.000000");
    assert_eq!(lines[7], "saliency,0.000000");
    let (grid, saliency) = parse_heatmap_csv(&csv).unwrap();
    assert_eq!(grid, h.grid);
    assert_eq!(saliency, 0.0);

    let pgm = String::from_utf8(render_heatmap(h, HeatmapFormat::Pgm)).unwrap();
    let lines: Vec<&str> = pgm.lines().collect();
    assert_eq!(&lines[..3], &["P2", "7 7", "255"]);
    assert_eq!(lines[3 + 3], "0 0 0 0 0 255 0");
    assert_eq!(lines.len(), 10);
}

#[test]
fn csv_parse_back_is_within_rounding() {
    let maps = extract_attention(&record(vec![uniform(), impulse(7)]), Layer::Last, Aggregation::MeanHeads).unwrap();
    let csv = String::from_utf8(render_heatmap(&maps[0], HeatmapFormat::Csv)).unwrap();
    let (grid, saliency) = parse_heatmap_csv(&csv).unwrap();
    for (a, b) in grid.iter().flatten().zip(maps[0].grid.iter().flatten()) {
        assert!((a - b).abs() <= 5e-7);
    }
    assert!((saliency - maps[0].saliency).abs() <= 5e-7);
    assert!(parse_heatmap_csv("1,2\n").is_err());
}

#[test]
fn attention_rows_are_distributions() {
    assert!(attention_normalization(40, 3).unwrap() < 1e-6);
}

#[test]
fn da3_equals_da6_without_conditional_states() {
    assert_eq!(da3_da6_mismatches(10, 4).unwrap(), 0);
}

#[test]
fn da3_heatmaps_ignore_global_position() {
    let (identical, differing) = conditional_independence(10, 5).unwrap();
    assert_eq!(identical, 10);
    assert!(differing > 0);
}

fn scenario() -> Scenario {
    Scenario {
        name: Some("two stars".into()),
        description: None,
        approximate: false,
        map: MapRef::Default,
        agents: vec![
            AgentPlacement { kind: AgentType::A, x: 12, y: 11 },
            AgentPlacement { kind: AgentType::B, x: 13, y: 12 },
        ],
        objects: vec![
            ObjectPlacement { kind: ObjectKind::Star, x: 14, y: 11 },
            ObjectPlacement { kind: ObjectKind::Triangle, x: 10, y: 10 },
        ],
        observer: 0,
        cond: Some(vec![CondKind::GPos]),
        expected_action: None,
    }
}

fn checkpoint(variant: Variant, cond: &[CondKind], seed: u64) -> Checkpoint {
    let config = ModelConfig::build(variant, cond, 25, 25, &tiny_dims()).unwrap();
    let env = EnvSection {
        map: DEFAULT_MAP.into(),
        config: EnvConfig {
            roster: vec![AgentEntry::of(AgentType::A)],
            ..EnvConfig::default()
        },
    };
    Checkpoint::from_models(&[Model::new(config, seed).unwrap()], env).unwrap()
}

#[test]
fn compare_writes_one_directory_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = vec![
        ("DA3 run".to_string(), checkpoint(Variant::Da3Dqn, &[], 1)),
        ("da6".to_string(), checkpoint(Variant::Da6Iqn, &[CondKind::GPos], 2)),
    ];
    let s = scenario();
    let index = compare_variants(&s, &ckpts, ProbeOptions::default(), HeatmapFormat::Csv, dir.path()).unwrap();
    assert_eq!(index.scenario_hash, s.hash());
    assert_eq!(index.entries.len(), 2);
    assert_eq!(index.entries[0].dir, "0_DA3_run");
    assert_eq!(index.entries[1].variant, Variant::Da6Iqn);
    for e in &index.entries {
        for f in &e.files {
            assert!(dir.path().join(&e.dir).join(f).exists(), "{f}");
        }
        assert!(e.files.contains(&"local_layer0_mean.csv".to_string()));
    }
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(written["entries"].as_array().unwrap().len(), 2);
    assert!(compare_variants(&s, &ckpts[..1], ProbeOptions::default(), HeatmapFormat::Csv, dir.path()).is_err());
}

#[test]
fn scenario_hash_is_stable_and_content_sensitive() {
    let a = scenario();
    assert_eq!(a.hash(), scenario().hash());
    assert_eq!(a.hash().len(), 64);
    let mut b = scenario();
    b.objects[0].x = 15;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn illegal_placements_are_reported() {
    let map = default_map();
    assert!(scenario().validate(&map).is_empty());
    let mut s = scenario();
    s.agents[1] = AgentPlacement { kind: AgentType::B, x: 12, y: 11 };
    s.objects.push(ObjectPlacement { kind: ObjectKind::Star, x: 30, y: 0 });
    s.objects.push(ObjectPlacement { kind: ObjectKind::Star, x: 14, y: 11 });
    s.observer = 5;
    let codes: Vec<String> = s.validate(&map).into_iter().map(|v| v.code).collect();
    for code in ["bad_observer", "overlap", "out_of_bounds"] {
        assert!(codes.contains(&code.to_string()), "{codes:?}");
    }
    let wall = (0..25)
        .flat_map(|y| (0..25).map(move |x| (x, y)))
        .find(|&(x, y)| map.is_blocked(da6_core::env::Pos::new(x, y)))
        .unwrap();
    let mut s = scenario();
    s.objects[0] = ObjectPlacement { kind: ObjectKind::Star, x: wall.0, y: wall.1 };
    assert_eq!(s.validate(&map)[0].code, "wall");
    assert!(matches!(s.state(&map), Err(Error::Validation(_))));
}

#[test]
fn probe_reports_position_scores_and_cm_attention() {
    let ckpt = checkpoint(Variant::Da6Dqn, &[CondKind::GPos, CondKind::OPos], 3);
    let report = da6_core::interp::run_scenario(&scenario(), &ckpt, ProbeOptions::default()).unwrap();
    assert_eq!(report.scores.len(), 4);
    assert_eq!((report.position.x, report.position.y), (12, 11));
    assert_eq!(report.heatmaps.len(), 1);
    assert_eq!(report.cm_attention.len(), 2);
    assert!(report.cm_attention.iter().all(|c| c.top.len() == 3));
    let per_head = da6_core::interp::run_scenario(
        &scenario(),
        &ckpt,
        ProbeOptions {
            layer: Layer::Last,
            agg: Aggregation::PerHead,
        },
    )
    .unwrap();
    assert_eq!(per_head.heatmaps.len(), 2);
}

fn fixture(name: &str) -> Scenario {
    Scenario::from_file(format!("{}/../../configs/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn bundled_scenarios_are_legal_on_the_default_map() {
    let dir = format!("{}/../../configs/scenarios", env!("CARGO_MANIFEST_DIR"));
    let map = default_map();
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let s = Scenario::from_file(entry.unwrap().path()).unwrap();
        assert!(s.validate(&map).is_empty(), "{:?}", s.name);
        assert!(s.approximate && s.expected_action.is_some());
        count += 1;
    }
    assert_eq!(count, 8);
}

#[test]
fn da3_sees_the_same_heatmap_in_both_regions() {
    let ckpt = checkpoint(Variant::Da3Dqn, &[CondKind::GPos], 4);
    for (a, b) in [("fig6a_solo_delta", "fig6c_solo_theta"), ("fig6b_typec_delta", "fig6d_typec_theta")] {
        let ra = da6_core::interp::run_scenario(&fixture(a), &ckpt, ProbeOptions::default()).unwrap();
        let rb = da6_core::interp::run_scenario(&fixture(b), &ckpt, ProbeOptions::default()).unwrap();
        assert_eq!(ra.heatmaps, rb.heatmaps);
    }
}
