use da6_core::checkpoint::{Checkpoint, EnvSection, MAGIC};
use da6_core::env::{CondKind, EnvConfig, DEFAULT_MAP};
use da6_core::model::{ArchDims, Model, ModelConfig, Variant};
use da6_core::testkit::tiny_dims;
use da6_core::training::{evaluate, TrainConfig, Trainer};
use da6_core::Error;

const MAP: &str = "bbbbbbb\nbbbbbbb\nbbbbbbb\nbbbBbbb\nbbbbbbb\nbbbbbbb\nbbbbbbb\n";

fn trained() -> Checkpoint {
    let config = TrainConfig {
        map_text: Some(MAP.into()),
        env: EnvConfig {
            roster: vec![da6_core::env::AgentEntry::of(da6_core::env::AgentType::A)],
            objects_per_type: [5, 0],
            horizon: 12,
            ..EnvConfig::default()
        },
        variant: Variant::Da6Iqn,
        cond: vec![CondKind::GPos],
        arch: ArchDims {
            head_hidden: 8,
            ..tiny_dims()
        },
        batch_size: 4,
        warmup: 5,
        target_sync: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config).unwrap();
    for _ in 0..2 {
        t.run_episode::<std::io::Sink>(None, |_, _| {}).unwrap();
    }
    t.checkpoint()
}

#[test]
fn save_load_save_is_byte_identical() {
    let ckpt = trained();
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), bytes);
    assert_eq!(loaded.progress.episodes, 2);
}

#[test]
fn loaded_checkpoint_evaluates_bit_identically() {
    let ckpt = trained();
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let a = evaluate(&ckpt, 3, 11).unwrap();
    let b = evaluate(&back, 3, 11).unwrap();
    assert_eq!(a, b);
    for (x, y) in ckpt.models().unwrap().iter().zip(back.models().unwrap()) {
        assert!(x.params().same_values(y.params()));
    }
}

#[test]
fn resume_restores_progress_and_weights() {
    let ckpt = trained();
    let t = Trainer::resume(&ckpt).unwrap();
    assert_eq!(t.episode(), 2);
    assert!(t.models()[0].params().same_values(&ckpt.learners[0].online));
    let again = t.checkpoint();
    assert_eq!(again.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn inference_checkpoint_round_trips() {
    let config = ModelConfig::build(Variant::Da3Dqn, &[], 25, 25, &tiny_dims()).unwrap();
    let models: Vec<Model<f32>> = (0..2).map(|s| Model::new(config.clone(), s).unwrap()).collect();
    let env = EnvSection {
        map: DEFAULT_MAP.into(),
        config: EnvConfig {
            roster: vec![da6_core::env::AgentEntry::of(da6_core::env::AgentType::A); 2],
            ..EnvConfig::default()
        },
    };
    let ckpt = Checkpoint::from_models(&models, env).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.num_agents(), 2);
    assert!(back.train.is_none());
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert!(Trainer::resume(&back).is_err());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = trained().to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..12]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}
