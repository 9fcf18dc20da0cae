use std::fs;
use std::path::Path;

use daynight::config::{ExperimentConfig, RunMode};
use daynight::orchestrator::{Trainer, CHECKPOINT_DIR, METRICS_FILE};

fn tiny(mode: RunMode) -> ExperimentConfig {
    ExperimentConfig {
        run_mode: mode,
        seed: 11,
        day_epochs: 2,
        night_epochs: 2,
        day_steps: 16,
        world_updates: 2,
        world_batch: 2,
        seq_len: 4,
        agent_updates: 2,
        agent_batch: 2,
        horizon: 4,
        test_repetitions: 2,
        seed_episodes: 2,
        hidden: 8,
        categoricals: 2,
        classes: 4,
        units: 8,
        mlp_layers: 1,
        encoder_filters: vec![2, 2, 2, 2],
        decoder_filters: vec![2, 2, 2, 3],
        checkpoint_every: 1,
        ..ExperimentConfig::desk()
    }
}

fn metrics(dir: &Path) -> String {
    fs::read_to_string(dir.join(METRICS_FILE)).unwrap()
}

fn interrupted_run(cfg: ExperimentConfig, dir: &Path, stop_after: usize) {
    let mut first = Trainer::new(cfg, dir).unwrap();
    for _ in 0..stop_after {
        first.step_epoch().unwrap();
    }
    drop(first);
    let ckpt = dir.join(CHECKPOINT_DIR).join(format!("epoch_{stop_after:04}.safetensors"));
    let mut resumed = Trainer::resume(&ckpt, None).unwrap();
    resumed.run().unwrap();
    assert!(resumed.finished());
}

#[test]
fn resuming_mid_day_reproduces_the_uninterrupted_run() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    Trainer::new(tiny(RunMode::DreamMixture), &a).unwrap().run().unwrap();
    interrupted_run(tiny(RunMode::DreamMixture), &b, 1);
    assert_eq!(metrics(&a), metrics(&b));
}

#[test]
fn resuming_at_the_phase_boundary_keeps_the_frozen_model() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    Trainer::new(tiny(RunMode::DreamRnd), &a).unwrap().run().unwrap();
    interrupted_run(tiny(RunMode::DreamRnd), &b, 2);
    let text = metrics(&b);
    assert_eq!(metrics(&a), text);
    let hashes: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["world_hash"].to_string())
        .collect();
    assert_eq!(hashes.len(), 4);
    assert!(hashes[1..].iter().all(|h| *h == hashes[1]));
}

#[test]
fn resuming_a_finished_run_is_a_no_op() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("done");
    Trainer::new(tiny(RunMode::Offline), &dir).unwrap().run().unwrap();
    let before = metrics(&dir);
    let latest = dir.join(CHECKPOINT_DIR).join("latest.safetensors");
    let mut t = Trainer::resume(&latest, None).unwrap();
    assert!(t.finished());
    assert_eq!(t.run().unwrap().len(), 4);
    assert_eq!(metrics(&dir), before);
}
