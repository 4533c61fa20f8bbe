use ghq::autodiff::Checkpoint;
use ghq::env::builtin_map;
use ghq::eval::evaluate_policy;
use ghq::learner::{run_training, Trainer};
use ghq::{AlgorithmVariant, GhqError, TrainConfig};

fn short(variant: AlgorithmVariant) -> TrainConfig {
    TrainConfig {
        variant,
        total_steps: 500,
        batch_size: 4,
        buffer_capacity: 16,
        target_update_interval: 5,
        eval_interval: 250,
        eval_episodes: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn saved_checkpoint_evaluates_like_the_trainer() {
    let map = builtin_map("3m1m_5m").unwrap();
    let mut trainer = Trainer::new(short(AlgorithmVariant::Ghq), map.clone(), 3).unwrap();
    trainer.run(|_| Ok(())).unwrap();
    let live = trainer.evaluate(6).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ghq");
    trainer.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let restored = evaluate_policy(&loaded, &map, 6, 3).unwrap();

    assert_eq!(restored.wins, live.wins);
    assert_eq!(restored.mean_return, live.mean_return);
    assert_eq!(restored.trajectories, live.trajectories);
}

#[test]
fn every_variant_trains_reproducibly() {
    let map = builtin_map("3m1m_5m").unwrap();
    for variant in [AlgorithmVariant::Ghq, AlgorithmVariant::GhqNoMi, AlgorithmVariant::Qmix] {
        let a = run_training(short(variant), map.clone(), 5, |_| Ok(())).unwrap();
        let b = run_training(short(variant), map.clone(), 5, |_| Ok(())).unwrap();
        assert!(a.env_steps >= 500, "{variant:?}");
        assert_eq!(a.records, b.records, "{variant:?}");
        assert_eq!(a.checkpoint, b.checkpoint, "{variant:?}");
        assert!(a.records.iter().all(|r| r.td_loss.iter().flatten().all(|l| l.is_finite())));
    }
}

#[test]
fn checkpoint_from_another_map_is_rejected() {
    let map = builtin_map("3m1m_5m").unwrap();
    let out = run_training(short(AlgorithmVariant::Qmix), map, 1, |_| Ok(())).unwrap();
    let other = builtin_map("6m2m_15m").unwrap();
    let err = evaluate_policy(&out.checkpoint, &other, 1, 0).unwrap_err();
    assert!(matches!(err, GhqError::Config(_)), "{err}");
}

#[test]
fn truncated_checkpoint_file_is_a_format_error() {
    let map = builtin_map("3m1m_5m").unwrap();
    let out = run_training(short(AlgorithmVariant::Ghq), map, 1, |_| Ok(())).unwrap();
    let mut bytes = Vec::new();
    out.checkpoint.write_to(&mut bytes).unwrap();
    bytes.truncate(bytes.len() / 2);
    let err = Checkpoint::read_from(&mut bytes.as_slice()).unwrap_err();
    assert!(matches!(err, GhqError::Format(_) | GhqError::Io(_)), "{err}");
}
