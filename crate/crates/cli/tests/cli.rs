use std::path::Path;
use std::process::{Command, Output};

fn ghq(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghq"))
        .args(args)
        .env("GHQ_OUT_DIR", out_root)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn analyze_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = ghq(&["analyze", "--map", "6m2m_16m"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("ES 2.67"));
    assert!(stdout.contains("POS 0.250"));
}

#[test]
fn missing_map_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = ghq(&["train", "--map", "no/such/map.toml", "--steps", "100"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no/such/map.toml"));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ghq(&["train", "--map", "3m", "--algo", "nope"], dir.path()).status.code(), Some(2));
    assert_eq!(ghq(&["frobnicate"], dir.path()).status.code(), Some(2));
    let bad_manifest = dir.path().join("m.toml");
    std::fs::write(&bad_manifest, "map = \"3m\"\nunknown_key = 1\n").unwrap();
    let out = ghq(&["train", "--manifest", bad_manifest.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = ghq(
        &["train", "--map", "3m", "--algo", "qmix", "--steps", "400", "--seeds", "1,2", "--eval-interval", "200", "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let run = dir.path().join("run");
    assert!(run.join("manifest.toml").exists());
    for seed in [1, 2] {
        let s = run.join(format!("seed_{seed}"));
        let log = std::fs::read_to_string(s.join("metrics.jsonl")).unwrap();
        assert!(log.lines().count() >= 3, "{log}");
        assert!(log.contains("\"test_WR\""));
        assert!(s.join("checkpoint.ghq").exists());
        assert!(s.join("target_updates.json").exists());
    }

    let ckpt = run.join("seed_1/checkpoint.ghq");
    let eval_dir = dir.path().join("eval");
    let out = ghq(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "4", "--heatmaps", "--out", eval_dir.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).starts_with("WR "));
    assert!(eval_dir.join("trajectories.jsonl").exists());
    assert!(eval_dir.join("heatmap_health_marine.csv").exists());
    assert!(eval_dir.join("heatmap_actions_marine.csv").exists());

    let out = ghq(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--map", "6m2m_15m", "--out", eval_dir.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));

    let cmp_dir = dir.path().join("cmp");
    let out = ghq(&["compare", run.to_str().unwrap(), "--out", cmp_dir.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("qmix"));
    assert!(std::fs::read_to_string(cmp_dir.join("curves.csv")).unwrap().starts_with("algo,seed,env_step,test_WR"));
}

#[test]
fn single_group_ghq_warns_about_mi() {
    let dir = tempfile::tempdir().unwrap();
    let out = ghq(&["train", "--map", "3m", "--steps", "100", "--eval-interval", "100", "--out", "w"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("MI loss is disabled"));
}

#[test]
fn validate_flags_a_corrupted_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let out = ghq(&["validate", "--flip-gradient-sign"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("[FAIL]"));
}
