use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ghq::autodiff::Checkpoint;
use ghq::env::Env;
use ghq::eval::{accumulate_heatmaps, evaluate_policy, mean_std, welch_t_test, MetricsRecord};
use ghq::learner::{load_networks, Trainer};
use ghq::validate::{run_all, CheckResult, ValidateOptions};
use ghq::{compute_es, compute_pos, group_by_ideal_object, padded_action_dim, validate_jtc, GhqError, MapConfig};

use crate::manifest::RunManifest;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ghq";
pub const TARGET_UPDATES_FILE: &str = "target_updates.json";

/// Files produced by one seed of a training run.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<MetricsRecord>,
}

impl SeedRun {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    pub fn final_win_rate(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.win_rate)
    }
}

/// Trains every seed of `manifest` in turn, writing the resolved manifest,
/// one metrics log, checkpoint and target-update audit per seed.
pub fn train(manifest: &RunManifest, progress: &mut dyn Write) -> Result<Vec<SeedRun>> {
    let map = MapConfig::resolve(&manifest.map)?;
    std::fs::create_dir_all(&manifest.out).with_context(|| format!("creating {}", manifest.out.display()))?;
    manifest.write(&manifest.out)?;
    let mut runs = Vec::with_capacity(manifest.seeds.len());
    for &seed in &manifest.seeds {
        let mut trainer = Trainer::new(manifest.train.clone(), map.clone(), seed)?;
        if manifest.algo.uses_mi() && !trainer.nets.has_mi() {
            writeln!(
                progress,
                "warning: map '{}' forms a single group; the inter-group MI loss is disabled",
                map.name
            )?;
        }
        let dir = manifest.seed_dir(seed);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let metrics_path = dir.join(METRICS_FILE);
        let mut log = BufWriter::new(
            File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?,
        );
        let records = trainer.run(|r| {
            log.write_all(r.to_json_line().as_bytes())?;
            log.flush()?;
            writeln!(progress, "seed {seed} step {:>8} episode {:>6} WR {:.3}", r.env_step, r.episode, r.win_rate)?;
            Ok(())
        })?;
        trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        std::fs::write(dir.join(TARGET_UPDATES_FILE), serde_json::to_string(&trainer.target_updates)?)?;
        runs.push(SeedRun { seed, dir, records });
    }
    Ok(runs)
}

/// Result of `ghq eval`.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub written: Vec<PathBuf>,
}

pub struct EvalRequest<'a> {
    pub checkpoint: &'a Path,
    /// Map name or path; the checkpoint's own map when `None`.
    pub map: Option<&'a str>,
    pub episodes: usize,
    pub seed: u64,
    pub heatmaps: bool,
    pub out: &'a Path,
}

pub fn eval(req: &EvalRequest<'_>) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(req.checkpoint).map_err(|e| match e {
        GhqError::Io(io) => GhqError::Config(format!("cannot read checkpoint {}: {io}", req.checkpoint.display())),
        other => other,
    })?;
    let map = match req.map {
        Some(m) => MapConfig::resolve(m)?,
        None => load_networks(&ckpt, None)?.2.map,
    };
    let summary = evaluate_policy(&ckpt, &map, req.episodes, req.seed)?;
    std::fs::create_dir_all(req.out).with_context(|| format!("creating {}", req.out.display()))?;
    let mut written = Vec::new();
    let traj_path = req.out.join("trajectories.jsonl");
    let mut w = BufWriter::new(File::create(&traj_path)?);
    for t in &summary.trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    written.push(traj_path);
    if req.heatmaps {
        let n_actions = Env::new(map.clone())?.padded_action_dim();
        let mut ally_types: Vec<&str> = Vec::new();
        for u in &map.ally_units {
            if !ally_types.contains(&u.stats.name.as_str()) {
                ally_types.push(&u.stats.name);
            }
        }
        for unit in ally_types {
            let acc = accumulate_heatmaps(&summary.trajectories, unit, n_actions);
            for (kind, csv) in [("health", acc.health_csv()), ("actions", acc.action_csv())] {
                let path = req.out.join(format!("heatmap_{kind}_{unit}.csv"));
                std::fs::write(&path, csv)?;
                written.push(path);
            }
        }
    }
    Ok(EvalReport {
        episodes: summary.episodes,
        wins: summary.wins,
        win_rate: summary.win_rate,
        mean_return: summary.mean_return,
        written,
    })
}

/// Difficulty metrics and group structure of a map, as printed by `ghq analyze`.
pub fn analyze(map_name: &str) -> Result<String> {
    let map = MapConfig::resolve(map_name)?;
    let groups = group_by_ideal_object(&map);
    let mut s = String::new();
    writeln!(s, "map {}", map.name)?;
    match compute_es(&map, None) {
        Ok(es) => writeln!(s, "ES {:.2}", (es * 100.0 + 1e-9).round() / 100.0)?,
        Err(e) => writeln!(s, "ES undefined ({e})")?,
    }
    writeln!(s, "POS {:.3}", compute_pos(&map)?)?;
    writeln!(s, "groups {}", groups.len())?;
    for (i, g) in groups.groups.iter().enumerate() {
        writeln!(
            s,
            "  group {i}: agents {:?}, ideal object {:?}, interactive actions {}, action dim {}",
            g.members,
            g.ideal_object,
            g.interactive_dim,
            g.action_dim()
        )?;
    }
    let jtc = validate_jtc(&groups, map.n_allies());
    writeln!(s, "JTC {}", if jtc { "valid" } else { "violated" })?;
    writeln!(s, "padded action dim {}", padded_action_dim(&map))?;
    Ok(s)
}

/// Runs the self-check suite. Returns the report and whether every check passed.
pub fn validate(opts: &ValidateOptions) -> Result<(String, bool)> {
    let checks = run_all(opts)?;
    let mut s = String::new();
    for c in &checks {
        writeln!(s, "{}", format_check(c))?;
    }
    let ok = checks.iter().all(CheckResult::passed);
    writeln!(s, "{}", if ok { "all checks passed" } else { "some checks FAILED" })?;
    Ok((s, ok))
}

pub fn format_check(c: &CheckResult) -> String {
    format!(
        "[{}] {} ({}/{} ok, worst {:.3e}; {})",
        if c.passed() { "PASS" } else { "FAIL" },
        c.name,
        c.instances - c.failures,
        c.instances,
        c.worst,
        c.tolerance
    )
}

/// Win-rate curves of several training runs side by side.
#[derive(Clone, Debug)]
pub struct Comparison {
    /// `(label, seed, records)` per seed of every run.
    pub curves: Vec<(String, u64, Vec<MetricsRecord>)>,
}

impl Comparison {
    pub fn load(run_dirs: &[PathBuf]) -> Result<Self> {
        let mut curves = Vec::new();
        for dir in run_dirs {
            let manifest_path = dir.join("manifest.toml");
            let text = std::fs::read_to_string(&manifest_path)
                .map_err(|e| GhqError::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
            let manifest: RunManifest =
                toml::from_str(&text).map_err(|e| GhqError::Config(format!("{}: {e}", manifest_path.display())))?;
            for &seed in &manifest.seeds {
                let path = dir.join(format!("seed_{seed}")).join(METRICS_FILE);
                curves.push((manifest.algo.name().to_string(), seed, read_metrics(&path)?));
            }
        }
        Ok(Self { curves })
    }

    /// Long-format CSV: `algo,seed,env_step,test_WR`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("algo,seed,env_step,test_WR\n");
        for (label, seed, records) in &self.curves {
            for r in records {
                let _ = writeln!(s, "{label},{seed},{},{}", r.env_step, r.win_rate);
            }
        }
        s
    }

    /// Final win rate of each seed, grouped by label in first-seen order.
    pub fn final_win_rates(&self) -> Vec<(String, Vec<f64>)> {
        let mut order: Vec<String> = Vec::new();
        let mut by_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (label, _, records) in &self.curves {
            if !order.contains(label) {
                order.push(label.clone());
            }
            by_label.entry(label.clone()).or_default().push(records.last().map_or(0.0, |r| r.win_rate));
        }
        order.into_iter().map(|l| { let v = by_label.remove(&l).unwrap_or_default(); (l, v) }).collect()
    }

    /// Summary table. The first run is the reference for the Welch t-tests.
    pub fn table(&self) -> Result<String> {
        let finals = self.final_win_rates();
        let mut s = String::from("algo        seeds  final WR mean  std     t vs first  p\n");
        let reference = finals.first().map(|(_, v)| mean_std(v));
        for (label, wrs) in &finals {
            let (mean, std) = mean_std(wrs);
            let test = match reference {
                Some((rm, rs)) if wrs.len() >= 2 => Some(welch_t_test(rm, rs, mean, std, wrs.len())?),
                _ => None,
            };
            let (t, p) = test.map_or(("-".to_string(), "-".to_string()), |(t, p)| (format!("{t:.3}"), format!("{p:.3}")));
            writeln!(s, "{label:<11} {:<6} {mean:<14.3} {std:<7.3} {t:<11} {p}", wrs.len())?;
        }
        Ok(s)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GhqError::Config(format!("cannot read metrics log {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| GhqError::Format(format!("{}: {e}", path.display())).into()))
        .collect()
}

/// Exit status for an error: 2 for configuration and input problems, 1
/// for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<GhqError>() {
            return match e {
                GhqError::Config(_) | GhqError::Usage(_) | GhqError::Format(_) => 2,
                GhqError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_reports_structure() {
        let s = analyze("6m2m_16m").unwrap();
        assert!(s.contains("ES 2.67"), "{s}");
        assert!(s.contains("POS 0.250"));
        assert!(s.contains("groups 2"));
        assert!(s.contains("JTC valid"));
        let s = analyze("3m").unwrap();
        assert!(s.contains("groups 1") && s.contains("POS 0.000"));
        let s = analyze("8m4m_23m").unwrap();
        assert!(s.contains("ES 2.88") && s.contains("POS 0.333"));
    }

    #[test]
    fn exit_codes() {
        let e: anyhow::Error = GhqError::Config("x".into()).into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = GhqError::Contract("x".into()).into();
        assert_eq!(exit_code(&e), 1);
        let e = anyhow::Error::from(GhqError::Config("inner".into())).context("outer");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 1);
    }

    #[test]
    fn missing_map_names_the_path() {
        let err = analyze("maps/nowhere.toml").unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("maps/nowhere.toml"));
    }
}
