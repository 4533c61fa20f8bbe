//! Run manifests and configuration layering.
//!
//! A run is resolved from three layers, highest first: command-line flags,
//! the manifest file, and the built-in training defaults. The resolved
//! manifest is written next to the run outputs and is enough to repeat the
//! run exactly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ghq::{AlgorithmVariant, GhqError, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory relative output paths live in.
pub const OUT_DIR_ENV: &str = "GHQ_OUT_DIR";

/// Partial manifest as written by hand. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub map: Option<String>,
    pub algo: Option<AlgorithmVariant>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    /// Any subset of the training configuration fields.
    #[serde(default)]
    pub train: toml::Table,
}

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GhqError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| GhqError::Config(format!("manifest {}: {e}", path.display())).into())
    }
}

/// Fully resolved run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub map: String,
    pub algo: AlgorithmVariant,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub train: TrainConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved manifests always serialise")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.toml");
        std::fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed_{seed}"))
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub map: Option<String>,
    pub algo: Option<AlgorithmVariant>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub train: toml::Table,
}

/// Layers `overrides` over `file` over the built-in defaults.
pub fn resolve(file: &ManifestFile, overrides: &Overrides, out_root: Option<&Path>) -> Result<RunManifest> {
    let map = overrides
        .map
        .clone()
        .or_else(|| file.map.clone())
        .ok_or_else(|| GhqError::Config("no map given (use --map or set `map` in the manifest)".into()))?;
    let algo = overrides.algo.or(file.algo).unwrap_or_default();

    let mut table = toml::Table::try_from(TrainConfig::default()).expect("defaults serialise");
    for (k, v) in file.train.iter().chain(&overrides.train) {
        table.insert(k.clone(), v.clone());
    }
    table.insert("variant".into(), toml::Value::String(algo.name().into()));
    let train: TrainConfig =
        table.try_into().map_err(|e| GhqError::Config(format!("training configuration: {e}")))?;
    train.validate()?;

    let seeds = overrides.seeds.clone().or_else(|| file.seeds.clone()).unwrap_or_else(|| vec![1]);
    if seeds.is_empty() {
        return Err(GhqError::Config("seed list is empty".into()).into());
    }
    let out = overrides.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| {
        let stem = Path::new(&map).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| map.clone());
        PathBuf::from("runs").join(format!("{stem}_{}", algo.name()))
    });
    let out = match out_root {
        Some(root) if out.is_relative() => root.join(out),
        _ => out,
    };
    Ok(RunManifest { map, algo, seeds, out, train })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> ManifestFile {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_fill_everything_missing() {
        let m = resolve(&file("map = \"3m\""), &Overrides::default(), None).unwrap();
        assert_eq!(m.train, TrainConfig::default());
        assert_eq!(m.algo, AlgorithmVariant::Ghq);
        assert_eq!(m.seeds, vec![1]);
        assert_eq!(m.out, PathBuf::from("runs/3m_ghq"));
    }

    #[test]
    fn flags_beat_manifest_beats_defaults() {
        let f = file(
            "map = \"3m\"\nalgo = \"vdn\"\nseeds = [4]\n[train]\ntotal_steps = 1000\nlambda_mi = 0.5\nbatch_size = 8\n",
        );
        let mut o = Overrides { algo: Some(AlgorithmVariant::Qmix), seeds: Some(vec![7, 8]), ..Default::default() };
        o.train.insert("total_steps".into(), toml::Value::Integer(2000));
        let m = resolve(&f, &o, None).unwrap();
        assert_eq!(m.algo, AlgorithmVariant::Qmix);
        assert_eq!(m.train.variant, AlgorithmVariant::Qmix);
        assert_eq!(m.seeds, vec![7, 8]);
        assert_eq!(m.train.total_steps, 2000);
        assert_eq!(m.train.lambda_mi, 0.5);
        assert_eq!(m.train.batch_size, 8);
        assert_eq!(m.train.gamma, TrainConfig::default().gamma);
    }

    #[test]
    fn resolved_manifest_round_trips() {
        let m = resolve(&file("map = \"3m1m_5m\"\n[train]\neval_interval = 500\n"), &Overrides::default(), None).unwrap();
        let again: RunManifest = toml::from_str(&m.to_toml()).unwrap();
        assert_eq!(again, m);
        let as_file: ManifestFile = toml::from_str(&m.to_toml()).unwrap();
        assert_eq!(resolve(&as_file, &Overrides::default(), None).unwrap(), m);
    }

    #[test]
    fn output_root_applies_to_relative_paths_only() {
        let root = Path::new("/tmp/root");
        let m = resolve(&file("map = \"3m\"\nout = \"a\""), &Overrides::default(), Some(root)).unwrap();
        assert_eq!(m.out, PathBuf::from("/tmp/root/a"));
        let m = resolve(&file("map = \"3m\"\nout = \"/abs\""), &Overrides::default(), Some(root)).unwrap();
        assert_eq!(m.out, PathBuf::from("/abs"));
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let missing_map = resolve(&ManifestFile::default(), &Overrides::default(), None).unwrap_err();
        assert!(matches!(missing_map.downcast_ref::<GhqError>(), Some(GhqError::Config(_))));
        let typo = resolve(&file("map = \"3m\"\n[train]\nbatchsize = 3\n"), &Overrides::default(), None).unwrap_err();
        assert!(matches!(typo.downcast_ref::<GhqError>(), Some(GhqError::Config(_))));
        assert!(toml::from_str::<ManifestFile>("mapp = \"3m\"").is_err());
    }
}
