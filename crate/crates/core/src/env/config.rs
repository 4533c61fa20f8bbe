//! Scenario descriptions: unit stats, map files and the built-in registry.
//!
//! Map files are TOML:
//!
//! ```toml
//! name = "3m1m_5m"
//! max_episode_steps = 200      # optional, default 200
//! sight_range = 9.0            # optional
//! step_duration = 1.0          # optional, game-seconds per env step
//! move_amount = 1.0            # optional, multiplier on unit speed
//! map_size = 32.0              # optional, side of the square map
//! spawn_jitter = 0.5           # optional, seeded spawn perturbation
//! normalize_reward = true      # optional
//!
//! [[allies]]
//! kind = "marine"              # marine | medivac | marauder, or any name with full stats
//! count = 3
//!
//! [[allies]]
//! kind = "medivac"
//! count = 1
//! max_health = 150.0           # any stat may be overridden
//!
//! [[enemies]]
//! kind = "marine"
//! count = 5
//!
//! [ally_layout]                # optional; see `Layout`
//! center = [8.0, 16.0]
//! formation = "cluster"        # cluster | column | line
//! spacing = 1.0
//!
//! [enemy_layout]
//! center = [24.0, 16.0]
//! ```
//!
//! A unit kind that is not one of the three built-ins must give every stat:
//! `max_health`, `shot_range`, `dps`, `speed` and `role`
//! (`"attacker"` or `"supporter"`).

use serde::{Deserialize, Serialize};

use crate::error::{config, GhqError, Result};

/// What a unit's interactive actions target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    /// Damages enemies.
    Attacker,
    /// Heals allies.
    Supporter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    /// Unit type name; distinct names get distinct one-hot slots.
    pub name: String,
    pub max_health: f64,
    pub shot_range: f64,
    /// Damage (attackers) or healing (supporters) per game-second.
    pub dps: f64,
    /// Map units per game-second.
    pub speed: f64,
    pub unit_kind: UnitKind,
    pub flying: bool,
    /// Game-seconds between attacks. Supporters heal every step.
    pub weapon_cooldown: f64,
}

impl UnitStats {
    pub fn marine() -> Self {
        Self::builtin("marine").expect("builtin")
    }

    pub fn medivac() -> Self {
        Self::builtin("medivac").expect("builtin")
    }

    pub fn marauder() -> Self {
        Self::builtin("marauder").expect("builtin")
    }

    /// Stats for the three built-in unit types.
    pub fn builtin(name: &str) -> Option<Self> {
        let (max_health, shot_range, dps, speed, unit_kind, flying) = match name {
            "marine" => (45.0, 5.0, 6.97, 2.25, UnitKind::Attacker, false),
            "medivac" => (150.0, 4.0, 9.00, 2.75, UnitKind::Supporter, true),
            "marauder" => (125.0, 6.0, 6.67, 2.25, UnitKind::Attacker, false),
            _ => return None,
        };
        Some(Self { name: name.to_string(), max_health, shot_range, dps, speed, unit_kind, flying, weapon_cooldown: 1.0 })
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("max_health", self.max_health),
            ("shot_range", self.shot_range),
            ("dps", self.dps),
            ("speed", self.speed),
            ("weapon_cooldown", self.weapon_cooldown),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return config(format!("unit '{}': {field} must be positive, got {v}", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSpawn {
    pub stats: UnitStats,
    pub position: [f64; 2],
}

/// Declarative scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub name: String,
    pub ally_units: Vec<UnitSpawn>,
    pub enemy_units: Vec<UnitSpawn>,
    pub max_episode_steps: usize,
    pub sight_range: f64,
    pub step_duration: f64,
    pub move_amount: f64,
    pub map_size: f64,
    /// Uniform spawn perturbation (map units) drawn from the reset seed.
    pub spawn_jitter: f64,
    /// Divide rewards so that a perfect episode returns 1.
    pub normalize_reward: bool,
}

pub const DEFAULT_MAX_EPISODE_STEPS: usize = 200;
pub const DEFAULT_SIGHT_RANGE: f64 = 9.0;
pub const DEFAULT_MAP_SIZE: f64 = 32.0;

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ally_units.is_empty() || self.enemy_units.is_empty() {
            return config(format!("map '{}': both sides need at least one unit", self.name));
        }
        for (side, units) in [("ally", &self.ally_units), ("enemy", &self.enemy_units)] {
            if !units.iter().any(|u| u.stats.unit_kind == UnitKind::Attacker) {
                return config(format!("map '{}': {side} side has no attacker", self.name));
            }
            for u in units.iter() {
                u.stats.validate()?;
                let [x, y] = u.position;
                if !(0.0..=self.map_size).contains(&x) || !(0.0..=self.map_size).contains(&y) {
                    return config(format!("map '{}': spawn {:?} outside the map", self.name, u.position));
                }
            }
        }
        if self.max_episode_steps < 1 {
            return config(format!("map '{}': max_episode_steps must be >= 1", self.name));
        }
        for (field, v) in [
            ("sight_range", self.sight_range),
            ("step_duration", self.step_duration),
            ("move_amount", self.move_amount),
            ("map_size", self.map_size),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return config(format!("map '{}': {field} must be positive", self.name));
            }
        }
        if !(self.spawn_jitter >= 0.0 && self.spawn_jitter.is_finite()) {
            return config(format!("map '{}': spawn_jitter must be non-negative", self.name));
        }
        Ok(())
    }

    pub fn n_allies(&self) -> usize {
        self.ally_units.len()
    }

    pub fn n_enemies(&self) -> usize {
        self.enemy_units.len()
    }

    pub fn count_allies(&self, kind: UnitKind) -> usize {
        self.ally_units.iter().filter(|u| u.stats.unit_kind == kind).count()
    }

    pub fn count_enemies(&self, kind: UnitKind) -> usize {
        self.enemy_units.iter().filter(|u| u.stats.unit_kind == kind).count()
    }

    /// Distinct unit type names, allies first, in order of appearance.
    pub fn unit_types(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for u in self.ally_units.iter().chain(&self.enemy_units) {
            if !names.contains(&u.stats.name) {
                names.push(u.stats.name.clone());
            }
        }
        names
    }

    /// Interactive action count of an ally unit kind.
    pub fn interactive_dim(&self, kind: UnitKind) -> usize {
        match kind {
            UnitKind::Attacker => self.n_enemies(),
            UnitKind::Supporter => self.n_allies(),
        }
    }

    /// Interactive action count of ally `agent`.
    pub fn agent_interactive_dim(&self, agent: usize) -> usize {
        self.interactive_dim(self.ally_units[agent].stats.unit_kind)
    }

    /// Total enemy health plus kill and win bonuses: the return of a
    /// perfect episode before normalisation.
    pub fn max_reward(&self) -> f64 {
        let health: f64 = self.enemy_units.iter().map(|u| u.stats.max_health).sum();
        health + KILL_REWARD * self.n_enemies() as f64 + WIN_REWARD
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: MapFile = toml::from_str(text).map_err(|e| GhqError::Config(format!("map file: {e}")))?;
        file.into_config()
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GhqError::Config(format!("cannot read map file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Resolves a built-in map name, or failing that a path to a map file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(cfg) = builtin_map(name_or_path) {
            return Ok(cfg);
        }
        let path = std::path::Path::new(name_or_path);
        if path.exists() {
            return Self::from_path(path);
        }
        config(format!("unknown map '{name_or_path}': not a built-in map and no file at {}", path.display()))
    }
}

pub const KILL_REWARD: f64 = 10.0;
pub const WIN_REWARD: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Formation {
    /// Compact square grid around the centre.
    #[default]
    Cluster,
    /// Vertical line through the centre.
    Column,
    /// Horizontal line starting at the centre and extending away from the
    /// opposing side.
    Line,
}

/// Spawn arrangement for one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub center: [f64; 2],
    #[serde(default)]
    pub formation: Formation,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    1.0
}

impl Layout {
    /// `away` is +1 when the opposing side lies towards -x, -1 otherwise.
    fn positions(&self, n: usize, away: f64) -> Vec<[f64; 2]> {
        let [cx, cy] = self.center;
        let s = self.spacing;
        match self.formation {
            Formation::Cluster => {
                let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
                let rows = n.div_ceil(cols);
                (0..n)
                    .map(|i| {
                        let (r, c) = (i / cols, i % cols);
                        let dx = (c as f64 - (cols as f64 - 1.0) / 2.0) * s;
                        let dy = (r as f64 - (rows as f64 - 1.0) / 2.0) * s;
                        [cx + dx, cy + dy]
                    })
                    .collect()
            }
            Formation::Column => {
                (0..n).map(|i| [cx, cy + (i as f64 - (n as f64 - 1.0) / 2.0) * s]).collect()
            }
            Formation::Line => (0..n).map(|i| [cx + away * i as f64 * s, cy]).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitGroupFile {
    kind: String,
    #[serde(default = "one")]
    count: usize,
    max_health: Option<f64>,
    shot_range: Option<f64>,
    dps: Option<f64>,
    speed: Option<f64>,
    role: Option<UnitKind>,
    flying: Option<bool>,
    weapon_cooldown: Option<f64>,
}

fn one() -> usize {
    1
}

impl UnitGroupFile {
    fn stats(&self) -> Result<UnitStats> {
        let base = UnitStats::builtin(&self.kind);
        let need = |field: &str, v: Option<f64>, b: Option<f64>| -> Result<f64> {
            v.or(b).ok_or_else(|| {
                GhqError::Config(format!("unit kind '{}' is not built in; '{field}' is required", self.kind))
            })
        };
        Ok(UnitStats {
            name: self.kind.clone(),
            max_health: need("max_health", self.max_health, base.as_ref().map(|b| b.max_health))?,
            shot_range: need("shot_range", self.shot_range, base.as_ref().map(|b| b.shot_range))?,
            dps: need("dps", self.dps, base.as_ref().map(|b| b.dps))?,
            speed: need("speed", self.speed, base.as_ref().map(|b| b.speed))?,
            unit_kind: self.role.or(base.as_ref().map(|b| b.unit_kind)).ok_or_else(|| {
                GhqError::Config(format!("unit kind '{}' is not built in; 'role' is required", self.kind))
            })?,
            flying: self.flying.or(base.as_ref().map(|b| b.flying)).unwrap_or(false),
            weapon_cooldown: self.weapon_cooldown.unwrap_or(1.0),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    name: String,
    max_episode_steps: Option<usize>,
    sight_range: Option<f64>,
    step_duration: Option<f64>,
    move_amount: Option<f64>,
    map_size: Option<f64>,
    spawn_jitter: Option<f64>,
    normalize_reward: Option<bool>,
    allies: Vec<UnitGroupFile>,
    enemies: Vec<UnitGroupFile>,
    ally_layout: Option<Layout>,
    enemy_layout: Option<Layout>,
}

impl MapFile {
    fn into_config(self) -> Result<MapConfig> {
        let expand = |groups: &[UnitGroupFile]| -> Result<Vec<UnitStats>> {
            let mut out = Vec::new();
            for g in groups {
                let stats = g.stats()?;
                out.extend(std::iter::repeat_n(stats, g.count));
            }
            Ok(out)
        };
        let allies = expand(&self.allies)?;
        let enemies = expand(&self.enemies)?;
        let map_size = self.map_size.unwrap_or(DEFAULT_MAP_SIZE);
        let ally_layout = self.ally_layout.unwrap_or_else(|| default_layout(map_size, true));
        let enemy_layout = self.enemy_layout.unwrap_or_else(|| default_layout(map_size, false));
        let cfg = MapConfig {
            name: self.name,
            ally_units: place(allies, &ally_layout, -1.0),
            enemy_units: place(enemies, &enemy_layout, 1.0),
            max_episode_steps: self.max_episode_steps.unwrap_or(DEFAULT_MAX_EPISODE_STEPS),
            sight_range: self.sight_range.unwrap_or(DEFAULT_SIGHT_RANGE),
            step_duration: self.step_duration.unwrap_or(1.0),
            move_amount: self.move_amount.unwrap_or(1.0),
            map_size,
            spawn_jitter: self.spawn_jitter.unwrap_or(DEFAULT_JITTER),
            normalize_reward: self.normalize_reward.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

const DEFAULT_JITTER: f64 = 0.5;

fn default_layout(map_size: f64, ally: bool) -> Layout {
    let x = if ally { map_size * 0.25 } else { map_size * 0.75 };
    Layout { center: [x, map_size / 2.0], formation: Formation::Cluster, spacing: 1.0 }
}

fn place(stats: Vec<UnitStats>, layout: &Layout, away: f64) -> Vec<UnitSpawn> {
    let positions = layout.positions(stats.len(), away);
    stats.into_iter().zip(positions).map(|(stats, position)| UnitSpawn { stats, position }).collect()
}

/// Builds a map from unit lists with the default left/right cluster layout.
pub fn standard_map(name: &str, allies: Vec<UnitStats>, enemies: Vec<UnitStats>) -> MapConfig {
    MapConfig {
        name: name.to_string(),
        ally_units: place(allies, &default_layout(DEFAULT_MAP_SIZE, true), -1.0),
        enemy_units: place(enemies, &default_layout(DEFAULT_MAP_SIZE, false), 1.0),
        max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
        sight_range: DEFAULT_SIGHT_RANGE,
        step_duration: 1.0,
        move_amount: 1.0,
        map_size: DEFAULT_MAP_SIZE,
        spawn_jitter: DEFAULT_JITTER,
        normalize_reward: true,
    }
}

/// The seven asymmetric heterogeneous maps with their (allied marines,
/// allied medivacs, enemy marines).
pub const HETEROGENEOUS_MAPS: [(&str, usize, usize, usize); 7] = [
    ("6m2m_15m", 6, 2, 15),
    ("6m2m_16m", 6, 2, 16),
    ("8m3m_21m", 8, 3, 21),
    ("8m4m_23m", 8, 4, 23),
    ("12m4m_30m", 12, 4, 30),
    ("15m2m_28m", 15, 2, 28),
    ("16m2m_30m", 16, 2, 30),
];

/// Small maps that train in minutes on one core.
pub const DESK_MAPS: [&str; 3] = ["3m", "3m1m_5m", "mmm_desk"];

/// Every name the registry lists explicitly. Names following the
/// `XmYm_Zm`, `Xm_Zm` and `Xm` patterns also resolve.
pub fn builtin_map_names() -> Vec<String> {
    HETEROGENEOUS_MAPS.iter().map(|m| m.0.to_string()).chain(DESK_MAPS.iter().map(|s| s.to_string())).collect()
}

/// Looks up a built-in map.
pub fn builtin_map(name: &str) -> Option<MapConfig> {
    match name {
        "3m1m_5m" => return Some(desk_3m1m_5m()),
        "mmm_desk" => {
            let allies = [vec![UnitStats::marine(); 2], vec![UnitStats::marauder()], vec![UnitStats::medivac()]].concat();
            let mut cfg = standard_map(name, allies, vec![UnitStats::marine(); 4]);
            cfg.max_episode_steps = 120;
            return Some(cfg);
        }
        _ => {}
    }
    let (marines, medivacs, enemies) = parse_map_name(name)?;
    let allies = [vec![UnitStats::marine(); marines], vec![UnitStats::medivac(); medivacs]].concat();
    Some(standard_map(name, allies, vec![UnitStats::marine(); enemies]))
}

/// Desk preset: three marines and a medivac against five marines strung out
/// in single file, so a team that keeps firing meets them one or two at a time.
fn desk_3m1m_5m() -> MapConfig {
    let allies = [vec![UnitStats::marine(); 3], vec![UnitStats::medivac()]].concat();
    let ally_layout = Layout { center: [6.0, 16.0], formation: Formation::Cluster, spacing: 1.0 };
    let enemy_layout = Layout { center: [10.0, 16.0], formation: Formation::Line, spacing: 4.5 };
    MapConfig {
        name: "3m1m_5m".into(),
        ally_units: place(allies, &ally_layout, -1.0),
        enemy_units: place(vec![UnitStats::marine(); 5], &enemy_layout, 1.0),
        max_episode_steps: 60,
        sight_range: DEFAULT_SIGHT_RANGE,
        step_duration: 1.0,
        move_amount: 1.0,
        map_size: DEFAULT_MAP_SIZE,
        spawn_jitter: DEFAULT_JITTER,
        normalize_reward: true,
    }
}

/// Parses `XmYm_Zm` (marines + medivacs vs marines), `Xm_Zm` and `Xm`.
fn parse_map_name(name: &str) -> Option<(usize, usize, usize)> {
    fn count(part: &str) -> Option<usize> {
        let digits = part.strip_suffix('m')?;
        let n: usize = digits.parse().ok()?;
        (n > 0).then_some(n)
    }
    match name.split_once('_') {
        Some((allies, enemies)) => {
            let enemies = count(enemies)?;
            let trimmed = allies.strip_suffix('m')?;
            match trimmed.find('m') {
                Some(pos) => {
                    let marines = count(&allies[..=pos])?;
                    let medivacs = count(&allies[pos + 1..])?;
                    Some((marines, medivacs, enemies))
                }
                None => Some((count(allies)?, 0, enemies)),
            }
        }
        None => {
            let n = count(name)?;
            Some((n, 0, n))
        }
    }
}
