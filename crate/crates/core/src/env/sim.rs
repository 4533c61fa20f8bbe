use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MapConfig, UnitKind, UnitStats, KILL_REWARD, WIN_REWARD};
use crate::error::{GhqError, Result};

/// Action 0: only legal for dead units.
pub const ACTION_NULL: usize = 0;
pub const ACTION_STOP: usize = 1;
pub const ACTION_UP: usize = 2;
pub const ACTION_DOWN: usize = 3;
pub const ACTION_LEFT: usize = 4;
pub const ACTION_RIGHT: usize = 5;
/// Size of the common action block; interactive actions start here.
pub const COMMON_ACTIONS: usize = 6;

const CENTI: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ally,
    Enemy,
}

/// Per-agent action layout: six common actions then the interactive block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionSpace {
    pub common_dim: usize,
    pub interactive_dim: usize,
}

impl ActionSpace {
    pub fn total(&self) -> usize {
        self.common_dim + self.interactive_dim
    }
}

/// Live combat attributes of one unit.
///
/// Health is tracked in hundredths of a hit point so that damage, healing
/// and reward accounting are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitState {
    pub stats: UnitStats,
    pub side: Side,
    pub position: [f64; 2],
    health_centi: i64,
    max_health_centi: i64,
    pub weapon_cooldown: f64,
}

impl UnitState {
    fn spawn(stats: &UnitStats, side: Side, position: [f64; 2]) -> Self {
        let max = (stats.max_health * CENTI).round() as i64;
        Self {
            stats: stats.clone(),
            side,
            position,
            health_centi: max,
            max_health_centi: max,
            weapon_cooldown: 0.0,
        }
    }

    pub fn health(&self) -> f64 {
        self.health_centi as f64 / CENTI
    }

    pub fn health_centi(&self) -> i64 {
        self.health_centi
    }

    pub fn max_health(&self) -> f64 {
        self.max_health_centi as f64 / CENTI
    }

    pub fn health_fraction(&self) -> f64 {
        self.health_centi as f64 / self.max_health_centi as f64
    }

    pub fn alive(&self) -> bool {
        self.health_centi > 0
    }

    /// Overrides health (clamped to `[0, max]`). Intended for tests and
    /// scenario setup.
    pub fn set_health(&mut self, health: f64) {
        self.health_centi = ((health * CENTI).round() as i64).clamp(0, self.max_health_centi);
    }

    fn effect_centi(&self, step_duration: f64) -> i64 {
        (self.stats.dps * step_duration * CENTI).round() as i64
    }

    fn distance(&self, other: &UnitState) -> f64 {
        distance(self.position, other.position)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Full simulator state. Allies occupy the first `n_allies` slots of
/// `units`, enemies the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub units: Vec<UnitState>,
    pub n_allies: usize,
    pub step: usize,
    pub terminated: bool,
    pub won: bool,
}

impl EnvState {
    pub fn allies(&self) -> &[UnitState] {
        &self.units[..self.n_allies]
    }

    pub fn enemies(&self) -> &[UnitState] {
        &self.units[self.n_allies..]
    }

    pub fn allies_alive(&self) -> usize {
        self.allies().iter().filter(|u| u.alive()).count()
    }

    pub fn enemies_alive(&self) -> usize {
        self.enemies().iter().filter(|u| u.alive()).count()
    }
}

/// Legal actions per agent, padded to a common width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvailableActions {
    pub width: usize,
    pub rows: Vec<Vec<bool>>,
}

impl AvailableActions {
    pub fn is_available(&self, agent: usize, action: usize) -> bool {
        self.rows[agent].get(action).copied().unwrap_or(false)
    }

    pub fn as_f64(&self, agent: usize) -> Vec<f64> {
        self.rows[agent].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// What a caller sees after `reset` or `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub available: AvailableActions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Reward as configured (normalised when the map asks for it).
    pub reward: f64,
    /// Un-normalised reward in hundredths: exact for accounting checks.
    pub raw_reward_centi: i64,
    pub terminated: bool,
    pub won: bool,
    pub observation: Observation,
}

impl StepOutcome {
    pub fn raw_reward(&self) -> f64 {
        self.raw_reward_centi as f64 / CENTI
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Intent {
    Hold,
    Move([f64; 2]),
    Attack(usize),
    Heal(usize),
}

/// Deterministic heterogeneous micro-combat simulator.
///
/// Allies are controlled by the caller, enemies by an attack-nearest
/// script. All units act simultaneously on the state at the start of a step.
#[derive(Clone, Debug)]
pub struct Env {
    config: MapConfig,
    unit_types: Vec<String>,
    state: EnvState,
    max_reward_centi: i64,
}

impl Env {
    pub fn new(config: MapConfig) -> Result<Self> {
        config.validate()?;
        let unit_types = config.unit_types();
        let state = Self::initial_state(&config, None);
        let max_reward_centi = (config.max_reward() * CENTI).round() as i64;
        Ok(Self { config, unit_types, state, max_reward_centi })
    }

    fn initial_state(config: &MapConfig, seed: Option<u64>) -> EnvState {
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let jitter = config.spawn_jitter;
        let mut spawn = |pos: [f64; 2]| -> [f64; 2] {
            match rng.as_mut() {
                Some(r) if jitter > 0.0 => {
                    let dx = r.random_range(-jitter..=jitter);
                    let dy = r.random_range(-jitter..=jitter);
                    [(pos[0] + dx).clamp(0.0, config.map_size), (pos[1] + dy).clamp(0.0, config.map_size)]
                }
                _ => pos,
            }
        };
        let mut units = Vec::with_capacity(config.n_allies() + config.n_enemies());
        for u in &config.ally_units {
            units.push(UnitState::spawn(&u.stats, Side::Ally, spawn(u.position)));
        }
        for u in &config.enemy_units {
            units.push(UnitState::spawn(&u.stats, Side::Enemy, spawn(u.position)));
        }
        EnvState { units, n_allies: config.n_allies(), step: 0, terminated: false, won: false }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Mutable access for scenario construction in tests and tools. Masks and
    /// observations are recomputed from whatever is stored here.
    pub fn state_mut(&mut self) -> &mut EnvState {
        &mut self.state
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_allies()
    }

    pub fn n_enemies(&self) -> usize {
        self.config.n_enemies()
    }

    pub fn unit_types(&self) -> &[String] {
        &self.unit_types
    }

    pub fn action_space(&self, agent: usize) -> ActionSpace {
        ActionSpace { common_dim: COMMON_ACTIONS, interactive_dim: self.config.agent_interactive_dim(agent) }
    }

    /// Width of the padded action layout shared-parameter learners use.
    pub fn padded_action_dim(&self) -> usize {
        (0..self.n_agents()).map(|a| self.action_space(a).total()).max().unwrap_or(COMMON_ACTIONS)
    }

    fn feature_width(&self) -> usize {
        5 + self.unit_types.len()
    }

    /// `4 + (n_allies - 1)(5 + T) + n_enemies(5 + T) + 1 + T`
    pub fn obs_dim(&self) -> usize {
        let t = self.unit_types.len();
        4 + (self.n_agents() - 1) * self.feature_width() + self.n_enemies() * self.feature_width() + 1 + t
    }

    /// `n_allies(4 + T) + n_enemies(3 + T)`
    pub fn state_dim(&self) -> usize {
        let t = self.unit_types.len();
        self.n_agents() * (4 + t) + self.n_enemies() * (3 + t)
    }

    /// Restores spawn positions and full health. The seed only drives the
    /// spawn jitter, so equal seeds give bit-identical episodes.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.state = Self::initial_state(&self.config, Some(seed));
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        Observation {
            observations: (0..self.n_agents()).map(|a| self.build_observation(a)).collect(),
            state: self.build_state(),
            available: self.available_actions(),
        }
    }

    fn type_index(&self, u: &UnitState) -> usize {
        self.unit_types.iter().position(|n| *n == u.stats.name).expect("unit type registered")
    }

    fn move_target(&self, u: &UnitState, action: usize) -> [f64; 2] {
        let d = self.config.move_amount * u.stats.speed * self.config.step_duration;
        let [x, y] = u.position;
        let (nx, ny) = match action {
            ACTION_UP => (x, y + d),
            ACTION_DOWN => (x, y - d),
            ACTION_LEFT => (x - d, y),
            ACTION_RIGHT => (x + d, y),
            _ => (x, y),
        };
        [nx.clamp(0.0, self.config.map_size), ny.clamp(0.0, self.config.map_size)]
    }

    /// Legal actions for every agent.
    ///
    /// Dead agents may only take action 0. Living agents may always stop or
    /// move; interactive action `j` is legal when its target is alive and
    /// within shot range (supporters may not target themselves).
    pub fn available_actions(&self) -> AvailableActions {
        let width = self.padded_action_dim();
        let rows = (0..self.n_agents())
            .map(|a| {
                let mut row = vec![false; width];
                let unit = &self.state.units[a];
                if !unit.alive() {
                    row[ACTION_NULL] = true;
                    return row;
                }
                for r in row.iter_mut().take(COMMON_ACTIONS).skip(ACTION_STOP) {
                    *r = true;
                }
                let targets: &[UnitState] = match unit.stats.unit_kind {
                    UnitKind::Attacker => self.state.enemies(),
                    UnitKind::Supporter => self.state.allies(),
                };
                for (j, t) in targets.iter().enumerate() {
                    let is_self = unit.stats.unit_kind == UnitKind::Supporter && j == a;
                    if !is_self && t.alive() && unit.distance(t) <= unit.stats.shot_range {
                        row[COMMON_ACTIONS + j] = true;
                    }
                }
                row
            })
            .collect();
        AvailableActions { width, rows }
    }

    /// Local observation of `agent`: moving, ally, enemy and own features.
    /// Dead agents observe zeros.
    pub fn build_observation(&self, agent: usize) -> Vec<f64> {
        let mut obs = vec![0.0; self.obs_dim()];
        let me = &self.state.units[agent];
        if !me.alive() {
            return obs;
        }
        let sight = self.config.sight_range;
        let t = self.unit_types.len();
        for (k, action) in [ACTION_UP, ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT].into_iter().enumerate() {
            if self.move_target(me, action) != me.position {
                obs[k] = 1.0;
            }
        }
        let mut offset = 4;
        let others = self.state.allies().iter().enumerate().filter(|(j, _)| *j != agent).map(|(_, u)| u);
        for other in others.chain(self.state.enemies()) {
            let dist = me.distance(other);
            if other.alive() && dist <= sight {
                let f = &mut obs[offset..offset + 5 + t];
                f[0] = 1.0;
                f[1] = other.health_fraction();
                f[2 + self.type_index(other)] = 1.0;
                f[2 + t] = dist / sight;
                f[3 + t] = (other.position[0] - me.position[0]) / sight;
                f[4 + t] = (other.position[1] - me.position[1]) / sight;
            }
            offset += 5 + t;
        }
        obs[offset] = me.health_fraction();
        obs[offset + 1 + self.type_index(me)] = 1.0;
        obs
    }

    /// Global state: per ally (health, cooldown, x, y, type one-hot), then per
    /// enemy (health, x, y, type one-hot). Dead units are all zeros.
    pub fn build_state(&self) -> Vec<f64> {
        let t = self.unit_types.len();
        let size = self.config.map_size;
        let mut s = Vec::with_capacity(self.state_dim());
        for u in self.state.allies() {
            let mut block = vec![0.0; 4 + t];
            if u.alive() {
                block[0] = u.health_fraction();
                block[1] = (u.weapon_cooldown / u.stats.weapon_cooldown).clamp(0.0, 1.0);
                block[2] = u.position[0] / size;
                block[3] = u.position[1] / size;
                block[4 + self.type_index(u)] = 1.0;
            }
            s.extend(block);
        }
        for u in self.state.enemies() {
            let mut block = vec![0.0; 3 + t];
            if u.alive() {
                block[0] = u.health_fraction();
                block[1] = u.position[0] / size;
                block[2] = u.position[1] / size;
                block[3 + self.type_index(u)] = 1.0;
            }
            s.extend(block);
        }
        s
    }

    fn ally_intent(&self, agent: usize, action: usize) -> Intent {
        let unit = &self.state.units[agent];
        match action {
            ACTION_NULL | ACTION_STOP => Intent::Hold,
            ACTION_UP..=ACTION_RIGHT => Intent::Move(self.move_target(unit, action)),
            _ => {
                let j = action - COMMON_ACTIONS;
                match unit.stats.unit_kind {
                    UnitKind::Attacker => Intent::Attack(self.state.n_allies + j),
                    UnitKind::Supporter => Intent::Heal(j),
                }
            }
        }
    }

    fn nearest(&self, from: &UnitState, candidates: impl Iterator<Item = usize>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in candidates {
            let d = from.distance(&self.state.units[i]);
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Scripted enemy: attackers go for the nearest living ally, supporters
    /// heal the nearest damaged living enemy-side unit.
    fn enemy_intent(&self, idx: usize) -> Intent {
        let unit = &self.state.units[idx];
        let n_allies = self.state.n_allies;
        match unit.stats.unit_kind {
            UnitKind::Attacker => {
                let alive_allies = (0..n_allies).filter(|&i| self.state.units[i].alive());
                match self.nearest(unit, alive_allies) {
                    Some(t) => Intent::Attack(t),
                    None => Intent::Hold,
                }
            }
            UnitKind::Supporter => {
                let damaged = (n_allies..self.state.units.len()).filter(|&i| {
                    let u = &self.state.units[i];
                    i != idx && u.alive() && u.health_centi < u.max_health_centi
                });
                match self.nearest(unit, damaged) {
                    Some(t) => Intent::Heal(t),
                    None => Intent::Hold,
                }
            }
        }
    }

    fn approach(&self, unit: &UnitState, target: [f64; 2]) -> [f64; 2] {
        let step = self.config.move_amount * unit.stats.speed * self.config.step_duration;
        let (dx, dy) = (target[0] - unit.position[0], target[1] - unit.position[1]);
        let dist = dx.hypot(dy);
        if dist <= step || dist == 0.0 {
            return target;
        }
        let s = self.config.map_size;
        [(unit.position[0] + dx / dist * step).clamp(0.0, s), (unit.position[1] + dy / dist * step).clamp(0.0, s)]
    }

    /// Advances one step.
    ///
    /// Every action is checked against the current mask first; an illegal
    /// action is a contract violation and leaves the state untouched.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.state.terminated {
            return Err(GhqError::Contract("step called on a terminated episode".into()));
        }
        if actions.len() != self.n_agents() {
            return Err(GhqError::Contract(format!(
                "expected {} actions, got {}",
                self.n_agents(),
                actions.len()
            )));
        }
        let avail = self.available_actions();
        for (a, &act) in actions.iter().enumerate() {
            if !avail.is_available(a, act) {
                return Err(GhqError::Contract(format!("action {act} is not available to agent {a}")));
            }
        }

        let dt = self.config.step_duration;
        let n_units = self.state.units.len();
        for u in &mut self.state.units {
            u.weapon_cooldown = (u.weapon_cooldown - dt).max(0.0);
        }
        let intents: Vec<Intent> = (0..n_units)
            .map(|i| {
                if !self.state.units[i].alive() {
                    Intent::Hold
                } else if i < self.state.n_allies {
                    self.ally_intent(i, actions[i])
                } else {
                    self.enemy_intent(i)
                }
            })
            .collect();

        let mut damage = vec![0i64; n_units];
        let mut healing = vec![0i64; n_units];
        let mut fired = vec![false; n_units];
        let mut moves: Vec<Option<[f64; 2]>> = vec![None; n_units];
        for (i, intent) in intents.iter().enumerate() {
            let unit = &self.state.units[i];
            match *intent {
                Intent::Hold => {}
                Intent::Move(p) => moves[i] = Some(p),
                Intent::Attack(t) | Intent::Heal(t) => {
                    let target = &self.state.units[t];
                    if unit.distance(target) > unit.stats.shot_range {
                        // attack-move: close in on a target that is out of range
                        moves[i] = Some(self.approach(unit, target.position));
                    } else if matches!(intent, Intent::Heal(_)) {
                        healing[t] += unit.effect_centi(dt);
                    } else if unit.weapon_cooldown <= 0.0 {
                        damage[t] += unit.effect_centi(dt);
                        fired[i] = true;
                    }
                }
            }
        }

        let enemies_alive_before = self.state.enemies_alive();
        let mut raw_reward_centi = 0i64;
        let n_allies = self.state.n_allies;
        for (i, u) in self.state.units.iter_mut().enumerate() {
            if let Some(p) = moves[i] {
                u.position = p;
            }
            if fired[i] {
                u.weapon_cooldown = u.stats.weapon_cooldown;
            }
            if !u.alive() {
                continue;
            }
            let before = u.health_centi;
            u.health_centi = (u.health_centi - damage[i]).max(0);
            if u.alive() {
                u.health_centi = (u.health_centi + healing[i]).min(u.max_health_centi);
            }
            if i >= n_allies {
                raw_reward_centi += before - u.health_centi;
                if !u.alive() {
                    raw_reward_centi += (KILL_REWARD * CENTI) as i64;
                }
            }
        }

        let enemies_alive = self.state.enemies_alive();
        if enemies_alive == 0 && enemies_alive_before > 0 {
            raw_reward_centi += (WIN_REWARD * CENTI) as i64;
        }
        self.state.step += 1;
        self.state.won = enemies_alive == 0;
        self.state.terminated = self.state.won
            || self.state.allies_alive() == 0
            || self.state.step >= self.config.max_episode_steps;

        let reward = if self.config.normalize_reward {
            raw_reward_centi as f64 / self.max_reward_centi as f64
        } else {
            raw_reward_centi as f64 / CENTI
        };
        Ok(StepOutcome {
            reward,
            raw_reward_centi,
            terminated: self.state.terminated,
            won: self.state.won,
            observation: self.observe(),
        })
    }
}
