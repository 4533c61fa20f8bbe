use std::collections::HashMap;

use crate::env::{MapConfig, UnitKind};
use crate::error::{GhqError, Result};

/// Fraction of allied units that are supporters.
pub fn compute_pos(config: &MapConfig) -> Result<f64> {
    if config.n_allies() == 0 {
        return Err(GhqError::Usage(format!("map '{}' has no allied units", config.name)));
    }
    Ok(config.count_allies(UnitKind::Supporter) as f64 / config.n_allies() as f64)
}

/// Weighted enemy attackers over weighted allied attackers.
///
/// `weights` maps a unit type name to its weight; missing names weigh 1.
pub fn compute_es(config: &MapConfig, weights: Option<&HashMap<String, f64>>) -> Result<f64> {
    let weight = |name: &str| weights.and_then(|w| w.get(name).copied()).unwrap_or(1.0);
    let weighted = |units: &[crate::env::UnitSpawn]| -> f64 {
        units.iter().filter(|u| u.stats.unit_kind == UnitKind::Attacker).map(|u| weight(&u.stats.name)).sum()
    };
    let allies = weighted(&config.ally_units);
    if allies <= 0.0 {
        return Err(GhqError::Usage(format!("map '{}' has no weighted allied attackers", config.name)));
    }
    Ok(weighted(&config.enemy_units) / allies)
}
