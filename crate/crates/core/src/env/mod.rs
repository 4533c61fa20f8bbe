//! Heterogeneous micro-combat environment.
//!
//! Agents observe locally (sight-limited features), the mixer sees the global
//! state, and each agent's action space is six common actions followed by one
//! interactive action per target: enemies for attackers, allies for
//! supporters.

mod config;
mod sim;

pub use config::{
    builtin_map, builtin_map_names, standard_map, Formation, Layout, MapConfig, UnitKind, UnitSpawn, UnitStats,
    DEFAULT_MAX_EPISODE_STEPS, DEFAULT_SIGHT_RANGE, DESK_MAPS, HETEROGENEOUS_MAPS, KILL_REWARD, WIN_REWARD,
};
pub use sim::{
    ActionSpace, AvailableActions, Env, EnvState, Observation, Side, StepOutcome, UnitState, ACTION_DOWN,
    ACTION_LEFT, ACTION_NULL, ACTION_RIGHT, ACTION_STOP, ACTION_UP, COMMON_ACTIONS,
};
