//! Grouped hybrid Q-learning (GHQ) for cooperative heterogeneous multi-agent
//! reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode differentiation engine over dense
//!   `f64` matrices, with the Gaussian layer, Adam and checkpoint I/O.
//! - [`env`]: a deterministic heterogeneous micro-combat simulator exposing
//!   SMAC-style observations, states, action masks and rewards.
//! - [`grouping`]: ideal-object grouping, the joint trajectory condition and
//!   the padded action layout used by shared-parameter baselines.
//! - [`nets`]: the agent, monotonic mixing and inference networks.
//! - [`learner`]: replay buffer, losses, action selection and the training loop.
//! - [`eval`]: win-rate evaluation, map difficulty metrics, Welch's t-test and
//!   heat-map accumulation.
//! - [`validate`]: the numerical self-check suite behind `ghq validate`.

pub mod autodiff;
pub mod env;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod learner;
pub mod nets;
pub mod validate;

pub use autodiff::{Graph, ParamId, ParamSet, Tensor, Var};
pub use env::{Env, MapConfig, UnitKind, UnitStats};
pub use eval::{compute_es, compute_pos, MetricsRecord};
pub use grouping::{group_by_ideal_object, padded_action_dim, validate_jtc, GroupAssignment};
pub use learner::{AlgorithmVariant, TrainConfig};

pub use error::{GhqError, Result};


