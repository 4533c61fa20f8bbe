//! Win-rate evaluation, map difficulty criteria, statistical comparison and
//! health/action heat-maps.

mod criteria;
mod heatmap;
mod metrics;
mod stats;

pub use criteria::{compute_es, compute_pos};
pub use heatmap::{accumulate_heatmaps, health_bin, HeatmapAccumulator, HEALTH_BINS};
pub use metrics::{eval_env_seed, evaluate_networks, evaluate_policy, evaluate_scripted, EvalSummary, MetricsRecord};
pub use stats::{mean_std, welch_t_test, welch_t_test_sampled};
