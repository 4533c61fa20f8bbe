//! Replay buffer, losses, action selection and the training loop.

mod buffer;
mod config;
mod loss;
mod model;
mod rollout;
mod train;

pub use buffer::{EpisodeBatch, EpisodeData, ReplayBuffer};
pub use config::{AlgorithmVariant, TrainConfig};
pub use loss::{
    batch_inputs, forward_group, group_td_loss, igmi_loss, masked_mse, target_next_values, td_targets, total_loss,
    GroupForward, LossTerms,
};
pub use model::{select_actions, GroupModel, LatentNoise, MixerKind, Networks};
pub use rollout::{run_episode, EpisodeOutcome, Trajectory};
pub use train::{load_networks, run_training, CheckpointMeta, TrainOutcome, Trainer};
