//! Agent, mixing and inference networks.

mod agent;
mod inference;
mod mixer;

pub use agent::{AgentNetwork, AgentOutput, AgentSequence, HIDDEN_DIM, LATENT_DIM};
pub use inference::InferenceNetwork;
pub use mixer::{MixingNetwork, MIXING_EMBED_DIM};
