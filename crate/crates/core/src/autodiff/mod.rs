//! Reverse-mode automatic differentiation and the building blocks the
//! networks need: dense and GRU layers, a clamped diagonal Gaussian layer,
//! Adam, and checkpoint serialisation.

mod adam;
mod checkpoint;
mod gaussian;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gaussian::{gaussian_kl, gaussian_kl_rows, gaussian_sample, GaussianDistribution, LOG_STD_MAX, LOG_STD_MIN};
pub use graph::{Gradients, Graph, Var};
pub use params::{GruCell, Linear, ParamId, ParamSet};
pub use tensor::Tensor;
