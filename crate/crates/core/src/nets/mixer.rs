use rand::Rng;

use crate::autodiff::{Graph, Linear, ParamId, ParamSet, Var};
use crate::error::{GhqError, Result};

pub const MIXING_EMBED_DIM: usize = 32;

/// State-conditioned monotonic mixer.
///
/// ```text
/// Q = |W2(s)| . elu(q |W1(s)| + b1(s)) + b2(s)
/// ```
///
/// `W1`, `b1` and `W2` are single linear hypernetworks; `b2` is a two-layer
/// ReLU network. Taking absolute values of the generated weights makes the
/// output non-decreasing in every input Q value.
#[derive(Clone, Debug)]
pub struct MixingNetwork {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    hyper_w1: Linear,
    hyper_b1: Linear,
    hyper_w2: Linear,
    hyper_b2_hidden: Linear,
    hyper_b2_out: Linear,
}

impl MixingNetwork {
    pub fn new(params: &mut ParamSet, prefix: &str, n_agents: usize, state_dim: usize, rng: &mut impl Rng) -> Self {
        let e = MIXING_EMBED_DIM;
        Self {
            n_agents,
            state_dim,
            embed_dim: e,
            hyper_w1: Linear::new(params, &format!("{prefix}.hyper_w1"), state_dim, n_agents * e, rng),
            hyper_b1: Linear::new(params, &format!("{prefix}.hyper_b1"), state_dim, e, rng),
            hyper_w2: Linear::new(params, &format!("{prefix}.hyper_w2"), state_dim, e, rng),
            hyper_b2_hidden: Linear::new(params, &format!("{prefix}.hyper_b2.0"), state_dim, e, rng),
            hyper_b2_out: Linear::new(params, &format!("{prefix}.hyper_b2.1"), e, 1, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_b2_hidden, &self.hyper_b2_out]
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect();
        ids.sort();
        ids
    }

    /// Linear hypernetworks producing the raw (signed) `W1` and `W2`.
    pub fn weight_hypernets(&self) -> [Linear; 2] {
        [self.hyper_w1, self.hyper_w2]
    }

    /// Mixes `q: [N, n_agents]` under `state: [N, state_dim]` into `[N, 1]`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, q: Var, state: Var) -> Result<Var> {
        let (qv, sv) = (g.value(q), g.value(state));
        if qv.cols() != self.n_agents || sv.cols() != self.state_dim || qv.rows() != sv.rows() {
            return Err(GhqError::Config(format!(
                "mixer over {} agents and {}-dim state got q {:?} and state {:?}",
                self.n_agents,
                self.state_dim,
                qv.shape(),
                sv.shape()
            )));
        }
        let w1 = self.hyper_w1.forward(g, params, state)?;
        let w1 = g.abs(w1);
        let b1 = self.hyper_b1.forward(g, params, state)?;
        let hidden = g.row_bmm(q, w1);
        let hidden = g.add(hidden, b1);
        let hidden = g.elu(hidden);
        let w2 = self.hyper_w2.forward(g, params, state)?;
        let w2 = g.abs(w2);
        let weighted = g.mul(hidden, w2);
        let y = g.sum_cols(weighted);
        let b2 = self.hyper_b2_hidden.forward(g, params, state)?;
        let b2 = g.relu(b2);
        let b2 = self.hyper_b2_out.forward(g, params, b2)?;
        Ok(g.add(y, b2))
    }
}
