use rand::Rng;

use crate::autodiff::{GaussianDistribution, Graph, Linear, ParamId, ParamSet, Var};
use crate::error::Result;

use super::agent::{HIDDEN_DIM, LATENT_DIM};

/// Variational posterior over a group's latent given another group's latent
/// and the group's own hidden state.
#[derive(Clone, Debug)]
pub struct InferenceNetwork {
    pub group_id: usize,
    fc: Linear,
    mean: Linear,
    log_std: Linear,
}

impl InferenceNetwork {
    pub fn new(params: &mut ParamSet, prefix: &str, group_id: usize, rng: &mut impl Rng) -> Self {
        Self {
            group_id,
            fc: Linear::new(params, &format!("{prefix}.fc"), LATENT_DIM + HIDDEN_DIM, HIDDEN_DIM, rng),
            mean: Linear::new(params, &format!("{prefix}.mean"), HIDDEN_DIM, LATENT_DIM, rng),
            log_std: Linear::new(params, &format!("{prefix}.log_std"), HIDDEN_DIM, LATENT_DIM, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = [&self.fc, &self.mean, &self.log_std].iter().flat_map(|l| [l.weight, l.bias]).collect();
        ids.sort();
        ids
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        other_latent: Var,
        own_hidden: Var,
    ) -> Result<GaussianDistribution> {
        let x = g.concat_cols(&[other_latent, own_hidden]);
        let y = self.fc.forward(g, params, x)?;
        let y = g.relu(y);
        let mean = self.mean.forward(g, params, y)?;
        let log_std = self.log_std.forward(g, params, y)?;
        GaussianDistribution::new(g, mean, log_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gaussian_kl, Tensor};
    use crate::nets::AgentNetwork;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_standard_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::default();
        let net = InferenceNetwork::new(&mut params, "inf", 0, &mut rng);
        params.zero_all();
        let mut g = Graph::new();
        let l = g.constant(Tensor::full(&[3, LATENT_DIM], 0.7));
        let h = g.constant(Tensor::full(&[3, HIDDEN_DIM], -0.2));
        let d = net.forward(&mut g, &params, l, h).unwrap();
        assert!(g.value(d.mean).data().iter().all(|&x| x == 0.0));
        assert!(g.value(d.log_std).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_given_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::default();
        let net = InferenceNetwork::new(&mut params, "inf", 0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let l = g.constant(Tensor::full(&[2, LATENT_DIM], 0.3));
            let h = g.constant(Tensor::full(&[2, HIDDEN_DIM], 0.1));
            let d = net.forward(&mut g, &params, l, h).unwrap();
            (g.value(d.mean).clone(), g.value(d.log_std).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradients_reach_own_networks_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::default();
        let own = AgentNetwork::new(&mut params, "g0.agent", 0, 5, 7, &mut rng);
        let other = AgentNetwork::new(&mut params, "g1.agent", 1, 5, 8, &mut rng);
        let inference = InferenceNetwork::new(&mut params, "g0.inference", 0, &mut rng);

        let mut g = Graph::new();
        let step = |g: &mut Graph, net: &AgentNetwork, rng: &mut ChaCha8Rng| {
            let x: Vec<f64> = (0..2 * net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let noise: Vec<f64> = (0..2 * LATENT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            net.forward_seq(g, &params, &[Tensor::matrix(2, net.input_dim(), x)], Tensor::zeros(&[2, HIDDEN_DIM]), Tensor::matrix(2, LATENT_DIM, noise))
                .unwrap()
        };
        let mine = step(&mut g, &own, &mut rng);
        let theirs = step(&mut g, &other, &mut rng);
        let other_latent = g.detach(theirs.steps.sample);
        let q = inference.forward(&mut g, &params, other_latent, mine.steps.hidden).unwrap();
        let loss = gaussian_kl(&mut g, &mine.steps.latent, &q).unwrap();
        let grads = g.backward(loss).unwrap();

        let touched = grads.touched();
        assert!(inference.param_ids().iter().all(|id| touched.contains(id)));
        assert!(own.param_ids().iter().any(|id| touched.contains(id)));
        assert!(other.param_ids().iter().all(|id| !touched.contains(id)));
    }
}
