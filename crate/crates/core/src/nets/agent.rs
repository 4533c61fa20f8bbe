use rand::Rng;

use crate::autodiff::{gaussian_sample, GaussianDistribution, Graph, GruCell, Linear, ParamId, ParamSet, Tensor, Var};
use crate::error::{GhqError, Result};

pub const HIDDEN_DIM: usize = 64;
pub const LATENT_DIM: usize = 16;

/// Recurrent Q-network shared by every agent of one group.
///
/// Input is the observation followed by a one-hot of the previous action.
/// The GRU hidden state parameterises a Gaussian latent; a sample of that
/// latent passes through two ReLU layers and is joined with the hidden state
/// before the final Q head.
#[derive(Clone, Debug)]
pub struct AgentNetwork {
    pub group_id: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    fc1: Linear,
    gru: GruCell,
    latent_mean: Linear,
    latent_log_std: Linear,
    post1: Linear,
    post2: Linear,
    out: Linear,
}

/// Outputs for `rows` inputs. When produced by [`AgentNetwork::forward_seq`]
/// rows are time-major: row `t * batch + r`.
#[derive(Clone, Copy, Debug)]
pub struct AgentOutput {
    pub q: Var,
    pub hidden: Var,
    pub latent: GaussianDistribution,
    pub sample: Var,
}

#[derive(Clone, Debug)]
pub struct AgentSequence {
    pub steps: AgentOutput,
    pub final_hidden: Var,
}

impl AgentNetwork {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        group_id: usize,
        obs_dim: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = obs_dim + n_actions;
        Self {
            group_id,
            obs_dim,
            n_actions,
            fc1: Linear::new(params, &format!("{prefix}.fc1"), input, HIDDEN_DIM, rng),
            gru: GruCell::new(params, &format!("{prefix}.gru"), HIDDEN_DIM, HIDDEN_DIM, rng),
            latent_mean: Linear::new(params, &format!("{prefix}.latent_mean"), HIDDEN_DIM, LATENT_DIM, rng),
            latent_log_std: Linear::new(params, &format!("{prefix}.latent_log_std"), HIDDEN_DIM, LATENT_DIM, rng),
            post1: Linear::new(params, &format!("{prefix}.post1"), LATENT_DIM, HIDDEN_DIM, rng),
            post2: Linear::new(params, &format!("{prefix}.post2"), HIDDEN_DIM, HIDDEN_DIM, rng),
            out: Linear::new(params, &format!("{prefix}.out"), 2 * HIDDEN_DIM, n_actions, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    pub fn hidden_dim(&self) -> usize {
        HIDDEN_DIM
    }

    pub fn latent_dim(&self) -> usize {
        LATENT_DIM
    }

    /// Bias of the final Q layer. With every other parameter zero the Q
    /// values equal this bias, which makes hand-checked losses easy to set up.
    pub fn output_bias(&self) -> ParamId {
        self.out.bias
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in [&self.fc1, &self.latent_mean, &self.latent_log_std, &self.post1, &self.post2, &self.out] {
            ids.extend([l.weight, l.bias]);
        }
        let g = &self.gru;
        ids.extend([g.input_weight, g.input_bias, g.hidden_weight, g.hidden_bias]);
        ids.sort();
        ids
    }

    /// One step for a batch of agents.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        obs: Var,
        last_action: Var,
        hidden: Var,
        noise: Tensor,
    ) -> Result<AgentOutput> {
        if g.value(last_action).cols() != self.n_actions {
            return Err(GhqError::Config(format!(
                "last-action one-hot has {} entries, network has {} actions",
                g.value(last_action).cols(),
                self.n_actions
            )));
        }
        let x = g.concat_cols(&[obs, last_action]);
        let x = self.embed(g, params, x)?;
        let h = self.gru.forward(g, params, x, hidden)?;
        self.head(g, params, h, noise)
    }

    /// Unrolls over `inputs.len()` steps. `inputs[t]` holds one row per agent
    /// (observation and last-action one-hot already joined) and `noise` has
    /// one row per output row.
    pub fn forward_seq(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        inputs: &[Tensor],
        h0: Tensor,
        noise: Tensor,
    ) -> Result<AgentSequence> {
        let rows = h0.rows();
        if inputs.is_empty() {
            return Err(GhqError::Usage("forward_seq needs at least one step".into()));
        }
        let mut stacked = Vec::with_capacity(inputs.len() * rows * self.input_dim());
        for x in inputs {
            if x.rows() != rows || x.cols() != self.input_dim() {
                return Err(GhqError::Config(format!(
                    "agent input {:?}, expected [{rows}, {}]",
                    x.shape(),
                    self.input_dim()
                )));
            }
            stacked.extend_from_slice(x.data());
        }
        let x = g.constant(Tensor::matrix(inputs.len() * rows, self.input_dim(), stacked));
        let embedded = self.embed(g, params, x)?;
        let projected = self.gru.project_inputs(g, params, embedded)?;
        let mut h = g.constant(h0);
        let mut hiddens = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let gi = g.slice_rows(projected, t * rows, (t + 1) * rows);
            h = self.gru.step(g, params, gi, h)?;
            hiddens.push(h);
        }
        let all = g.concat_rows(&hiddens);
        let steps = self.head(g, params, all, noise)?;
        Ok(AgentSequence { steps, final_hidden: h })
    }

    fn embed(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let y = self.fc1.forward(g, params, x)?;
        Ok(g.relu(y))
    }

    fn head(&self, g: &mut Graph, params: &ParamSet, h: Var, noise: Tensor) -> Result<AgentOutput> {
        let mean = self.latent_mean.forward(g, params, h)?;
        let raw_log_std = self.latent_log_std.forward(g, params, h)?;
        let latent = GaussianDistribution::new(g, mean, raw_log_std)?;
        let sample = gaussian_sample(g, &latent, noise)?;
        let y = self.post1.forward(g, params, sample)?;
        let y = g.relu(y);
        let y = self.post2.forward(g, params, y)?;
        let y = g.relu(y);
        let joined = g.concat_cols(&[y, h]);
        let q = self.out.forward(g, params, joined)?;
        Ok(AgentOutput { q, hidden: h, latent, sample })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(params: &mut ParamSet, obs: usize, actions: usize) -> AgentNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        AgentNetwork::new(params, "agent", 0, obs, actions, &mut rng)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_parameters_give_equal_q_values() {
        let mut params = ParamSet::default();
        let n = net(&mut params, 5, 7);
        params.zero_all();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let obs = g.constant(random(2, 5, &mut rng));
        let last = g.constant(Tensor::zeros(&[2, 7]));
        let h = g.constant(random(2, HIDDEN_DIM, &mut rng));
        let out = n.forward(&mut g, &params, obs, last, h, random(2, LATENT_DIM, &mut rng)).unwrap();
        let q = g.value(out.q);
        assert_eq!(q.shape(), &[2, 7]);
        assert!(q.data().iter().all(|&x| x == q.data()[0]));
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let mut params = ParamSet::default();
        let n = net(&mut params, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs_row = random(1, 4, &mut rng);
        let h_row = random(1, HIDDEN_DIM, &mut rng);
        let noise_row = random(1, LATENT_DIM, &mut rng);
        let twice = |t: &Tensor| Tensor::matrix(2, t.cols(), [t.data(), t.data()].concat());
        let mut g = Graph::new();
        let obs = g.constant(twice(&obs_row));
        let mut last = Tensor::zeros(&[2, 6]);
        last.set(0, 2, 1.0);
        last.set(1, 2, 1.0);
        let last = g.constant(last);
        let h = g.constant(twice(&h_row));
        let out = n.forward(&mut g, &params, obs, last, h, twice(&noise_row)).unwrap();
        let q = g.value(out.q);
        assert_eq!(q.row_slice(0), q.row_slice(1));
        let hn = g.value(out.hidden);
        assert_eq!(hn.row_slice(0), hn.row_slice(1));
        assert!(hn.data().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn unrolled_matches_step_by_step() {
        let mut params = ParamSet::default();
        let n = net(&mut params, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (steps, rows) = (4, 3);
        let inputs: Vec<Tensor> = (0..steps).map(|_| random(rows, 11, &mut rng)).collect();
        let noise = random(steps * rows, LATENT_DIM, &mut rng);

        let mut g = Graph::new();
        let seq = n.forward_seq(&mut g, &params, &inputs, Tensor::zeros(&[rows, HIDDEN_DIM]), noise.clone()).unwrap();
        let unrolled = g.value(seq.steps.q).clone();

        let mut h = Tensor::zeros(&[rows, HIDDEN_DIM]);
        for (t, x) in inputs.iter().enumerate() {
            let mut g = Graph::new();
            let obs = x.data().chunks(11).flat_map(|r| r[..6].to_vec()).collect();
            let last = x.data().chunks(11).flat_map(|r| r[6..].to_vec()).collect();
            let obs = g.constant(Tensor::matrix(rows, 6, obs));
            let last = g.constant(Tensor::matrix(rows, 5, last));
            let hv = g.constant(h.clone());
            let step_noise = Tensor::matrix(rows, LATENT_DIM, noise.data()[t * rows * LATENT_DIM..(t + 1) * rows * LATENT_DIM].to_vec());
            let out = n.forward(&mut g, &params, obs, last, hv, step_noise).unwrap();
            let q = g.value(out.q);
            for r in 0..rows {
                for (a, b) in q.row_slice(r).iter().zip(unrolled.row_slice(t * rows + r)) {
                    assert!((a - b).abs() < 1e-12, "step {t} row {r}: {a} vs {b}");
                }
            }
            h = g.value(out.hidden).clone();
        }
        assert_eq!(g.value(seq.final_hidden).data(), h.data());
    }

    #[test]
    fn shape_errors_are_config_errors() {
        let mut params = ParamSet::default();
        let n = net(&mut params, 4, 6);
        let mut g = Graph::new();
        let obs = g.constant(Tensor::zeros(&[1, 4]));
        let last = g.constant(Tensor::zeros(&[1, 5]));
        let h = g.constant(Tensor::zeros(&[1, HIDDEN_DIM]));
        let err = n.forward(&mut g, &params, obs, last, h, Tensor::zeros(&[1, LATENT_DIM]));
        assert!(matches!(err, Err(GhqError::Config(_))));
        let err = n.forward_seq(&mut g, &params, &[Tensor::zeros(&[1, 3])], Tensor::zeros(&[1, HIDDEN_DIM]), Tensor::zeros(&[1, LATENT_DIM]));
        assert!(matches!(err, Err(GhqError::Config(_))));
    }

    #[test]
    fn param_ids_cover_the_network() {
        let mut params = ParamSet::default();
        let n = net(&mut params, 4, 6);
        assert_eq!(n.param_ids().len(), params.len());
    }
}
