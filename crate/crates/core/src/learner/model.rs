use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, ParamId, ParamSet, Tensor};
use crate::env::MapConfig;
use crate::error::{GhqError, Result};
use crate::grouping::{group_by_ideal_object, validate_jtc, GroupAssignment};
use crate::nets::{AgentNetwork, InferenceNetwork, MixingNetwork, HIDDEN_DIM, LATENT_DIM};

use super::config::AlgorithmVariant;

/// Where the latent noise of a forward pass comes from.
pub enum LatentNoise<'a> {
    /// Zero noise: the latent sample is the mean. Used for greedy evaluation.
    Mean,
    /// Fresh standard-normal draws.
    Sample(&'a mut ChaCha8Rng),
}

impl LatentNoise<'_> {
    pub fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            LatentNoise::Mean => Tensor::zeros(&[rows, cols]),
            LatentNoise::Sample(rng) => {
                Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
            }
        }
    }
}

/// How a group's per-agent Q values become the value its TD loss is taken on.
#[derive(Clone, Debug)]
pub enum MixerKind {
    Monotonic(MixingNetwork),
    Additive,
    /// No mixing: every agent has its own TD loss.
    Independent,
}

#[derive(Clone, Debug)]
pub struct GroupModel {
    pub members: Vec<usize>,
    pub agent: AgentNetwork,
    pub mixer: MixerKind,
    pub inference: Option<InferenceNetwork>,
    /// Every parameter this group owns, sorted.
    pub param_ids: Vec<ParamId>,
}

impl GroupModel {
    pub fn n_actions(&self) -> usize {
        self.agent.n_actions
    }
}

/// Network structure for one learner. Parameter values live in a separate
/// [`ParamSet`] so online and target copies share the same structure.
#[derive(Clone, Debug)]
pub struct Networks {
    pub variant: AlgorithmVariant,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// Width of the environment's action masks.
    pub mask_width: usize,
    pub groups: Vec<GroupModel>,
}

impl Networks {
    /// Builds the networks for `variant` on `map`, adding their parameters
    /// to `params`. Grouped variants use ideal-object groups; the others
    /// share one network over the padded action layout. The MI loss needs
    /// at least two groups, so on a single-group map no inference network is
    /// built.
    pub fn build(variant: AlgorithmVariant, map: &MapConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        let env = crate::env::Env::new(map.clone())?;
        let (n_agents, obs_dim, state_dim) = (env.n_agents(), env.obs_dim(), env.state_dim());
        let mask_width = env.padded_action_dim();
        let assignment = if variant.is_grouped() {
            group_by_ideal_object(map)
        } else {
            GroupAssignment::single_padded(map)
        };
        if !validate_jtc(&assignment, n_agents) {
            return Err(GhqError::Config("group assignment violates the joint trajectory condition".into()));
        }
        let with_mi = variant.uses_mi() && assignment.len() > 1;
        let mut groups = Vec::with_capacity(assignment.len());
        for (gi, group) in assignment.groups.iter().enumerate() {
            let start = params.len();
            let prefix = format!("g{gi}");
            let agent = AgentNetwork::new(params, &format!("{prefix}.agent"), gi, obs_dim, group.action_dim(), rng);
            let mixer = match variant {
                AlgorithmVariant::Ghq | AlgorithmVariant::GhqNoMi | AlgorithmVariant::Qmix => MixerKind::Monotonic(
                    MixingNetwork::new(params, &format!("{prefix}.mixer"), group.members.len(), state_dim, rng),
                ),
                AlgorithmVariant::Vdn => MixerKind::Additive,
                AlgorithmVariant::Iql => MixerKind::Independent,
            };
            let inference = with_mi.then(|| InferenceNetwork::new(params, &format!("{prefix}.inference"), gi, rng));
            let param_ids = params.ids().skip(start).collect();
            groups.push(GroupModel { members: group.members.clone(), agent, mixer, inference, param_ids });
        }
        Ok(Self { variant, n_agents, obs_dim, state_dim, mask_width, groups })
    }

    pub fn has_mi(&self) -> bool {
        self.groups.iter().any(|g| g.inference.is_some())
    }

    /// Zero hidden state for every group, one row per member.
    pub fn initial_hidden(&self) -> Vec<Tensor> {
        self.groups.iter().map(|g| Tensor::zeros(&[g.members.len(), HIDDEN_DIM])).collect()
    }

    /// Agent-network input rows for one group: observation followed by a
    /// one-hot of the previous action (all zeros when there is none).
    pub fn group_inputs(&self, group: usize, obs: &[Vec<f64>], last_actions: Option<&[usize]>) -> Tensor {
        let g = &self.groups[group];
        let width = self.obs_dim + g.n_actions();
        let mut data = Vec::with_capacity(g.members.len() * width);
        for &m in &g.members {
            data.extend_from_slice(&obs[m]);
            let mut onehot = vec![0.0; g.n_actions()];
            if let Some(last) = last_actions {
                onehot[last[m]] = 1.0;
            }
            data.extend_from_slice(&onehot);
        }
        Tensor::matrix(g.members.len(), width, data)
    }

    /// One forward step of every group. Returns per-group Q values
    /// `[members, n_actions]` and the next hidden states.
    pub fn step(
        &self,
        params: &ParamSet,
        obs: &[Vec<f64>],
        last_actions: Option<&[usize]>,
        hidden: &[Tensor],
        noise: &mut LatentNoise<'_>,
    ) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut qs = Vec::with_capacity(self.groups.len());
        let mut hs = Vec::with_capacity(self.groups.len());
        for (gi, group) in self.groups.iter().enumerate() {
            let rows = group.members.len();
            let x = self.group_inputs(gi, obs, last_actions);
            let eps = noise.draw(rows, LATENT_DIM);
            let mut g = Graph::new();
            let seq = group.agent.forward_seq(&mut g, params, &[x], hidden[gi].clone(), eps)?;
            qs.push(g.value(seq.steps.q).clone());
            hs.push(g.value(seq.final_hidden).clone());
        }
        Ok((qs, hs))
    }

    /// Parameter ids not owned by exactly one group: always empty for a
    /// correctly built model.
    pub fn unowned_params(&self, params: &ParamSet) -> Vec<ParamId> {
        params
            .ids()
            .filter(|id| self.groups.iter().filter(|g| g.param_ids.binary_search(id).is_ok()).count() != 1)
            .collect()
    }
}

/// Masked epsilon-greedy selection.
///
/// `q` has one row per agent; `avail[i]` is agent `i`'s mask, at least as
/// wide as the row. With probability `epsilon` an agent picks uniformly among
/// its available actions, otherwise the available action with the largest Q
/// value, ties going to the lowest id. One uniform draw is made per agent
/// whatever the branch, so the random stream does not depend on Q values.
pub fn select_actions(q: &Tensor, avail: &[&[bool]], epsilon: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let (rows, cols) = (q.rows(), q.cols());
    if avail.len() != rows {
        return Err(GhqError::Contract(format!("{} masks for {rows} agents", avail.len())));
    }
    let mut out = Vec::with_capacity(rows);
    for (i, mask) in avail.iter().enumerate() {
        if mask.len() < cols {
            return Err(GhqError::Contract(format!("agent {i}: mask narrower than its Q row")));
        }
        let legal: Vec<usize> = (0..cols).filter(|&j| mask[j]).collect();
        if legal.is_empty() {
            return Err(GhqError::Contract(format!("agent {i} has no available action")));
        }
        let explore = rng.random::<f64>() < epsilon;
        let pick = rng.random_range(0..legal.len());
        let action = if explore {
            legal[pick]
        } else {
            let row = q.row_slice(i);
            let mut best = legal[0];
            for &j in &legal[1..] {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        };
        out.push(action);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::builtin_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_masked_argmax_with_low_id_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Tensor::matrix(3, 4, vec![0.0, 3.0, 1.0, 2.0, 5.0, 1.0, 5.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let all = [true; 4];
        let no_best = [true, false, true, true];
        let masks: Vec<&[bool]> = vec![&no_best, &all, &all];
        assert_eq!(select_actions(&q, &masks, 0.0, &mut rng).unwrap(), vec![3, 0, 0]);
        let masks: Vec<&[bool]> = vec![&all, &all, &all];
        assert_eq!(select_actions(&q, &masks, 0.0, &mut rng).unwrap(), vec![1, 0, 0]);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let row: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mask: Vec<bool> = (0..7).map(|j| j == 0 || rng.random_bool(0.6)).collect();
            let c = rng.random_range(-100.0..100.0);
            let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
            let a = select_actions(&Tensor::row(row), &[&mask], 0.0, &mut rng).unwrap();
            let b = select_actions(&Tensor::row(shifted), &[&mask], 0.0, &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn all_masked_is_contract_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Tensor::row(vec![0.0; 3]);
        let mask = [false; 3];
        assert!(matches!(select_actions(&q, &[&mask], 0.5, &mut rng), Err(GhqError::Contract(_))));
    }

    #[test]
    fn full_exploration_is_uniform_over_available() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Tensor::row(vec![9.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mask = [true, false, true, true, false, true];
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_actions(&q, &[&mask], 1.0, &mut rng).unwrap()[0]] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0);
        let expected = draws as f64 / 4.0;
        let chi2: f64 = [0, 2, 3, 5].iter().map(|&j| (counts[j] as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, 0.999 quantile
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn grouped_and_shared_layouts() {
        let map = builtin_map("6m2m_15m").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::default();
        let nets = Networks::build(AlgorithmVariant::Ghq, &map, &mut params, &mut rng).unwrap();
        assert_eq!(nets.groups.len(), 2);
        assert_eq!(nets.groups[0].n_actions(), 21);
        assert_eq!(nets.groups[1].n_actions(), 14);
        assert!(nets.has_mi());
        assert!(nets.unowned_params(&params).is_empty());

        let mut params = ParamSet::default();
        let nets = Networks::build(AlgorithmVariant::Qmix, &map, &mut params, &mut rng).unwrap();
        assert_eq!(nets.groups.len(), 1);
        assert_eq!(nets.groups[0].n_actions(), 21);
        assert_eq!(nets.groups[0].members.len(), 8);
        assert!(!nets.has_mi());

        let homogeneous = builtin_map("3m").unwrap();
        let mut params = ParamSet::default();
        let nets = Networks::build(AlgorithmVariant::Ghq, &homogeneous, &mut params, &mut rng).unwrap();
        assert_eq!(nets.groups.len(), 1);
        assert!(!nets.has_mi());
    }

    #[test]
    fn step_shapes_follow_groups() {
        let map = builtin_map("3m1m_5m").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::default();
        let nets = Networks::build(AlgorithmVariant::Ghq, &map, &mut params, &mut rng).unwrap();
        let mut env = crate::env::Env::new(map).unwrap();
        let obs = env.reset(0);
        let (qs, hs) = nets.step(&params, &obs.observations, None, &nets.initial_hidden(), &mut LatentNoise::Mean).unwrap();
        assert_eq!(qs[0].shape(), &[3, 11]);
        assert_eq!(qs[1].shape(), &[1, 10]);
        assert_eq!(hs[1].shape(), &[1, HIDDEN_DIM]);
    }
}
