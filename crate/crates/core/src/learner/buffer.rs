use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{GhqError, Result};

/// One recorded episode of `len` transitions.
///
/// Observations, states and action masks have `len + 1` entries (the last one
/// is the state reached by the final transition); actions, rewards and
/// termination flags have `len`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeData {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub obs: Vec<f64>,
    pub states: Vec<f64>,
    pub avail: Vec<bool>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl EpisodeData {
    pub fn new(n_agents: usize, obs_dim: usize, state_dim: usize, n_actions: usize) -> Self {
        Self {
            n_agents,
            obs_dim,
            state_dim,
            n_actions,
            obs: Vec::new(),
            states: Vec::new(),
            avail: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Appends the observation part of a time step.
    pub fn push_observation(&mut self, obs: &[Vec<f64>], state: &[f64], avail: &[Vec<bool>]) {
        for o in obs {
            debug_assert_eq!(o.len(), self.obs_dim);
            self.obs.extend_from_slice(o);
        }
        self.states.extend_from_slice(state);
        for a in avail {
            debug_assert_eq!(a.len(), self.n_actions);
            self.avail.extend_from_slice(a);
        }
    }

    pub fn push_transition(&mut self, actions: &[usize], reward: f64, terminated: bool) {
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.terminated.push(terminated);
    }

    pub fn obs_at(&self, t: usize, agent: usize) -> &[f64] {
        let start = (t * self.n_agents + agent) * self.obs_dim;
        &self.obs[start..start + self.obs_dim]
    }

    pub fn state_at(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn avail_at(&self, t: usize, agent: usize) -> &[bool] {
        let start = (t * self.n_agents + agent) * self.n_actions;
        &self.avail[start..start + self.n_actions]
    }

    pub fn action_at(&self, t: usize, agent: usize) -> usize {
        self.actions[t * self.n_agents + agent]
    }

    /// Checks the internal lengths and that every stored action was legal.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let ok = self.obs.len() == (t + 1) * self.n_agents * self.obs_dim
            && self.states.len() == (t + 1) * self.state_dim
            && self.avail.len() == (t + 1) * self.n_agents * self.n_actions
            && self.actions.len() == t * self.n_agents
            && self.terminated.len() == t;
        if !ok {
            return Err(GhqError::Contract("episode arrays have inconsistent lengths".into()));
        }
        for step in 0..t {
            for a in 0..self.n_agents {
                if !self.avail_at(step, a)[self.action_at(step, a)] {
                    return Err(GhqError::Contract(format!("stored action at step {step} agent {a} was unavailable")));
                }
            }
        }
        Ok(())
    }
}

/// FIFO episode store with uniform sampling without replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeData>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, episodes: VecDeque::with_capacity(capacity), inserted: 0 }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions so far, including evicted episodes.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn insert(&mut self, episode: EpisodeData) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
    }

    pub fn can_sample(&self, batch_size: usize) -> bool {
        self.episodes.len() >= batch_size
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeData> {
        self.episodes.iter()
    }

    /// Indices (oldest first = 0) of `batch_size` distinct stored episodes.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if !self.can_sample(batch_size) || batch_size == 0 {
            return Err(GhqError::Usage(format!(
                "cannot sample {batch_size} episodes from a buffer holding {}",
                self.episodes.len()
            )));
        }
        Ok(index::sample(rng, self.episodes.len(), batch_size).into_vec())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<EpisodeBatch> {
        let idx = self.sample_indices(batch_size, rng)?;
        EpisodeBatch::from_episodes(&idx.iter().map(|&i| &self.episodes[i]).collect::<Vec<_>>())
    }
}

/// Episodes padded to a common length, stored time-major: entry `(t, b)`
/// sits at `t * batch + b`, and per-agent entries at
/// `(t * batch + b) * n_agents + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub batch: usize,
    /// Longest episode in the batch; the batch covers `max_len` transitions.
    pub max_len: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    /// `[(max_len + 1) * batch * n_agents, obs_dim]`
    pub obs: Vec<f64>,
    /// `[(max_len + 1) * batch, state_dim]`
    pub states: Vec<f64>,
    /// `[(max_len + 1) * batch * n_agents, n_actions]`
    pub avail: Vec<bool>,
    /// `[max_len * batch * n_agents]`, zero on padding
    pub actions: Vec<usize>,
    /// `[max_len * batch]`
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub filled: Vec<bool>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&EpisodeData]) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| GhqError::Usage("empty episode batch".into()))?;
        let (k, od, sd, na) = (first.n_agents, first.obs_dim, first.state_dim, first.n_actions);
        if episodes.iter().any(|e| (e.n_agents, e.obs_dim, e.state_dim, e.n_actions) != (k, od, sd, na)) {
            return Err(GhqError::Contract("episodes in a batch differ in layout".into()));
        }
        let b = episodes.len();
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        if t_max == 0 {
            return Err(GhqError::Usage("episode batch has no transitions".into()));
        }
        let mut out = Self {
            batch: b,
            max_len: t_max,
            n_agents: k,
            obs_dim: od,
            state_dim: sd,
            n_actions: na,
            obs: vec![0.0; (t_max + 1) * b * k * od],
            states: vec![0.0; (t_max + 1) * b * sd],
            avail: vec![false; (t_max + 1) * b * k * na],
            actions: vec![0; t_max * b * k],
            rewards: vec![0.0; t_max * b],
            terminated: vec![false; t_max * b],
            filled: vec![false; t_max * b],
        };
        for (bi, e) in episodes.iter().enumerate() {
            for t in 0..=e.len() {
                let row = t * b + bi;
                out.states[row * sd..(row + 1) * sd].copy_from_slice(e.state_at(t));
                for a in 0..k {
                    let r = row * k + a;
                    out.obs[r * od..(r + 1) * od].copy_from_slice(e.obs_at(t, a));
                    out.avail[r * na..(r + 1) * na].copy_from_slice(e.avail_at(t, a));
                }
            }
            for t in 0..e.len() {
                let row = t * b + bi;
                out.rewards[row] = e.rewards[t];
                out.terminated[row] = e.terminated[t];
                out.filled[row] = true;
                for a in 0..k {
                    out.actions[row * k + a] = e.action_at(t, a);
                }
            }
        }
        Ok(out)
    }

    pub fn n_filled(&self) -> usize {
        self.filled.iter().filter(|&&f| f).count()
    }

    /// Observation row of agent `k` in episode `b` at step `t`.
    pub fn obs_row(&self, t: usize, b: usize, k: usize) -> &[f64] {
        let r = (t * self.batch + b) * self.n_agents + k;
        &self.obs[r * self.obs_dim..(r + 1) * self.obs_dim]
    }

    pub fn avail_row(&self, t: usize, b: usize, k: usize) -> &[bool] {
        let r = (t * self.batch + b) * self.n_agents + k;
        &self.avail[r * self.n_actions..(r + 1) * self.n_actions]
    }

    pub fn action(&self, t: usize, b: usize, k: usize) -> usize {
        self.actions[(t * self.batch + b) * self.n_agents + k]
    }

    /// States for steps `from..from + self.max_len` as `[max_len * batch, state_dim]`.
    pub fn states_from(&self, from: usize) -> Tensor {
        let rows = self.max_len * self.batch;
        let start = from * self.batch * self.state_dim;
        Tensor::matrix(rows, self.state_dim, self.states[start..start + rows * self.state_dim].to_vec())
    }

    /// Filled mask as a `[max_len * batch, 1]` column of 0/1.
    pub fn filled_column(&self) -> Tensor {
        Tensor::matrix(self.filled.len(), 1, self.filled.iter().map(|&f| f64::from(u8::from(f))).collect())
    }
}
