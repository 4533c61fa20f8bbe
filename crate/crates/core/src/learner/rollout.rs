use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::env::Env;
use crate::error::Result;

use super::buffer::EpisodeData;
use super::model::{select_actions, LatentNoise, Networks};

/// Per-step record of the allied units, kept for heat-map analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Unit type name of each ally.
    pub unit_names: Vec<String>,
    /// Health fraction of each ally at steps `0..=len`; zero once dead.
    pub health: Vec<Vec<f64>>,
    /// Joint action at steps `0..len`.
    pub actions: Vec<Vec<usize>>,
    pub won: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub data: EpisodeData,
    pub trajectory: Trajectory,
    pub won: bool,
    /// Sum of the (possibly normalised) rewards.
    pub episode_return: f64,
    /// Un-normalised return in hundredths.
    pub raw_return_centi: i64,
}

/// Plays one episode with epsilon-greedy action selection.
pub fn run_episode(
    env: &mut Env,
    nets: &Networks,
    params: &ParamSet,
    epsilon: f64,
    noise: &mut LatentNoise<'_>,
    action_rng: &mut ChaCha8Rng,
    env_seed: u64,
) -> Result<EpisodeOutcome> {
    let mut obs = env.reset(env_seed);
    let n = env.n_agents();
    let mut data = EpisodeData::new(n, env.obs_dim(), env.state_dim(), env.padded_action_dim());
    let unit_names = env.config().ally_units.iter().map(|u| u.stats.name.clone()).collect();
    let health_now = |env: &Env| env.state().allies().iter().map(|u| u.health_fraction()).collect::<Vec<f64>>();
    let mut trajectory = Trajectory { unit_names, health: vec![health_now(env)], actions: Vec::new(), won: false };
    let mut hidden = nets.initial_hidden();
    let mut last: Option<Vec<usize>> = None;
    let (mut episode_return, mut raw_return_centi) = (0.0, 0i64);
    loop {
        data.push_observation(&obs.observations, &obs.state, &obs.available.rows);
        let (qs, next_hidden) = nets.step(params, &obs.observations, last.as_deref(), &hidden, noise)?;
        hidden = next_hidden;
        let mut actions = vec![0usize; n];
        for (group, q) in nets.groups.iter().zip(&qs) {
            let masks: Vec<&[bool]> = group.members.iter().map(|&m| obs.available.rows[m].as_slice()).collect();
            let chosen = select_actions(q, &masks, epsilon, action_rng)?;
            for (&m, a) in group.members.iter().zip(chosen) {
                actions[m] = a;
            }
        }
        let out = env.step(&actions)?;
        let state = env.state();
        // a time-limit cut is not a true terminal state, so it still bootstraps
        let terminal = out.terminated && (state.allies_alive() == 0 || state.enemies_alive() == 0);
        data.push_transition(&actions, out.reward, terminal);
        episode_return += out.reward;
        raw_return_centi += out.raw_reward_centi;
        trajectory.actions.push(actions.clone());
        trajectory.health.push(health_now(env));
        last = Some(actions);
        obs = out.observation;
        if out.terminated {
            data.push_observation(&obs.observations, &obs.state, &obs.available.rows);
            trajectory.won = out.won;
            return Ok(EpisodeOutcome { data, trajectory, won: out.won, episode_return, raw_return_centi });
        }
    }
}
