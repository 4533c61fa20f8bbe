use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Checkpoint, Graph, ParamSet, Tensor};
use crate::env::{Env, MapConfig};
use crate::error::{GhqError, Result};
use crate::eval::{evaluate_networks, EvalSummary, MetricsRecord};

use super::buffer::ReplayBuffer;
use super::config::{AlgorithmVariant, TrainConfig};
use super::loss::total_loss;
use super::model::{LatentNoise, Networks};
use super::rollout::run_episode;

/// Metadata stored alongside checkpoint parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: AlgorithmVariant,
    pub seed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub map: MapConfig,
}

/// Independent random streams of one run, all derived from the run seed.
struct Streams {
    actions: ChaCha8Rng,
    noise: ChaCha8Rng,
    sampling: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self { actions: stream(1), noise: stream(2), sampling: stream(3) }
    }
}

#[derive(Clone, Debug, Default)]
struct LossMeans {
    td: Vec<f64>,
    mi: Vec<f64>,
    updates: usize,
}

impl LossMeans {
    fn take(&mut self, n_groups: usize, has_mi: &[bool]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        let n = self.updates;
        let td = (0..n_groups).map(|i| (n > 0).then(|| self.td[i] / n as f64)).collect();
        let mi = (0..n_groups).map(|i| (n > 0 && has_mi[i]).then(|| self.mi[i] / n as f64)).collect();
        *self = Self { td: vec![0.0; n_groups], mi: vec![0.0; n_groups], updates: 0 };
        (td, mi)
    }
}

/// Episode-level training loop: roll out one episode, store it, and once
/// the buffer holds a full batch run one update per collected episode.
pub struct Trainer {
    pub config: TrainConfig,
    pub map: MapConfig,
    pub seed: u64,
    pub nets: Networks,
    pub params: ParamSet,
    pub target_params: ParamSet,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
    /// Episode counts at which the target networks were refreshed.
    pub target_updates: Vec<u64>,
    env: Env,
    streams: Streams,
    losses: LossMeans,
    next_eval: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, mut map: MapConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if let Some(cap) = config.max_episode_steps {
            map.max_episode_steps = cap;
        }
        map.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let nets = Networks::build(config.variant, &map, &mut params, &mut init_rng)?;
        let adam = AdamState::new(&params, config.lr);
        let n_groups = nets.groups.len();
        Ok(Self {
            target_params: params.clone(),
            adam,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            env: Env::new(map.clone())?,
            streams: Streams::new(seed),
            losses: LossMeans { td: vec![0.0; n_groups], mi: vec![0.0; n_groups], updates: 0 },
            next_eval: 0,
            env_steps: 0,
            episodes: 0,
            updates: 0,
            target_updates: vec![0],
            config,
            map,
            seed,
            nets,
            params,
        })
    }

    fn train_env_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.episodes)
    }

    /// Collects one episode and, when possible, performs one update.
    pub fn train_episode(&mut self) -> Result<()> {
        let epsilon = self.config.epsilon_at(self.env_steps);
        let env_seed = self.train_env_seed();
        let out = run_episode(
            &mut self.env,
            &self.nets,
            &self.params,
            epsilon,
            &mut LatentNoise::Sample(&mut self.streams.noise),
            &mut self.streams.actions,
            env_seed,
        )?;
        self.env_steps += out.data.len() as u64;
        self.buffer.insert(out.data);
        self.episodes += 1;
        if self.buffer.can_sample(self.config.batch_size) {
            self.update()?;
        }
        if self.episodes.is_multiple_of(self.config.target_update_interval) {
            self.target_params.copy_from(&self.params)?;
            self.target_updates.push(self.episodes);
        }
        Ok(())
    }

    fn update(&mut self) -> Result<()> {
        let mut batch = self.buffer.sample(self.config.batch_size, &mut self.streams.sampling)?;
        if self.config.reward_scale != 1.0 {
            batch.rewards.iter_mut().for_each(|r| *r *= self.config.reward_scale);
        }
        let mut g = Graph::new();
        let terms = total_loss(
            &mut g,
            &self.nets,
            &self.params,
            &self.target_params,
            &batch,
            &self.config,
            &mut LatentNoise::Sample(&mut self.streams.noise),
        )?;
        let mut grads = g.backward(terms.total)?;
        for group in &self.nets.groups {
            grads.clip_subset_norm(&group.param_ids, self.config.grad_clip);
        }
        self.adam.learning_rate = self.config.lr_at(self.episodes);
        self.adam.step(&mut self.params, &grads)?;
        for (i, &td) in terms.td.iter().enumerate() {
            self.losses.td[i] += g.value(td).data()[0];
        }
        for (i, mi) in terms.mi.iter().enumerate() {
            if let Some(mi) = mi {
                self.losses.mi[i] += g.value(*mi).data()[0];
            }
        }
        self.losses.updates += 1;
        self.updates += 1;
        Ok(())
    }

    pub fn evaluate(&self, n_episodes: usize) -> Result<EvalSummary> {
        evaluate_networks(&self.nets, &self.params, &self.map, n_episodes, self.seed)
    }

    fn record(&mut self) -> Result<MetricsRecord> {
        let summary = self.evaluate(self.config.eval_episodes)?;
        let has_mi: Vec<bool> = self.nets.groups.iter().map(|g| g.inference.is_some()).collect();
        let (td_loss, mi_loss) = self.losses.take(self.nets.groups.len(), &has_mi);
        Ok(MetricsRecord {
            env_step: self.env_steps,
            episode: self.episodes,
            seed: self.seed,
            win_rate: summary.win_rate,
            test_episodes: summary.episodes,
            mean_return: summary.mean_return,
            td_loss,
            mi_loss,
            epsilon: self.config.epsilon_at(self.env_steps),
            lr: self.config.lr_at(self.episodes),
        })
    }

    /// Trains until `total_steps` environment steps, evaluating every
    /// `eval_interval` steps (starting at step 0) and once more at the end.
    pub fn run(&mut self, mut on_record: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        while self.env_steps < self.config.total_steps {
            if self.env_steps >= self.next_eval {
                let r = self.record()?;
                on_record(&r)?;
                records.push(r);
                while self.next_eval <= self.env_steps {
                    self.next_eval += self.config.eval_interval;
                }
            }
            self.train_episode()?;
        }
        let r = self.record()?;
        on_record(&r)?;
        records.push(r);
        Ok(records)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            variant: self.config.variant,
            seed: self.seed,
            env_steps: self.env_steps,
            episodes: self.episodes,
            map: self.map.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let metadata = serde_json::to_string(&self.meta()).expect("checkpoint metadata always serialises");
        Checkpoint {
            metadata,
            records: self.params.records().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }
}

/// Output of [`run_training`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
    pub target_updates: Vec<u64>,
    pub env_steps: u64,
    pub episodes: u64,
}

pub fn run_training(
    config: TrainConfig,
    map: MapConfig,
    seed: u64,
    on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, map, seed)?;
    let records = trainer.run(on_record)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        records,
        target_updates: trainer.target_updates.clone(),
        env_steps: trainer.env_steps,
        episodes: trainer.episodes,
    })
}

/// Rebuilds the networks described by a checkpoint and loads its values.
///
/// With `map` given, the map must yield exactly the checkpoint's parameter
/// layout; otherwise the map stored in the metadata is used.
pub fn load_networks(checkpoint: &Checkpoint, map: Option<&MapConfig>) -> Result<(Networks, ParamSet, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&checkpoint.metadata)
        .map_err(|e| GhqError::Format(format!("checkpoint metadata: {e}")))?;
    let map = map.unwrap_or(&meta.map);
    let mut params = ParamSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nets = Networks::build(meta.variant, map, &mut params, &mut rng)?;
    let mut loaded = ParamSet::default();
    for (name, t) in &checkpoint.records {
        loaded.add(name.clone(), Tensor::clone(t));
    }
    params
        .copy_from(&loaded)
        .map_err(|e| GhqError::Config(format!("checkpoint does not fit map '{}': {e}", map.name)))?;
    Ok((nets, params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::builtin_map;

    fn tiny(variant: AlgorithmVariant) -> TrainConfig {
        TrainConfig {
            variant,
            total_steps: 600,
            batch_size: 4,
            buffer_capacity: 16,
            target_update_interval: 5,
            eval_interval: 200,
            eval_episodes: 2,
            max_episode_steps: Some(20),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn targets_refresh_on_interval_multiples() {
        let mut t = Trainer::new(tiny(AlgorithmVariant::Ghq), builtin_map("3m1m_5m").unwrap(), 0).unwrap();
        t.run(|_| Ok(())).unwrap();
        let expected: Vec<u64> = (0..=t.episodes / 5).map(|k| k * 5).collect();
        assert_eq!(t.target_updates, expected);
        assert_eq!(t.updates, t.episodes - 3);
    }

    #[test]
    fn target_copy_is_independent_of_later_updates() {
        let mut t = Trainer::new(tiny(AlgorithmVariant::Qmix), builtin_map("3m1m_5m").unwrap(), 1).unwrap();
        for _ in 0..5 {
            t.train_episode().unwrap();
        }
        assert_eq!(t.target_params.records().collect::<Vec<_>>(), t.params.records().collect::<Vec<_>>());
        let snapshot = t.target_params.clone();
        t.train_episode().unwrap();
        assert_eq!(t.target_params.records().collect::<Vec<_>>(), snapshot.records().collect::<Vec<_>>());
        assert_ne!(t.params.records().collect::<Vec<_>>(), snapshot.records().collect::<Vec<_>>());
    }

    #[test]
    fn eval_records_follow_the_cadence() {
        let out = run_training(tiny(AlgorithmVariant::Vdn), builtin_map("3m1m_5m").unwrap(), 2, |_| Ok(())).unwrap();
        assert_eq!(out.records[0].env_step, 0);
        for w in out.records.windows(2) {
            assert!(w[1].env_step > w[0].env_step);
        }
        assert_eq!(out.records.last().unwrap().env_step, out.env_steps);
        assert!(out.records.iter().all(|r| (0.0..=1.0).contains(&r.win_rate) && r.test_episodes == 2));
        assert!(out.records[0].td_loss.iter().all(Option::is_none));
        assert!(out.records.last().unwrap().td_loss.iter().all(Option::is_some));
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let run = || {
            let mut log = String::new();
            run_training(tiny(AlgorithmVariant::Ghq), builtin_map("3m1m_5m").unwrap(), 7, |r| {
                log.push_str(&r.to_json_line());
                Ok(())
            })
            .unwrap();
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_restores_networks() {
        let mut t = Trainer::new(tiny(AlgorithmVariant::Ghq), builtin_map("3m1m_5m").unwrap(), 3).unwrap();
        for _ in 0..6 {
            t.train_episode().unwrap();
        }
        let mut bytes = Vec::new();
        t.checkpoint().write_to(&mut bytes).unwrap();
        let ckpt = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        let (nets, params, meta) = load_networks(&ckpt, None).unwrap();
        assert_eq!(meta, t.meta());
        assert_eq!(nets.groups.len(), t.nets.groups.len());
        assert_eq!(params.records().collect::<Vec<_>>(), t.params.records().collect::<Vec<_>>());
        let a = t.evaluate(3).unwrap();
        let b = evaluate_networks(&nets, &params, &meta.map, 3, t.seed).unwrap();
        assert_eq!((a.wins, a.mean_return), (b.wins, b.mean_return));
    }

    #[test]
    fn checkpoint_on_wrong_map_is_a_config_error() {
        let t = Trainer::new(tiny(AlgorithmVariant::Ghq), builtin_map("3m1m_5m").unwrap(), 3).unwrap();
        let err = load_networks(&t.checkpoint(), Some(&builtin_map("6m2m_15m").unwrap())).unwrap_err();
        assert!(matches!(err, GhqError::Config(_)));
    }
}
