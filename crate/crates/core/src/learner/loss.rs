//! TD and mutual-information losses over an [`EpisodeBatch`].
//!
//! Rows of every per-agent tensor are ordered `(t, b, k)`: time-major, then
//! episode, then group member. Per-step tensors drop the member axis.

use crate::autodiff::{gaussian_kl_rows, Graph, ParamSet, Tensor, Var};
use crate::error::{GhqError, Result};
use crate::nets::{AgentSequence, LATENT_DIM};

use super::buffer::EpisodeBatch;
use super::config::TrainConfig;
use super::model::{GroupModel, LatentNoise, MixerKind, Networks};

/// Online forward pass of one group over the first `max_len` steps.
#[derive(Clone, Debug)]
pub struct GroupForward {
    pub online: AgentSequence,
    /// Q value of the stored action, `[T * B * n, 1]`.
    pub chosen: Var,
    pub n_members: usize,
}

/// Loss nodes of one training step.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub td: Vec<Var>,
    pub mi: Vec<Option<Var>>,
}

/// Agent-network input rows of `group` at step `t`: `[B * n, obs + actions]`.
pub fn batch_inputs(group: &GroupModel, batch: &EpisodeBatch, t: usize) -> Tensor {
    let n_actions = group.n_actions();
    let width = batch.obs_dim + n_actions;
    let mut data = Vec::with_capacity(batch.batch * group.members.len() * width);
    for b in 0..batch.batch {
        for &m in &group.members {
            data.extend_from_slice(batch.obs_row(t, b, m));
            let start = data.len();
            data.resize(start + n_actions, 0.0);
            if t > 0 {
                data[start + batch.action(t - 1, b, m)] = 1.0;
            }
        }
    }
    Tensor::matrix(batch.batch * group.members.len(), width, data)
}

fn unroll(
    g: &mut Graph,
    group: &GroupModel,
    params: &ParamSet,
    batch: &EpisodeBatch,
    steps: usize,
    noise: &mut LatentNoise<'_>,
) -> Result<AgentSequence> {
    let rows = batch.batch * group.members.len();
    let inputs: Vec<Tensor> = (0..steps).map(|t| batch_inputs(group, batch, t)).collect();
    let eps = noise.draw(steps * rows, LATENT_DIM);
    group.agent.forward_seq(g, params, &inputs, Tensor::zeros(&[rows, group.agent.hidden_dim()]), eps)
}

pub fn forward_group(
    g: &mut Graph,
    group: &GroupModel,
    params: &ParamSet,
    batch: &EpisodeBatch,
    noise: &mut LatentNoise<'_>,
) -> Result<GroupForward> {
    let online = unroll(g, group, params, batch, batch.max_len, noise)?;
    let idx: Vec<usize> = (0..batch.max_len)
        .flat_map(|t| (0..batch.batch).flat_map(move |b| group.members.iter().map(move |&m| (t, b, m))))
        .map(|(t, b, m)| batch.action(t, b, m))
        .collect();
    let chosen = g.gather_cols(online.steps.q, idx);
    Ok(GroupForward { online, chosen, n_members: group.members.len() })
}

/// Largest available Q per row, or 0 when nothing is available (padding).
fn masked_max(q: &[f64], mask: &[bool]) -> f64 {
    q.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))).unwrap_or(0.0)
}

/// Bootstrap values `max_a' Q_tgt` of the next step under the target
/// parameters: `[T * B, 1]` for mixed groups, `[T * B * n, 1]` for
/// independent ones.
pub fn target_next_values(
    group: &GroupModel,
    target_params: &ParamSet,
    batch: &EpisodeBatch,
    noise: &mut LatentNoise<'_>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let seq = unroll(&mut g, group, target_params, batch, batch.max_len + 1, noise)?;
    let q = g.value(seq.steps.q);
    let n = group.members.len();
    let (tb, a) = (batch.max_len * batch.batch, group.n_actions());
    let mut maxes = Vec::with_capacity(tb * n);
    for t in 1..=batch.max_len {
        for b in 0..batch.batch {
            for (k, &m) in group.members.iter().enumerate() {
                let row = (t * batch.batch + b) * n + k;
                maxes.push(masked_max(q.row_slice(row), &batch.avail_row(t, b, m)[..a]));
            }
        }
    }
    match &group.mixer {
        MixerKind::Monotonic(mixer) => {
            let qv = g.constant(Tensor::matrix(tb, n, maxes));
            let s = g.constant(batch.states_from(1));
            let y = mixer.forward(&mut g, target_params, qv, s)?;
            Ok(g.value(y).clone())
        }
        MixerKind::Additive => Ok(Tensor::matrix(tb, 1, maxes.chunks(n).map(|r| r.iter().sum()).collect())),
        MixerKind::Independent => Ok(Tensor::matrix(tb * n, 1, maxes)),
    }
}

/// `y = r + gamma * (1 - terminated) * next`, with `next` holding
/// `repeat` consecutive rows per step.
pub fn td_targets(rewards: &[f64], terminated: &[bool], next: &[f64], gamma: f64, repeat: usize) -> Vec<f64> {
    next.iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = i / repeat;
            rewards[s] + if terminated[s] { 0.0 } else { gamma * v }
        })
        .collect()
}

/// Squared error over rows whose mask is 1, divided by the mask total.
pub fn masked_mse(g: &mut Graph, pred: Var, target: Tensor, mask: Tensor) -> Result<Var> {
    let count = mask.sum();
    if count <= 0.0 {
        return Err(GhqError::Usage("loss over an empty mask".into()));
    }
    let y = g.constant(target);
    let m = g.constant(mask);
    let diff = g.sub(pred, y);
    let masked = g.mul(diff, m);
    let sq = g.square(masked);
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / count))
}

fn repeat_rows(t: &Tensor, n: usize) -> Tensor {
    Tensor::matrix(t.rows() * n, 1, t.data().iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect())
}

/// TD loss of one group against the shared team reward.
pub fn group_td_loss(
    g: &mut Graph,
    group: &GroupModel,
    fwd: &GroupForward,
    params: &ParamSet,
    batch: &EpisodeBatch,
    target_next: &Tensor,
    gamma: f64,
) -> Result<Var> {
    let tb = batch.max_len * batch.batch;
    let n = fwd.n_members;
    let filled = batch.filled_column();
    let (pred, repeat) = match &group.mixer {
        MixerKind::Monotonic(mixer) => {
            let q = g.reshape(fwd.chosen, tb, n);
            let s = g.constant(batch.states_from(0));
            (mixer.forward(g, params, q, s)?, 1)
        }
        MixerKind::Additive => {
            let q = g.reshape(fwd.chosen, tb, n);
            (g.sum_cols(q), 1)
        }
        MixerKind::Independent => (fwd.chosen, n),
    };
    if g.value(pred).rows() != target_next.rows() {
        return Err(GhqError::Contract("TD prediction and target disagree in length".into()));
    }
    let y = td_targets(&batch.rewards, &batch.terminated, target_next.data(), gamma, repeat);
    let mask = if repeat == 1 { filled } else { repeat_rows(&filled, repeat) };
    masked_mse(g, pred, Tensor::matrix(y.len(), 1, y), mask)
}

/// `KL(p(l_m) || q_m(l_m | l_n, h_m))` averaged over filled steps and over
/// every partner group `n`. Group-level latents and hiddens are the mean over
/// members, and partner latents are detached.
pub fn igmi_loss(
    g: &mut Graph,
    group: &GroupModel,
    own: &GroupForward,
    partners: &[&GroupForward],
    params: &ParamSet,
    batch: &EpisodeBatch,
) -> Result<Var> {
    let inference = group
        .inference
        .as_ref()
        .ok_or_else(|| GhqError::Usage("group has no inference network".into()))?;
    if partners.is_empty() {
        return Err(GhqError::Usage("MI loss needs at least one other group".into()));
    }
    let p = own.online.steps.latent.mean_over_rows(g, own.n_members);
    let h = g.mean_row_groups(own.online.steps.hidden, own.n_members);
    let mask = batch.filled_column();
    let count = mask.sum();
    let m = g.constant(mask);
    let mut terms = Vec::with_capacity(partners.len());
    for other in partners {
        let l = g.mean_row_groups(other.online.steps.sample, other.n_members);
        let l = g.detach(l);
        let q = inference.forward(g, params, l, h)?;
        let kl = gaussian_kl_rows(g, &p, &q)?;
        let kl = g.mul(kl, m);
        terms.push(g.sum_all(kl));
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = g.add(sum, t);
    }
    Ok(g.scale(sum, 1.0 / (count * partners.len() as f64)))
}

/// `lambda_td * sum_m L_TD(m) + lambda_mi * sum_m L_MI(m)`.
pub fn total_loss(
    g: &mut Graph,
    nets: &Networks,
    params: &ParamSet,
    target_params: &ParamSet,
    batch: &EpisodeBatch,
    config: &TrainConfig,
    noise: &mut LatentNoise<'_>,
) -> Result<LossTerms> {
    if batch.n_filled() == 0 {
        return Err(GhqError::Usage("empty batch".into()));
    }
    let mut forwards = Vec::with_capacity(nets.groups.len());
    for group in &nets.groups {
        forwards.push(forward_group(g, group, params, batch, noise)?);
    }
    let mut td = Vec::with_capacity(nets.groups.len());
    for (group, fwd) in nets.groups.iter().zip(&forwards) {
        let next = target_next_values(group, target_params, batch, noise)?;
        td.push(group_td_loss(g, group, fwd, params, batch, &next, config.gamma)?);
    }
    let mut mi = Vec::with_capacity(nets.groups.len());
    for (i, group) in nets.groups.iter().enumerate() {
        if group.inference.is_some() && config.lambda_mi > 0.0 {
            let partners: Vec<&GroupForward> = forwards.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f).collect();
            mi.push(Some(igmi_loss(g, group, &forwards[i], &partners, params, batch)?));
        } else {
            mi.push(None);
        }
    }
    let mut parts = Vec::new();
    for &t in &td {
        parts.push(g.scale(t, config.lambda_td));
    }
    for t in mi.iter().flatten() {
        parts.push(g.scale(*t, config.lambda_mi));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p);
    }
    Ok(LossTerms { total, td, mi })
}
