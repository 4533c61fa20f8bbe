//! Numerical self-checks run by `ghq validate`: finite-difference gradient
//! checks for every layer, mixer monotonicity probes, a brute-force check
//! that per-agent greedy actions maximise a grouped monotone joint value,
//! and the closed-form KL against Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{gaussian_kl, gaussian_sample, GaussianDistribution, Graph, GruCell, Linear, ParamSet, Tensor, Var};
use crate::env::{builtin_map, builtin_map_names, Env, MapConfig};
use crate::error::Result;
use crate::learner::{select_actions, AlgorithmVariant, MixerKind, Networks};
use crate::nets::MixingNetwork;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const KL_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Human-readable pass condition.
    pub tolerance: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest observed error (or violation) over all instances.
    pub worst: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub gradient_instances: usize,
    pub monotonicity_draws: usize,
    pub gigm_instances: usize,
    pub kl_pairs: usize,
    pub kl_samples: usize,
    /// Negate the first analytic gradient of every gradient check. A working
    /// suite must then fail.
    pub flip_gradient_sign: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_instances: 20,
            monotonicity_draws: 100,
            gigm_instances: 200,
            kl_pairs: 50,
            kl_samples: 100_000,
            flip_gradient_sign: false,
        }
    }
}

pub fn run_all(opts: &ValidateOptions) -> Result<Vec<CheckResult>> {
    let mut out = gradient_checks(opts)?;
    out.push(monotonicity_check(&preset_maps(), opts.monotonicity_draws, opts.seed)?);
    out.push(gigm_check(opts.gigm_instances, opts.seed)?);
    out.push(kl_monte_carlo_check(opts.kl_pairs, opts.kl_samples, opts.seed)?);
    Ok(out)
}

/// Every registered map.
pub fn preset_maps() -> Vec<MapConfig> {
    builtin_map_names().iter().filter_map(|n| builtin_map(n)).collect()
}

type LossFn = Box<dyn Fn(&mut Graph, &ParamSet) -> Result<Var>>;

/// A random scalar function of a parameter set.
struct Instance {
    params: ParamSet,
    loss: LossFn,
}

fn random_tensor(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// `sum(weights * out)` with fixed random weights, so every output element
/// contributes with its own sensitivity.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w);
    g.sum_all(p)
}

fn linear_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, i, o) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
    let mut params = ParamSet::default();
    let x = params.add("x", random_tensor(n, i, -1.0, 1.0, rng));
    let layer = Linear::new(&mut params, "linear", i, o, rng);
    let w = random_tensor(n, o, -1.0, 1.0, rng);
    Instance {
        params,
        loss: Box::new(move |g, p| {
            let xv = g.param(p, x);
            let y = layer.forward(g, p, xv)?;
            Ok(weighted_sum(g, y, &w))
        }),
    }
}

fn gru_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, i, h) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
    let mut params = ParamSet::default();
    let x = params.add("x", random_tensor(n, i, -1.0, 1.0, rng));
    let h0 = params.add("h", random_tensor(n, h, -1.0, 1.0, rng));
    let cell = GruCell::new(&mut params, "gru", i, h, rng);
    let w = random_tensor(n, h, -1.0, 1.0, rng);
    Instance {
        params,
        loss: Box::new(move |g, p| {
            let (xv, hv) = (g.param(p, x), g.param(p, h0));
            let y = cell.forward(g, p, xv, hv)?;
            Ok(weighted_sum(g, y, &w))
        }),
    }
}

fn gaussian_sample_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, d) = (rng.random_range(1..4), rng.random_range(1..6));
    let mut params = ParamSet::default();
    let mean = params.add("mean", random_tensor(n, d, -2.0, 2.0, rng));
    // inside the clamp range, where log_std is differentiable
    let log_std = params.add("log_std", random_tensor(n, d, -4.0, 1.5, rng));
    let noise = Tensor::matrix(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect());
    let w = random_tensor(n, d, -1.0, 1.0, rng);
    Instance {
        params,
        loss: Box::new(move |g, p| {
            let (m, s) = (g.param(p, mean), g.param(p, log_std));
            let dist = GaussianDistribution::new(g, m, s)?;
            let y = gaussian_sample(g, &dist, noise.clone())?;
            Ok(weighted_sum(g, y, &w))
        }),
    }
}

fn kl_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (n, d) = (rng.random_range(1..4), rng.random_range(1..6));
    let mut params = ParamSet::default();
    let ids: Vec<_> = ["p.mean", "p.log_std", "q.mean", "q.log_std"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let t = if k % 2 == 0 { random_tensor(n, d, -2.0, 2.0, rng) } else { random_tensor(n, d, -2.0, 1.0, rng) };
            params.add(*name, t)
        })
        .collect();
    Instance {
        params,
        loss: Box::new(move |g, p| {
            let v: Vec<Var> = ids.iter().map(|&id| g.param(p, id)).collect();
            let dp = GaussianDistribution::new(g, v[0], v[1])?;
            let dq = GaussianDistribution::new(g, v[2], v[3])?;
            gaussian_kl(g, &dp, &dq)
        }),
    }
}

fn mixer_instance(rng: &mut ChaCha8Rng) -> Instance {
    let (rows, agents, state_dim) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..6));
    let mut params = ParamSet::default();
    let q = params.add("q", random_tensor(rows, agents, -1.0, 1.0, rng));
    let s = params.add("state", random_tensor(rows, state_dim, -1.0, 1.0, rng));
    let mixer = MixingNetwork::new(&mut params, "mixer", agents, state_dim, rng);
    let w = random_tensor(rows, 1, -1.0, 1.0, rng);
    Instance {
        params,
        loss: Box::new(move |g, p| {
            let (qv, sv) = (g.param(p, q), g.param(p, s));
            let y = mixer.forward(g, p, qv, sv)?;
            Ok(weighted_sum(g, y, &w))
        }),
    }
}

fn eval_loss(inst: &Instance, params: &ParamSet) -> Result<f64> {
    let mut g = Graph::new();
    let l = (inst.loss)(&mut g, params)?;
    Ok(g.value(l).item())
}

/// Largest norm-wise relative error `|a - n| / (|a| + |n|)` over the
/// parameter tensors of one instance.
fn instance_error(inst: &Instance, flip: bool) -> Result<f64> {
    let mut g = Graph::new();
    let l = (inst.loss)(&mut g, &inst.params)?;
    let mut grads = g.backward(l)?;
    if flip {
        if let Some(first) = inst.params.ids().next() {
            grads.negate(first);
        }
    }
    let mut worst: f64 = 0.0;
    for id in inst.params.ids() {
        let analytic = grads.get_or_zeros(id, &inst.params);
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut p = inst.params.clone();
        for k in 0..analytic.len() {
            let orig = p.get(id).data()[k];
            p.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval_loss(inst, &p)?;
            p.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval_loss(inst, &p)?;
            p.get_mut(id).data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}

type InstanceBuilder = fn(&mut ChaCha8Rng) -> Instance;

pub fn gradient_checks(opts: &ValidateOptions) -> Result<Vec<CheckResult>> {
    let layers: [(&str, InstanceBuilder); 5] = [
        ("gradient: linear", linear_instance),
        ("gradient: gru cell", gru_instance),
        ("gradient: gaussian sample", gaussian_sample_instance),
        ("gradient: gaussian kl", kl_instance),
        ("gradient: mixing network", mixer_instance),
    ];
    let mut out = Vec::new();
    for (k, (name, build)) in layers.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let (mut failures, mut worst) = (0, 0.0f64);
        for _ in 0..opts.gradient_instances {
            let err = instance_error(&build(&mut rng), opts.flip_gradient_sign)?;
            worst = worst.max(err);
            if err.is_nan() || err >= GRAD_TOLERANCE {
                failures += 1;
            }
        }
        out.push(CheckResult {
            name: name.to_string(),
            tolerance: format!("relative error < {GRAD_TOLERANCE:e} (central differences, h = {FD_STEP:e})"),
            instances: opts.gradient_instances,
            failures,
            worst,
        });
    }
    Ok(out)
}

/// States reached by random play on `map`.
fn sample_states(map: &MapConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut env = Env::new(map.clone())?;
    let mut states = Vec::with_capacity(count);
    while states.len() < count {
        let mut obs = env.reset(rng.random());
        let skip = rng.random_range(0..20);
        for _ in 0..skip {
            let actions: Vec<usize> = obs
                .available
                .rows
                .iter()
                .map(|r| {
                    let legal: Vec<usize> = (0..r.len()).filter(|&j| r[j]).collect();
                    legal[rng.random_range(0..legal.len())]
                })
                .collect();
            let out = env.step(&actions)?;
            if out.terminated {
                break;
            }
            obs = out.observation;
        }
        states.push(obs.state);
    }
    Ok(states)
}

fn mix_value(mixer: &MixingNetwork, params: &ParamSet, q: &[f64], state: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let qv = g.constant(Tensor::row(q.to_vec()));
    let sv = g.constant(Tensor::row(state.to_vec()));
    let y = mixer.forward(&mut g, params, qv, sv)?;
    Ok(g.value(y).item())
}

/// For every group mixer of a freshly initialised GHQ model on each map,
/// raising any single agent Q by 0.1 never lowers the group value.
pub fn monotonicity_check(maps: &[MapConfig], draws: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut instances, mut failures, mut worst) = (0, 0, 0.0f64);
    for map in maps {
        let mut params = ParamSet::default();
        let nets = Networks::build(AlgorithmVariant::Ghq, map, &mut params, &mut rng)?;
        let states = sample_states(map, draws, &mut rng)?;
        for group in &nets.groups {
            let MixerKind::Monotonic(mixer) = &group.mixer else { continue };
            for state in &states {
                let q: Vec<f64> = (0..group.members.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let base = mix_value(mixer, &params, &q, state)?;
                instances += 1;
                let mut bad = false;
                for i in 0..q.len() {
                    let mut bumped = q.clone();
                    bumped[i] += 0.1;
                    let drop = base - mix_value(mixer, &params, &bumped, state)?;
                    if drop > 0.0 {
                        bad = true;
                        worst = worst.max(drop);
                    }
                }
                failures += usize::from(bad);
            }
        }
    }
    Ok(CheckResult {
        name: format!("monotonicity: {} maps x {draws} draws", maps.len()),
        tolerance: "Q_G(q + 0.1 e_i) >= Q_G(q), tolerance 0".into(),
        instances,
        failures,
        worst,
    })
}

/// Random 2-group, 2-agents-per-group instances with at most five actions
/// per agent and random masks. The joint value is a positive combination
/// of monotone group mixers; per-agent masked argmax must reach the
/// exhaustive joint maximum.
pub fn gigm_check(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let state_dim = rng.random_range(1..5);
        let mut params = ParamSet::default();
        let mixers: Vec<MixingNetwork> =
            (0..2).map(|m| MixingNetwork::new(&mut params, &format!("m{m}"), 2, state_dim, &mut rng)).collect();
        let coeff: Vec<f64> = (0..2).map(|_| rng.random_range(0.1..2.0)).collect();
        let state: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n_actions: Vec<usize> = (0..4).map(|_| rng.random_range(1..=5)).collect();
        let q: Vec<Vec<f64>> = n_actions.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let masks: Vec<Vec<bool>> = n_actions
            .iter()
            .map(|&n| {
                let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
                let forced = rng.random_range(0..n);
                m[forced] = true;
                m
            })
            .collect();
        let q_tot = |joint: &[usize]| -> Result<f64> {
            let mut total = 0.0;
            for (m, mixer) in mixers.iter().enumerate() {
                let qs = [q[2 * m][joint[2 * m]], q[2 * m + 1][joint[2 * m + 1]]];
                total += coeff[m] * mix_value(mixer, &params, &qs, &state)?;
            }
            Ok(total)
        };
        let mut greedy = Vec::with_capacity(4);
        for (qa, mask) in q.iter().zip(&masks) {
            let t = Tensor::row(qa.clone());
            greedy.push(select_actions(&t, &[mask.as_slice()], 0.0, &mut rng)?[0]);
        }
        let mut best = f64::NEG_INFINITY;
        let legal: Vec<Vec<usize>> = masks.iter().map(|m| (0..m.len()).filter(|&j| m[j]).collect()).collect();
        for &a0 in &legal[0] {
            for &a1 in &legal[1] {
                for &a2 in &legal[2] {
                    for &a3 in &legal[3] {
                        best = best.max(q_tot(&[a0, a1, a2, a3])?);
                    }
                }
            }
        }
        let gap = best - q_tot(&greedy)?;
        if gap > 0.0 {
            failures += 1;
            worst = worst.max(gap);
        }
    }
    Ok(CheckResult {
        name: format!("grouped IGM brute force: {instances} instances"),
        tolerance: "greedy joint value == exhaustive maximum".into(),
        instances,
        failures,
        worst,
    })
}

/// Closed-form KL of random diagonal Gaussian pairs against a Monte Carlo
/// estimate `mean(log p(x) - log q(x))`, `x ~ p`. Each standard-normal draw
/// is used twice, as `+e` and `-e` (antithetic pairs).
pub fn kl_monte_carlo_check(pairs: usize, samples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..pairs {
        let d = rng.random_range(1..6);
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(lo..hi)).collect() };
        let (mp, sp, mq, sq) = (draw(&mut rng, -1.5, 1.5), draw(&mut rng, -1.0, 0.5), draw(&mut rng, -1.5, 1.5), draw(&mut rng, -1.0, 0.5));
        let mut g = Graph::new();
        let vars: Vec<Var> = [&mp, &sp, &mq, &sq].iter().map(|v| g.constant(Tensor::row(v.to_vec()))).collect();
        let p = GaussianDistribution::new(&mut g, vars[0], vars[1])?;
        let q = GaussianDistribution::new(&mut g, vars[2], vars[3])?;
        let kl = gaussian_kl(&mut g, &p, &q)?;
        let closed = g.value(kl).item();
        let log_density = |x: &[f64], m: &[f64], s: &[f64]| -> f64 {
            x.iter().zip(m).zip(s).map(|((x, m), s)| -s - 0.5 * ((x - m) / s.exp()).powi(2)).sum()
        };
        let mut acc = 0.0;
        let (mut plus, mut minus) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..samples {
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                plus[j] = mp[j] + sp[j].exp() * e;
                minus[j] = mp[j] - sp[j].exp() * e;
            }
            let ratio = |x: &[f64]| log_density(x, &mp, &sp) - log_density(x, &mq, &sq);
            acc += 0.5 * (ratio(&plus) + ratio(&minus));
        }
        let mc = acc / samples as f64;
        let rel = (closed - mc).abs() / closed.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        if rel.is_nan() || rel >= KL_TOLERANCE {
            failures += 1;
        }
    }
    Ok(CheckResult {
        name: format!("kl vs monte carlo: {pairs} pairs x {samples} samples"),
        tolerance: format!("relative error < {KL_TOLERANCE}"),
        instances: pairs,
        failures,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ValidateOptions {
        ValidateOptions { gradient_instances: 4, monotonicity_draws: 5, gigm_instances: 10, kl_pairs: 3, kl_samples: 20_000, ..Default::default() }
    }

    #[test]
    fn clean_gradients_pass() {
        for c in gradient_checks(&quick()).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn sign_flip_is_caught_by_every_gradient_check() {
        let opts = ValidateOptions { flip_gradient_sign: true, ..quick() };
        for c in gradient_checks(&opts).unwrap() {
            assert!(!c.passed(), "{c:?}");
        }
    }

    #[test]
    fn small_monotonicity_and_gigm_runs_pass() {
        let maps = vec![builtin_map("3m1m_5m").unwrap()];
        assert!(monotonicity_check(&maps, 5, 1).unwrap().passed());
        assert!(gigm_check(10, 2).unwrap().passed());
    }

    #[test]
    fn kl_check_is_close_on_small_sample_counts() {
        let c = kl_monte_carlo_check(2, 20_000, 3).unwrap();
        assert_eq!(c.instances, 2);
        assert!(c.worst < 0.1);
    }
}
