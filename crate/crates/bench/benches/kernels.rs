use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ghq::autodiff::{GruCell, Linear};
use ghq::env::builtin_map;
use ghq::learner::Trainer;
use ghq::{Env, Graph, ParamSet, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_tensor(256, 96, &mut rng);
    let b = random_tensor(96, 192, &mut rng);
    c.bench_function("matmul_256x96x192_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let va = g.constant(a.clone());
            let vb = g.constant(b.clone());
            let y = g.matmul(va, vb);
            let loss = g.sum_all(y);
            g.backward(loss).unwrap()
        })
    });
}

fn gru_sequence(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::default();
    let embed = Linear::new(&mut params, "embed", 63, 32, &mut rng);
    let gru = GruCell::new(&mut params, "gru", 32, 64, &mut rng);
    let batch = 96;
    let steps = 20;
    let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(batch, 63, &mut rng)).collect();
    c.bench_function("gru_20_steps_batch96_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let mut h = g.constant(Tensor::zeros(&[batch, 64]));
            let mut outs = Vec::with_capacity(steps);
            for x in &xs {
                let x = g.constant(x.clone());
                let e = embed.forward(&mut g, &params, x).unwrap();
                h = gru.forward(&mut g, &params, e, h).unwrap();
                outs.push(g.sum_all(h));
            }
            let mut loss = outs[0];
            for &o in &outs[1..] {
                loss = g.add(loss, o);
            }
            g.backward(loss).unwrap()
        })
    });
}

fn env_step(c: &mut Criterion) {
    let map = builtin_map("3m1m_5m").unwrap();
    c.bench_function("env_episode_3m1m_5m_stop_policy", |bench| {
        let mut env = Env::new(map.clone()).unwrap();
        let mut seed = 0;
        bench.iter(|| {
            seed += 1;
            env.reset(seed);
            let mut steps = 0;
            loop {
                let avail = env.available_actions();
                let actions: Vec<usize> = (0..env.n_agents())
                    .map(|a| (0..env.padded_action_dim()).rev().find(|&k| avail.is_available(a, k)).unwrap_or(0))
                    .collect();
                steps += 1;
                if env.step(&actions).unwrap().terminated {
                    break steps;
                }
            }
        })
    });
}

fn training_episode(c: &mut Criterion) {
    let map = builtin_map("3m1m_5m").unwrap();
    let config = TrainConfig { batch_size: 32, eval_interval: u64::MAX, ..TrainConfig::desk() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("ghq_episode_with_update", |bench| {
        bench.iter_batched(
            || {
                let mut t = Trainer::new(config.clone(), map.clone(), 3).unwrap();
                while t.buffer.len() < config.batch_size {
                    t.train_episode().unwrap();
                }
                t
            },
            |mut t| t.train_episode().unwrap(),
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

criterion_group!(benches, matmul, gru_sequence, env_step, training_episode);
criterion_main!(benches);
