use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{GhqError, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Networks store [`ParamId`]s into a set rather than owning tensors, so a
/// target network is just a clone of the set with the same layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// `(name, tensor)` pairs in insertion order.
    pub fn records(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Overwrites every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        self.check_layout(other)?;
        self.values.clone_from(&other.values);
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(GhqError::Config("parameter sets have different names".into()));
        }
        for (name, (a, b)) in self.names.iter().zip(self.values.iter().zip(&other.values)) {
            if a.shape() != b.shape() {
                return Err(GhqError::Config(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_uniform(format!("{name}.weight"), &[inputs, outputs], inputs, rng);
        let bias = params.add_uniform(format!("{name}.bias"), &[1, outputs], inputs, rng);
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.linear(x, w, b)
    }
}

/// GRU cell with gates stacked in the order (reset, update, candidate).
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input_weight: ParamId,
    pub input_bias: ParamId,
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        // torch-style init: every GRU tensor uses 1/sqrt(hidden)
        let input_weight = params.add_uniform(format!("{name}.w_ih"), &[inputs, 3 * hidden], hidden, rng);
        let input_bias = params.add_uniform(format!("{name}.b_ih"), &[1, 3 * hidden], hidden, rng);
        let hidden_weight = params.add_uniform(format!("{name}.w_hh"), &[hidden, 3 * hidden], hidden, rng);
        let hidden_bias = params.add_uniform(format!("{name}.b_hh"), &[1, 3 * hidden], hidden, rng);
        Self { input_weight, input_bias, hidden_weight, hidden_bias, inputs, hidden }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var, h: Var) -> Result<Var> {
        let gi = self.project_inputs(g, params, x)?;
        self.step(g, params, gi, h)
    }

    /// `x W_ih + b_ih` for any number of rows. Projecting a whole sequence
    /// at once and slicing per step gives the same result as [`forward`].
    ///
    /// [`forward`]: GruCell::forward
    pub fn project_inputs(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let wi = g.param(params, self.input_weight);
        let bi = g.param(params, self.input_bias);
        g.linear(x, wi, bi)
    }

    /// One update from an already projected input `gi`.
    pub fn step(&self, g: &mut Graph, params: &ParamSet, gi: Var, h: Var) -> Result<Var> {
        if g.value(h).cols() != self.hidden || g.value(gi).shape() != [g.value(h).rows(), 3 * self.hidden] {
            return Err(GhqError::Config(format!(
                "GRU step got hidden {:?} and projection {:?} for hidden size {}",
                g.value(h).shape(),
                g.value(gi).shape(),
                self.hidden
            )));
        }
        let wh = g.param(params, self.hidden_weight);
        let bh = g.param(params, self.hidden_bias);
        let gh = g.linear(h, wh, bh)?;
        Ok(g.gru_gates(gi, gh, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Row-by-row GRU written with plain loops.
    fn naive_gru(cell: &GruCell, params: &ParamSet, x: &Tensor, h: &Tensor) -> Vec<f64> {
        let hd = cell.hidden;
        let (wi, bi) = (params.get(cell.input_weight), params.get(cell.input_bias));
        let (wh, bh) = (params.get(cell.hidden_weight), params.get(cell.hidden_bias));
        let mut out = Vec::new();
        for r in 0..x.rows() {
            let proj = |w: &Tensor, b: &Tensor, v: &[f64], c: usize| -> f64 {
                b.data()[c] + v.iter().enumerate().map(|(k, vk)| vk * w.get(k, c)).sum::<f64>()
            };
            for j in 0..hd {
                let (xr, hr) = (x.row_slice(r), h.row_slice(r));
                let rg = sig(proj(wi, bi, xr, j) + proj(wh, bh, hr, j));
                let zg = sig(proj(wi, bi, xr, hd + j) + proj(wh, bh, hr, hd + j));
                let n = (proj(wi, bi, xr, 2 * hd + j) + rg * proj(wh, bh, hr, 2 * hd + j)).tanh();
                out.push((1.0 - zg) * n + zg * hr[j]);
            }
        }
        out
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn linear_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let (n, i, o) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
            let mut params = ParamSet::default();
            let lin = Linear::new(&mut params, "l", i, o, &mut rng);
            let x = random(n, i, &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = lin.forward(&mut g, &params, xv).unwrap();
            let (w, b) = (params.get(lin.weight), params.get(lin.bias));
            for r in 0..n {
                for c in 0..o {
                    let expected: f64 = b.data()[c] + (0..i).map(|k| x.get(r, k) * w.get(k, c)).sum::<f64>();
                    assert!((g.value(y).get(r, c) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gru_matches_naive_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::default();
        let cell = GruCell::new(&mut params, "gru", 3, 4, &mut rng);
        let (x, h) = (random(5, 3, &mut rng), random(5, 4, &mut rng));
        let mut g = Graph::new();
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let out = cell.forward(&mut g, &params, xv, hv).unwrap();
        for (a, b) in g.value(out).data().iter().zip(naive_gru(&cell, &params, &x, &h)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_scalar_hand_value() {
        // one unit, all weights 0.5, biases 0: r = z = sigmoid(1), n = tanh(0.5 + r * 0.5)
        let mut params = ParamSet::default();
        let cell = GruCell {
            input_weight: params.add("wi", Tensor::full(&[1, 3], 0.5)),
            input_bias: params.add("bi", Tensor::zeros(&[1, 3])),
            hidden_weight: params.add("wh", Tensor::full(&[1, 3], 0.5)),
            hidden_bias: params.add("bh", Tensor::zeros(&[1, 3])),
            inputs: 1,
            hidden: 1,
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.0));
        let h = g.constant(Tensor::scalar(1.0));
        let out = cell.forward(&mut g, &params, x, h).unwrap();
        let r = sig(1.0);
        let n = (0.5 + r * 0.5f64).tanh();
        assert!((g.value(out).item() - ((1.0 - r) * n + r)).abs() < 1e-15);
    }

    #[test]
    fn fused_gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::default();
        let cell = GruCell::new(&mut params, "gru", 3, 4, &mut rng);
        let (x, h) = (random(2, 3, &mut rng), random(2, 4, &mut rng));
        let weights = random(2, 4, &mut rng);
        let loss = |params: &ParamSet| -> f64 {
            naive_gru(&cell, params, &x, &h).iter().zip(weights.data()).map(|(a, w)| a * w).sum()
        };
        let mut g = Graph::new();
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let out = cell.forward(&mut g, &params, xv, hv).unwrap();
        let wv = g.constant(weights.clone());
        let prod = g.mul(out, wv);
        let l = g.sum_all(prod);
        let grads = g.backward(l).unwrap();
        for id in params.ids().collect::<Vec<_>>() {
            let analytic = grads.get(id).unwrap().clone();
            for k in 0..analytic.len() {
                let mut p = params.clone();
                p.get_mut(id).data_mut()[k] += 1e-6;
                let up = loss(&p);
                p.get_mut(id).data_mut()[k] -= 2e-6;
                let numeric = (up - loss(&p)) / 2e-6;
                assert!((numeric - analytic.data()[k]).abs() < 1e-7, "{} [{k}]", params.name(id));
            }
        }
    }

    #[test]
    fn gru_rejects_mismatched_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::default();
        let cell = GruCell::new(&mut params, "gru", 3, 4, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h = g.constant(Tensor::zeros(&[1, 5]));
        assert!(matches!(cell.forward(&mut g, &params, x, h), Err(GhqError::Config(_))));
    }
}
