use super::graph::Gradients;
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient so their moments still decay.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for id in params.ids() {
            let i = id.index();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.get_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *mj = b1 * *mj + (1.0 - b1) * gj;
                        *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                        *pj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((pj, mj), vj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mj *= b1;
                        *vj *= b2;
                        if *mj != 0.0 {
                            *pj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn quadratic_grads(params: &ParamSet, id: crate::autodiff::ParamId) -> Gradients {
        let mut g = Graph::new();
        let x = g.param(params, id);
        let sq = g.square(x);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::default();
        let id = params.add("x", Tensor::row(vec![0.5, -0.25]));
        let mut adam = AdamState::new(&params, 3e-4);
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let z = g.scale(x, 0.0);
        let loss = g.sum_all(z);
        let grads = g.backward(loss).unwrap();
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params.get(id).data(), &[0.5, -0.25]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParamSet::default();
        let id = params.add("x", Tensor::row(vec![1.0, -2.0]));
        let mut adam = AdamState::new(&params, 3e-4);
        let grads = quadratic_grads(&params, id);
        adam.step(&mut params, &grads).unwrap();
        let d = params.get(id).data();
        // gradient 2x: signs (+, -) so x moves by -lr*sign
        assert!((d[0] - (1.0 - 3e-4)).abs() < 1e-10);
        assert!((d[1] - (-2.0 + 3e-4)).abs() < 1e-10);
    }

    #[test]
    fn minimises_square() {
        let mut params = ParamSet::default();
        let id = params.add("x", Tensor::row(vec![1.0]));
        let mut adam = AdamState::new(&params, 0.1);
        for _ in 0..100 {
            let grads = quadratic_grads(&params, id);
            adam.step(&mut params, &grads).unwrap();
        }
        assert!(params.get(id).item().abs() < 0.1, "x = {}", params.get(id).item());
        assert_eq!(adam.step_count, 100);
    }
}
