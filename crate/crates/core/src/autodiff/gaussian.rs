use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{GhqError, Result};

/// Lower bound applied to every log standard deviation.
pub const LOG_STD_MIN: f64 = -5.0;
/// Upper bound applied to every log standard deviation.
pub const LOG_STD_MAX: f64 = 2.0;

/// Diagonal Gaussian living on a [`Graph`]: one distribution per row.
#[derive(Clone, Copy, Debug)]
pub struct GaussianDistribution {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianDistribution {
    /// Wraps raw head outputs, clamping `log_std` into
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(g: &mut Graph, mean: Var, raw_log_std: Var) -> Result<Self> {
        if g.value(mean).shape() != g.value(raw_log_std).shape() {
            return Err(GhqError::Config(format!(
                "gaussian mean {:?} and log_std {:?} differ in shape",
                g.value(mean).shape(),
                g.value(raw_log_std).shape()
            )));
        }
        let log_std = g.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
        Ok(Self { mean, log_std })
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.value(self.mean).cols()
    }

    /// Row-block average over `group` consecutive rows of both parameters.
    pub fn mean_over_rows(&self, g: &mut Graph, group: usize) -> Self {
        Self { mean: g.mean_row_groups(self.mean, group), log_std: g.mean_row_groups(self.log_std, group) }
    }
}

/// Reparameterised sample `mean + exp(log_std) * noise`.
pub fn gaussian_sample(g: &mut Graph, dist: &GaussianDistribution, noise: Tensor) -> Result<Var> {
    if noise.shape() != g.value(dist.mean).shape() {
        return Err(GhqError::Config(format!(
            "noise shape {:?} does not match distribution {:?}",
            noise.shape(),
            g.value(dist.mean).shape()
        )));
    }
    let eps = g.constant(noise);
    let std = g.exp(dist.log_std);
    let spread = g.mul(std, eps);
    Ok(g.add(dist.mean, spread))
}

/// Closed-form `KL(p || q)` per row, summed over latent dims: an `n x 1`
/// column.
///
/// ```text
/// KL = log s_q - log s_p + (s_p^2 + (m_p - m_q)^2) / (2 s_q^2) - 1/2
/// ```
pub fn gaussian_kl_rows(g: &mut Graph, p: &GaussianDistribution, q: &GaussianDistribution) -> Result<Var> {
    if g.value(p.mean).shape() != g.value(q.mean).shape() {
        return Err(GhqError::Config("KL between distributions of different shape".into()));
    }
    let log_ratio = g.sub(q.log_std, p.log_std);
    let two_lp = g.scale(p.log_std, 2.0);
    let var_p = g.exp(two_lp);
    let two_lq = g.scale(q.log_std, 2.0);
    let var_q = g.exp(two_lq);
    let diff = g.sub(p.mean, q.mean);
    let diff_sq = g.square(diff);
    let num = g.add(var_p, diff_sq);
    let den = g.scale(var_q, 2.0);
    let frac = g.div(num, den);
    let sum = g.add(log_ratio, frac);
    let per_dim = g.add_scalar(sum, -0.5);
    Ok(g.sum_cols(per_dim))
}

/// `KL(p || q)` summed over latent dims and averaged over rows.
pub fn gaussian_kl(g: &mut Graph, p: &GaussianDistribution, q: &GaussianDistribution) -> Result<Var> {
    let rows = gaussian_kl_rows(g, p, q)?;
    Ok(g.mean_all(rows))
}
