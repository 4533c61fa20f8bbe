use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{GhqError, Result};

/// Two-sided Welch t-test from summary statistics of two samples of size
/// `n` each. Returns `(t, p)`.
///
/// When both standard deviations are zero the statistic is undefined: equal
/// means give `(0, 1)` and different means `(±inf, 0)`.
pub fn welch_t_test(mean_a: f64, std_a: f64, mean_b: f64, std_b: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(GhqError::Usage(format!("t-test needs n >= 2, got {n}")));
    }
    if std_a < 0.0 || std_b < 0.0 || !std_a.is_finite() || !std_b.is_finite() {
        return Err(GhqError::Usage("standard deviations must be finite and non-negative".into()));
    }
    let nf = n as f64;
    let (va, vb) = (std_a * std_a / nf, std_b * std_b / nf);
    let se = (va + vb).sqrt();
    let diff = mean_a - mean_b;
    if se == 0.0 {
        return Ok(if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) });
    }
    let t = diff / se;
    let df = (va + vb).powi(2) / (va * va / (nf - 1.0) + vb * vb / (nf - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| GhqError::Usage(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((t, p))
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sampling variant: draws `n` normal samples per side from the given
/// summary statistics and runs the Welch test on the samples.
pub fn welch_t_test_sampled(
    mean_a: f64,
    std_a: f64,
    mean_b: f64,
    std_b: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let draw = |mean: f64, std: f64, rng: &mut dyn rand::RngCore| -> Result<Vec<f64>> {
        let d = Normal::new(mean, std).map_err(|e| GhqError::Usage(format!("normal distribution: {e}")))?;
        Ok((0..n).map(|_| d.sample(rng)).collect())
    };
    let a = draw(mean_a, std_a, rng)?;
    let b = draw(mean_b, std_b, rng)?;
    let (ma, sa) = mean_std(&a);
    let (mb, sb) = mean_std(&b);
    welch_t_test(ma, sa, mb, sb, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_samples() {
        assert_eq!(welch_t_test(0.7, 0.2, 0.7, 0.2, 500).unwrap(), (0.0, 1.0));
        assert_eq!(welch_t_test(1.0, 0.0, 1.0, 0.0, 3).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn clear_difference() {
        let (t, p) = welch_t_test(1.0, 0.0, 0.64, 0.46, 500).unwrap();
        assert!(t > 0.0 && p < 0.001, "t = {t}, p = {p}");
    }

    #[test]
    fn swapping_negates_t() {
        let (t1, p1) = welch_t_test(0.9, 0.1, 0.8, 0.3, 10).unwrap();
        let (t2, p2) = welch_t_test(0.8, 0.3, 0.9, 0.1, 10).unwrap();
        assert_eq!(t1, -t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn matches_textbook_value() {
        // t = 1 / sqrt(2/5 + 2/5) with df = 8 gives a two-sided p of 0.29600 (scipy)
        let (t, p) = welch_t_test(1.0, 2f64.sqrt(), 0.0, 2f64.sqrt(), 5).unwrap();
        assert!((t - 1.118033988749895).abs() < 1e-12);
        assert!((p - 0.2959993049157026).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn sampled_mode_agrees_in_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (t, p) = welch_t_test_sampled(1.0, 0.05, 0.64, 0.46, 500, &mut rng).unwrap();
        assert!(t > 0.0 && p < 0.001);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(welch_t_test(0.0, 1.0, 0.0, 1.0, 1).is_err());
        assert!(welch_t_test(0.0, -1.0, 0.0, 1.0, 5).is_err());
    }
}
