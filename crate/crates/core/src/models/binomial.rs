//! IID Binomial(k, p) observations, inferred on θ = logit(p).

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::transform::log_logistic;
use super::SimError;
use crate::math::special::ln_binomial_pmf;

pub fn simulate<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> Result<f64, SimError> {
    let dist = Binomial::new(trials, p.clamp(0.0, 1.0))
        .map_err(|e| SimError::InvalidParameter(format!("binomial p = {p}: {e}")))?;
    Ok(dist.sample(rng) as f64)
}

pub fn log_pmf(trials: u64, logit_p: f64, x: u64) -> f64 {
    ln_binomial_pmf(x, trials, log_logistic(logit_p), log_logistic(-logit_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;

    #[test]
    fn pmf_sums_to_one() {
        for &theta in &[-4.0, 0.0, 0.405, 3.0] {
            let v: Vec<f64> = (0..=100).map(|x| log_pmf(100, theta, x)).collect();
            assert!(log_sum_exp(&v).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logit_is_finite_at_mode() {
        assert!(log_pmf(100, 40.0, 100).abs() < 1e-12);
        assert!(log_pmf(100, -40.0, 0).abs() < 1e-12);
    }
}
