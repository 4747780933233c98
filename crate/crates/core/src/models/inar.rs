//! INAR(1): `X_t = α ∘ X_{t−1} + Z_t`, binomial thinning plus Poisson(λ)
//! innovations. Inferred on θ = (logit α, log λ).

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use super::transform::log_logistic;
use super::SimError;
use crate::math::special::{ln_binomial_pmf, ln_poisson_pmf};
use crate::math::LogSumExp;

pub fn simulate<R: Rng + ?Sized>(
    alpha: f64,
    lambda: f64,
    previous: u64,
    rng: &mut R,
) -> Result<f64, SimError> {
    let survivors = if previous == 0 {
        0
    } else {
        Binomial::new(previous, alpha.clamp(0.0, 1.0))
            .map_err(|e| SimError::InvalidParameter(format!("thinning α = {alpha}: {e}")))?
            .sample(rng)
    };
    let arrivals = if lambda > 0.0 {
        Poisson::new(lambda)
            .map_err(|e| SimError::InvalidParameter(format!("poisson λ = {lambda}: {e}")))?
            .sample(rng) as u64
    } else {
        0
    };
    Ok((survivors + arrivals) as f64)
}

/// `log Σ_k Binom(k; x_{t−1}, α) Po(x_t − k; λ)`.
pub fn log_pmf(logit_alpha: f64, log_lambda: f64, previous: u64, current: u64) -> f64 {
    let ln_a = log_logistic(logit_alpha);
    let ln_1ma = log_logistic(-logit_alpha);
    let lambda = log_lambda.exp();
    let mut acc = LogSumExp::new();
    for k in 0..=previous.min(current) {
        acc.push(
            ln_binomial_pmf(k, previous, ln_a, ln_1ma)
                + ln_poisson_pmf(current - k, lambda, log_lambda),
        );
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;
    use crate::rng::stream;

    #[test]
    fn zero_previous_is_poisson() {
        let v = log_pmf(0.3, 0.0, 0, 2);
        assert!((v - (-1.693_147_180_559_945_2)).abs() < 1e-14);
    }

    #[test]
    fn pmf_sums_to_one() {
        for &(ta, tl, prev) in &[(0.85, 0.0, 10u64), (-2.0, 1.5, 3), (4.0, -3.0, 25)] {
            let v: Vec<f64> = (0..400).map(|x| log_pmf(ta, tl, prev, x)).collect();
            assert!(log_sum_exp(&v).abs() < 1e-10);
        }
    }

    #[test]
    fn vanishing_parameters_give_zero() {
        let alpha = 1e-12;
        let lambda = 1e-12;
        for i in 0..1000 {
            let x = simulate(alpha, lambda, 5, &mut stream(2, 0, i)).unwrap();
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn simulated_mean() {
        // E[X_t | x] = αx + λ
        let (alpha, lambda, prev) = (0.7, 1.0, 10u64);
        let n = 50_000;
        let m: f64 = (0..n)
            .map(|i| simulate(alpha, lambda, prev, &mut stream(4, 0, i)).unwrap())
            .sum::<f64>()
            / n as f64;
        let var = prev as f64 * alpha * (1.0 - alpha) + lambda;
        assert!((m - (alpha * prev as f64 + lambda)).abs() < 4.0 * (var / n as f64).sqrt());
    }
}
