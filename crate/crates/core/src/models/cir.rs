//! Cox–Ingersoll–Ross diffusion `dX = a(b − X)dt + σ√X dW`.
//!
//! Over a step Δ, `2cX(t+Δ) | X(t)` is non-central chi-square with
//! `4ab/σ²` degrees of freedom and non-centrality `2cX(t)e^{−aΔ}`, where
//! `c = 2a / (σ²(1 − e^{−aΔ}))`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::SimError;
use crate::math::special::ln_noncentral_chi2_pdf;

#[derive(Debug, Clone, Copy)]
pub struct TransitionLaw {
    /// `2c`: scale from the state to the chi-square variable.
    pub scale: f64,
    pub df: f64,
    pub ncp: f64,
}

pub fn transition_law(a: f64, b: f64, sigma: f64, x0: f64, dt: f64) -> TransitionLaw {
    let c = 2.0 * a / (sigma * sigma * (-(-a * dt).exp_m1()));
    TransitionLaw {
        scale: 2.0 * c,
        df: 4.0 * a * b / (sigma * sigma),
        ncp: 2.0 * c * x0 * (-a * dt).exp(),
    }
}

/// One exact draw via the Poisson mixture of central chi-squares.
pub fn simulate<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    sigma: f64,
    x0: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64, SimError> {
    if !(x0 > 0.0) || !x0.is_finite() {
        return Err(SimError::InvalidState(format!("CIR state must be > 0, got {x0}")));
    }
    let law = transition_law(a, b, sigma, x0, dt);
    if !law.df.is_finite() || !(law.df > 0.0) || !law.ncp.is_finite() {
        return Err(SimError::InvalidParameter(format!(
            "CIR law df = {}, ncp = {}",
            law.df, law.ncp
        )));
    }
    let half_ncp = 0.5 * law.ncp;
    let count = if half_ncp > 0.0 {
        Poisson::new(half_ncp)
            .map_err(|e| SimError::InvalidParameter(format!("poisson({half_ncp}): {e}")))?
            .sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * law.df + count;
    let y = Gamma::new(shape, 2.0)
        .map_err(|e| SimError::InvalidParameter(format!("gamma({shape}): {e}")))?
        .sample(rng);
    Ok(y / law.scale)
}

/// Exact transition log density, series truncated at `rel_tol`.
pub fn log_density(a: f64, b: f64, sigma: f64, x0: f64, x1: f64, dt: f64, rel_tol: f64) -> f64 {
    if !(x1 > 0.0) {
        return f64::NEG_INFINITY;
    }
    let law = transition_law(a, b, sigma, x0, dt);
    law.scale.ln() + ln_noncentral_chi2_pdf(law.scale * x1, law.df, law.ncp, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn small_sigma_tracks_ode() {
        let (a, b, sigma, x0, dt): (f64, f64, f64, f64, f64) = (0.5, 1.3, 1e-4, 0.6, 0.5);
        let ode = b + (x0 - b) * (-a * dt).exp();
        let n = 2000;
        let mean: f64 = (0..n)
            .map(|i| simulate(a, b, sigma, x0, dt, &mut stream(5, 0, i)).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - ode).abs() < 1e-2);
    }

    #[test]
    fn simulated_moments_match_law() {
        // E[X] = b + (x0 − b)e^{−aΔ};
        // Var[X] = x0 σ²/a (e^{−aΔ} − e^{−2aΔ}) + bσ²/(2a)(1 − e^{−aΔ})²
        let (a, b, sigma, x0, dt): (f64, f64, f64, f64, f64) = (0.5, 1.0, 0.15, 1.2, 0.5);
        let e = (-a * dt).exp();
        let mean = b + (x0 - b) * e;
        let var = x0 * sigma * sigma / a * (e - e * e)
            + b * sigma * sigma / (2.0 * a) * (1.0 - e).powi(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|i| simulate(a, b, sigma, x0, dt, &mut stream(9, 0, i)).unwrap())
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((v / var - 1.0).abs() < 0.03);
    }

    #[test]
    fn density_normalises() {
        let (a, b, sigma, x0, dt) = (0.5, 1.0, 0.15, 1.0, 0.5);
        let n = 200_000;
        let hi = 3.0;
        let h = hi / n as f64;
        let total: f64 = (0..n)
            .map(|i| log_density(a, b, sigma, x0, (i as f64 + 0.5) * h, dt, 1e-16).exp())
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_positive_state_rejected() {
        assert!(simulate(0.5, 1.0, 0.15, 0.0, 0.5, &mut stream(1, 0, 0)).is_err());
        assert!(simulate(0.5, 1.0, 0.15, -1.0, 0.5, &mut stream(1, 0, 0)).is_err());
    }
}
