use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Norm used for the ABC acceptance distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Infinity,
}

impl NormOrder {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            NormOrder::Two => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            NormOrder::Infinity => a
                .iter()
                .zip(b)
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())),
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" => Ok(NormOrder::Two),
            "inf" | "infinity" => Ok(NormOrder::Infinity),
            other => Err(Error::Parse(format!(
                "unsupported norm order {other:?} (expected \"2\" or \"inf\")"
            ))),
        }
    }
}

/// Acceptance region `{z : ‖z‖ₚ ≤ ε}` in observation space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpBallSpec {
    pub p: NormOrder,
    pub epsilon: f64,
    pub dim_u: usize,
    pub discrete: bool,
}

impl LpBallSpec {
    pub fn new(p: NormOrder, epsilon: f64, dim_u: usize, discrete: bool) -> Result<Self> {
        let spec = Self {
            p,
            epsilon,
            dim_u,
            discrete,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.dim_u == 0 {
            return Err(Error::InvalidArgument("observation dimension must be positive".into()));
        }
        if self.epsilon == 0.0 && !self.discrete {
            return Err(Error::InvalidArgument(
                "epsilon = 0 on continuous data gives an acceptance set of measure zero".into(),
            ));
        }
        Ok(())
    }

    /// Acceptance predicate `‖simulated − observed‖ₚ ≤ ε`.
    #[inline]
    pub fn accepts(&self, simulated: &[f64], observed: &[f64]) -> bool {
        if self.epsilon == 0.0 {
            simulated == observed
        } else {
            self.p.distance(simulated, observed) <= self.epsilon
        }
    }
}

/// Normalising volume `V` of the uniform kernel on the ball.
///
/// On discrete data the "volume" is the number of integer points in the
/// ball, so `ε = 0` gives `V = 1`.
pub fn ball_volume(spec: &LpBallSpec) -> Result<f64> {
    spec.validate()?;
    let u = spec.dim_u;
    let eps = spec.epsilon;
    if spec.discrete {
        return Ok(lattice_points_in_ball(spec.p, eps, u) as f64);
    }
    Ok(match spec.p {
        NormOrder::Infinity => (2.0 * eps).powi(u as i32),
        NormOrder::Two => {
            let half_u = u as f64 / 2.0;
            (half_u * std::f64::consts::PI.ln() + u as f64 * eps.ln() - ln_gamma(half_u + 1.0))
                .exp()
        }
    })
}

fn lattice_points_in_ball(p: NormOrder, eps: f64, u: usize) -> u64 {
    let r = eps.floor() as i64;
    match p {
        NormOrder::Infinity => ((2 * r + 1) as u64).pow(u as u32),
        NormOrder::Two => {
            fn count(remaining: usize, budget: f64, r: i64) -> u64 {
                if remaining == 0 {
                    return 1;
                }
                (-r..=r)
                    .filter(|z| (z * z) as f64 <= budget)
                    .map(|z| count(remaining - 1, budget - (z * z) as f64, r))
                    .sum()
            }
            count(u, eps * eps, r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_length() {
        let v = ball_volume(&LpBallSpec::new(NormOrder::Two, 0.01, 1, false).unwrap()).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
    }

    #[test]
    fn square_area() {
        let v = ball_volume(&LpBallSpec::new(NormOrder::Infinity, 1.0, 2, false).unwrap()).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn disc_area() {
        let v = ball_volume(&LpBallSpec::new(NormOrder::Two, 2.0, 2, false).unwrap()).unwrap();
        assert!((v - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn discrete_exact_match_has_unit_volume() {
        for u in 1..5 {
            for p in [NormOrder::Two, NormOrder::Infinity] {
                let v = ball_volume(&LpBallSpec::new(p, 0.0, u, true).unwrap()).unwrap();
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn discrete_counts_points() {
        let cube = LpBallSpec::new(NormOrder::Infinity, 1.0, 2, true).unwrap();
        assert_eq!(ball_volume(&cube).unwrap(), 9.0);
        let disc = LpBallSpec::new(NormOrder::Two, 1.0, 2, true).unwrap();
        assert_eq!(ball_volume(&disc).unwrap(), 5.0);
    }

    #[test]
    fn zero_epsilon_continuous_rejected() {
        assert!(LpBallSpec::new(NormOrder::Two, 0.0, 1, false).is_err());
    }

    #[test]
    fn one_dimensional_norms_agree() {
        for eps in [0.001, 0.5, 3.0] {
            let a = ball_volume(&LpBallSpec::new(NormOrder::Two, eps, 1, false).unwrap()).unwrap();
            let b =
                ball_volume(&LpBallSpec::new(NormOrder::Infinity, eps, 1, false).unwrap()).unwrap();
            assert!((a - b).abs() <= 1e-14 * a);
        }
    }

    #[test]
    fn norm_parse() {
        assert_eq!("inf".parse::<NormOrder>().unwrap(), NormOrder::Infinity);
        assert_eq!("2".parse::<NormOrder>().unwrap(), NormOrder::Two);
        assert!("1".parse::<NormOrder>().is_err());
    }
}
