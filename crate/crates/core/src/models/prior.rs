use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{CovMatrix, GaussianDensity, ParamVec};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Prior on the inference-scale parameter, independent across dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl PriorSpec {
    pub fn gaussian(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        let p = PriorSpec::Gaussian { mean, sd };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let p = PriorSpec::UniformBox { lower, upper };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Gaussian { mean, sd } => {
                if mean.len() != sd.len() || mean.is_empty() {
                    return Err(Error::InvalidArgument(
                        "gaussian prior needs matching, non-empty mean and sd".into(),
                    ));
                }
                if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite())
                    || mean.iter().any(|m| !m.is_finite())
                {
                    return Err(Error::InvalidArgument(
                        "gaussian prior needs finite means and positive sds".into(),
                    ));
                }
            }
            PriorSpec::UniformBox { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::InvalidArgument(
                        "uniform prior needs matching, non-empty bounds".into(),
                    ));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
                {
                    return Err(Error::InvalidArgument(
                        "uniform prior needs finite lower < upper".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Gaussian { mean, .. } => mean.len(),
            PriorSpec::UniformBox { lower, .. } => lower.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVec {
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, out.as_mut_slice());
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            PriorSpec::Gaussian { mean, sd } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(sd) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            PriorSpec::UniformBox { lower, upper } => {
                for ((o, l), u) in out.iter_mut().zip(lower).zip(upper) {
                    // strictly inside (l, u)
                    let mut v;
                    loop {
                        v = l + (u - l) * rng.random::<f64>();
                        if v > *l {
                            break;
                        }
                    }
                    *o = v;
                }
            }
        }
    }

    /// Log prior density; `-inf` outside a uniform box.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            PriorSpec::Gaussian { mean, sd } => theta
                .iter()
                .zip(mean)
                .zip(sd)
                .map(|((t, m), s)| {
                    let z = (t - m) / s;
                    -0.5 * z * z - s.ln() - LN_SQRT_2PI
                })
                .sum(),
            PriorSpec::UniformBox { lower, upper } => {
                if self.in_support(theta) {
                    -lower.iter().zip(upper).map(|(l, u)| (u - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        match self {
            PriorSpec::Gaussian { .. } => theta.iter().all(|t| t.is_finite()),
            PriorSpec::UniformBox { lower, upper } => theta
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(t, (l, u))| t >= l && t <= u),
        }
    }

    pub fn as_gaussian(&self) -> Option<GaussianDensity> {
        match self {
            PriorSpec::Gaussian { mean, sd } => {
                let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
                Some(GaussianDensity {
                    mean: DVector::from_column_slice(mean),
                    cov: CovMatrix::from_diagonal(&var).ok()?,
                })
            }
            PriorSpec::UniformBox { .. } => None,
        }
    }

    /// Region holding essentially all prior mass: the box itself, or
    /// `mean ± width·sd` for a Gaussian prior.
    pub fn bounds(&self, width: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            PriorSpec::Gaussian { mean, sd } => (
                mean.iter().zip(sd).map(|(m, s)| m - width * s).collect(),
                mean.iter().zip(sd).map(|(m, s)| m + width * s).collect(),
            ),
            PriorSpec::UniformBox { lower, upper } => (lower.clone(), upper.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn seeded_draw_is_reproducible() {
        let p = PriorSpec::gaussian(vec![0.0], vec![3.0]).unwrap();
        let a = p.sample(&mut stream(42, 0, 0));
        let b = p.sample(&mut stream(42, 0, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_draws_in_support() {
        let p = PriorSpec::uniform_box(vec![-5.0], vec![2.0]).unwrap();
        for i in 0..10_000 {
            let t = p.sample(&mut stream(1, 0, i))[0];
            assert!(t > -5.0 && t < 2.0);
        }
    }

    #[test]
    fn degenerate_width() {
        let p = PriorSpec::gaussian(vec![10.0], vec![1e-9]).unwrap();
        for i in 0..100 {
            assert!((p.sample(&mut stream(3, 0, i))[0] - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_priors() {
        assert!(PriorSpec::gaussian(vec![0.0], vec![0.0]).is_err());
        assert!(PriorSpec::uniform_box(vec![1.0], vec![0.0]).is_err());
        assert!(PriorSpec::gaussian(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn log_density_matches_gaussian_logpdf() {
        let p = PriorSpec::gaussian(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let g = p.as_gaussian().unwrap();
        let theta = DVector::from_vec(vec![1.2, -0.7]);
        let a = p.log_density(theta.as_slice());
        let b = g.logpdf(&theta).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn uniform_density() {
        let p = PriorSpec::uniform_box(vec![-5.0], vec![2.0]).unwrap();
        assert!((p.log_density(&[0.0]) + 7f64.ln()).abs() < 1e-15);
        assert_eq!(p.log_density(&[3.0]), f64::NEG_INFINITY);
    }
}
