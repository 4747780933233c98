//! Gaussian factor approximations and the closed-form posterior they imply.
//!
//! Each factor is replaced by `K(θ; θ̄ᵢ, Qᵢ)` from its sample moments. The
//! product of `n − 1` factors is `w K(θ; a, B)`; multiplying by
//! `π(θ)^{2−n}` for a Gaussian prior gives another Gaussian.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::abc::FactorSampleSet;
use crate::error::{Error, Result};
use crate::math::special::normal_cdf;
use crate::math::{gaussian_product, CovMatrix, GaussianDensity, ParamVec, WeightedGaussian};
use crate::models::PriorSpec;
use crate::rng::{self, domain};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const TRUNCATION_MC_DRAWS: u64 = 200_000;
const MIN_TRUNCATION_MASS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianFactor {
    pub factor_index: usize,
    pub density: GaussianDensity,
}

/// Sample mean and unbiased covariance of the accepted draws.
pub fn fit_gaussian_factor(fs: &FactorSampleSet) -> Result<GaussianFactor> {
    let (d, m) = (fs.dim, fs.m());
    if m <= d {
        return Err(Error::InvalidArgument(format!(
            "factor {}: {m} samples cannot fit a {d}-dimensional covariance",
            fs.factor_index
        )));
    }
    let (mean, cov) = sample_moments(&fs.samples, d);
    let cov = CovMatrix::new(cov)?;
    if cov.jitter() > 0.0 {
        log::warn!(
            "factor {}: sample covariance is degenerate, regularised with jitter {:e}; m is probably too small",
            fs.factor_index,
            cov.jitter()
        );
    }
    Ok(GaussianFactor {
        factor_index: fs.factor_index,
        density: GaussianDensity::new(mean, cov)?,
    })
}

/// Mean and divisor-(m−1) covariance of row-major samples.
pub fn sample_moments(samples: &[f64], d: usize) -> (ParamVec, DMatrix<f64>) {
    let m = samples.len() / d;
    let mut mean = DVector::zeros(d);
    for row in samples.chunks_exact(d) {
        for k in 0..d {
            mean[k] += row[k];
        }
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in samples.chunks_exact(d) {
        for r in 0..d {
            let dr = row[r] - mean[r];
            for c in 0..=r {
                cov[(r, c)] += dr * (row[c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in 0..=r {
            let v = cov[(r, c)] / (m as f64 - 1.0);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    (mean, cov)
}

/// Multiplies `w K(θ; a, B)` by `π(θ)^e` for a Gaussian prior. The result
/// carries the integral `log ∫ w K(θ; a, B) π(θ)^e dθ` as its weight and
/// the normalised posterior as its component.
pub fn prior_correct(
    product: &WeightedGaussian,
    prior: &GaussianDensity,
    exponent: f64,
) -> Result<WeightedGaussian> {
    let d = product.component.dim();
    if prior.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.dim(),
        });
    }
    let b = &product.component.cov;
    let a = &product.component.mean;
    let b_inv = b.inverse();
    let p_inv = prior.cov.inverse();
    let precision = b_inv + p_inv * exponent;
    let post_cov = CovMatrix::from_precision(&precision).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::IndefinitePrecision,
        other => other,
    })?;
    let post_mean = post_cov.matrix() * (b_inv * a + p_inv * &prior.mean * exponent);

    let delta = a - &prior.mean;
    let g = b_inv * &delta;
    let quad = delta.dot(&g) - g.dot(&(post_cov.matrix() * &g));
    let log_integral = product.log_weight - 0.5 * b.log_det()
        - 0.5 * exponent * (d as f64 * LN_2PI + prior.cov.log_det())
        + 0.5 * post_cov.log_det()
        - 0.5 * quad;
    Ok(WeightedGaussian {
        log_weight: log_integral,
        component: GaussianDensity::new(post_mean, post_cov)?,
    })
}

/// Box truncation applied when the prior is uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Mass of the untruncated Gaussian inside the box.
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    /// `N(μ_post, Σ_post)`; for a uniform prior this is the untruncated
    /// product `N(a, B)`.
    pub density: GaussianDensity,
    pub product: WeightedGaussian,
    /// Number of observations (factors + 1).
    pub n: usize,
    /// `log ∫ ∏ φ̂ᵢ(θ) π(θ)^{2−n} dθ`.
    pub log_integral: f64,
    pub truncation: Option<Truncation>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn logpdf(&self, theta: &ParamVec) -> Result<f64> {
        let lp = self.density.logpdf(theta)?;
        Ok(match &self.truncation {
            None => lp,
            Some(t) => {
                if inside(theta.as_slice(), &t.lower, &t.upper) {
                    lp - t.mass.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        })
    }
}

fn inside(theta: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    theta
        .iter()
        .zip(lower.iter().zip(upper))
        .all(|(t, (l, u))| t >= l && t <= u)
}

/// Mass of `g` inside the box: exact in one dimension, seeded Monte Carlo
/// otherwise.
fn box_mass(g: &GaussianDensity, lower: &[f64], upper: &[f64]) -> f64 {
    if g.dim() == 1 {
        let sd = g.cov.matrix()[(0, 0)].sqrt();
        let mu = g.mean[0];
        return normal_cdf((upper[0] - mu) / sd) - normal_cdf((lower[0] - mu) / sd);
    }
    let hits = (0..TRUNCATION_MC_DRAWS)
        .filter(|j| {
            let mut r = rng::stream(0, domain::POSTERIOR_SAMPLES, *j);
            let x = draw(g, &mut r);
            inside(x.as_slice(), lower, upper)
        })
        .count();
    hits as f64 / TRUNCATION_MC_DRAWS as f64
}

fn draw<R: rand::Rng + ?Sized>(g: &GaussianDensity, rng: &mut R) -> ParamVec {
    let z = DVector::from_fn(g.dim(), |_, _| StandardNormal.sample(rng));
    &g.mean + g.cov.cholesky_lower() * z
}

/// Posterior from Gaussian factors: exact for a Gaussian prior, a truncated
/// product for a uniform box (where `π^{2−n}` is constant).
pub fn assemble_gaussian_posterior(
    factors: &[GaussianFactor],
    prior: &PriorSpec,
) -> Result<GaussianPosterior> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("no factors to assemble".into()));
    }
    if prior.dim() != factors[0].density.dim() {
        return Err(Error::DimensionMismatch {
            expected: factors[0].density.dim(),
            got: prior.dim(),
        });
    }
    let densities: Vec<GaussianDensity> = factors.iter().map(|f| f.density.clone()).collect();
    let product = gaussian_product(&densities).map_err(|e| match e {
        Error::SingularFactor { factor } => Error::SingularFactor {
            factor: factors[factor.min(factors.len() - 1)].factor_index,
        },
        other => other,
    })?;
    let n = factors.len() + 1;
    let exponent = 2.0 - n as f64;
    match prior {
        PriorSpec::Gaussian { .. } => {
            let pg = prior.as_gaussian().ok_or(Error::NotPositiveDefinite)?;
            let post = prior_correct(&product, &pg, exponent)?;
            Ok(GaussianPosterior {
                density: post.component,
                log_integral: post.log_weight,
                product,
                n,
                truncation: None,
            })
        }
        PriorSpec::UniformBox { lower, upper } => {
            let mass = box_mass(&product.component, lower, upper);
            if !(mass > 0.0) {
                return Err(Error::MassEscaped);
            }
            if mass < 0.99 {
                log::warn!("uniform prior box holds only {mass:.4} of the Gaussian product");
            }
            let log_prior = prior.log_density(lower);
            Ok(GaussianPosterior {
                density: product.component.clone(),
                log_integral: product.log_weight + exponent * log_prior + mass.ln(),
                product,
                n,
                truncation: Some(Truncation {
                    lower: lower.clone(),
                    upper: upper.clone(),
                    mass,
                }),
            })
        }
    }
}

/// `Σ log ĉᵢ + log ∫ ∏ φ̂ᵢ(θ) π(θ)^{2−n} dθ`.
pub fn log_marginal_gaussian(
    factors: &[GaussianFactor],
    prior: &PriorSpec,
    ci_logs: &[f64],
) -> Result<f64> {
    if ci_logs.len() != factors.len() {
        return Err(Error::DimensionMismatch {
            expected: factors.len(),
            got: ci_logs.len(),
        });
    }
    let gp = assemble_gaussian_posterior(factors, prior)?;
    Ok(ci_logs.iter().sum::<f64>() + gp.log_integral)
}

/// IID posterior draws; draw `j` uses its own keyed stream.
pub fn sample_gaussian_posterior(
    gp: &GaussianPosterior,
    count: usize,
    seed: u64,
) -> Result<Vec<ParamVec>> {
    if let Some(t) = &gp.truncation {
        if t.mass < MIN_TRUNCATION_MASS {
            return Err(Error::InvalidArgument(format!(
                "truncated posterior acceptance {:e} is below {MIN_TRUNCATION_MASS:e}",
                t.mass
            )));
        }
    }
    let draws = crate::par::map_range(count, |j| {
        let mut r = rng::stream(seed, domain::POSTERIOR_SAMPLES, j as u64);
        loop {
            let x = draw(&gp.density, &mut r);
            match &gp.truncation {
                Some(t) if !inside(x.as_slice(), &t.lower, &t.upper) => continue,
                _ => return x,
            }
        }
    });
    Ok(draws)
}

/// Per-factor entry of the posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSummary {
    pub factor_index: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub log_ci: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub backend: String,
    pub mu_post: Vec<f64>,
    pub sigma_post: Vec<Vec<f64>>,
    pub log_marginal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_mass: Option<f64>,
    pub per_factor: Vec<FactorSummary>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub fn factor_summaries(
    factors: &[GaussianFactor],
    sets: &[FactorSampleSet],
    ci_logs: &[f64],
) -> Vec<FactorSummary> {
    factors
        .iter()
        .zip(sets)
        .zip(ci_logs)
        .map(|((f, s), c)| FactorSummary {
            factor_index: f.factor_index,
            mean: f.density.mean.iter().copied().collect(),
            cov: matrix_rows(f.density.cov.matrix()),
            log_ci: *c,
            acceptance: s.acceptance_rate(),
        })
        .collect()
}
