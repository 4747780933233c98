//! Ground truth for validation: exact-likelihood posteriors on a lattice,
//! whole-dataset exact-match sampling, quadrature, and divergences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{default_points, resolve_lattice, LatticePosterior, LatticeSpec};
use crate::math::Lattice;
use crate::models::{Dataset, ModelSpec, Observation, PriorSpec, SimError, CIR_ORACLE_TOL};
use crate::rng::{self, domain};

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub model_id: String,
    pub posterior: LatticePosterior,
    pub log_marginal_true: f64,
}

/// JSON record written next to an oracle lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub model_id: String,
    pub log_marginal_true: f64,
    pub include_first: bool,
    pub lattice: Lattice,
    pub mean: Vec<f64>,
}

/// `Σᵢ log π(xᵢ | xᵢ₋₁, θ)` over `i = 2..n`, plus `log π(x₁ | θ)` when
/// `include_first` (IID models only).
pub fn exact_log_likelihood(
    model: &ModelSpec,
    data: &Dataset,
    theta: &[f64],
    include_first: bool,
) -> Result<f64> {
    let obs = &data.observations;
    let mut total = 0.0;
    if include_first {
        total += model.exact_transition_logpdf_tol(theta, &obs[0], &obs[0], CIR_ORACLE_TOL)?;
    }
    for w in obs.windows(2) {
        total += model.exact_transition_logpdf_tol(theta, &w[0], &w[1], CIR_ORACLE_TOL)?;
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(total)
}

fn check_oracle_inputs(
    model: &ModelSpec,
    prior: &PriorSpec,
    data: &Dataset,
    include_first: bool,
) -> Result<()> {
    if !model.has_exact_likelihood() {
        return Err(Error::Unsupported(format!(
            "model {} has no exact likelihood",
            model.id()
        )));
    }
    if include_first && !model.is_iid() {
        return Err(Error::Unsupported(
            "the first observation of a Markov model is a fixed initial state".into(),
        ));
    }
    if prior.dim() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: prior.dim(),
        });
    }
    data.validate()?;
    // surface state errors (non-integer counts and the like) once, up front
    let probe: Vec<f64> = prior.bounds(0.0).0;
    exact_log_likelihood(model, data, &probe, include_first)?;
    Ok(())
}

/// Exact posterior on a given lattice.
pub fn exact_posterior_lattice(
    model: &ModelSpec,
    prior: &PriorSpec,
    data: &Dataset,
    lattice: &Lattice,
    include_first: bool,
) -> Result<OracleResult> {
    check_oracle_inputs(model, prior, data, include_first)?;
    if lattice.dim() != model.param_dim() {
        return Err(Error::LatticeMismatch);
    }
    let posterior = LatticePosterior::tabulate(lattice.clone(), |t| {
        log_joint(model, prior, data, t, include_first)
    })?;
    Ok(OracleResult {
        model_id: model.id().to_string(),
        log_marginal_true: posterior.log_normaliser,
        posterior,
    })
}

fn log_joint(
    model: &ModelSpec,
    prior: &PriorSpec,
    data: &Dataset,
    t: &[f64],
    include_first: bool,
) -> f64 {
    let lp = prior.log_density(t);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + exact_log_likelihood(model, data, t, include_first).unwrap_or(f64::NEG_INFINITY)
}

/// Exact posterior on a lattice placed by `spec` (default: the prior's
/// ±8 sd region or box, focused on the posterior, at twice the inference
/// resolution).
pub fn exact_posterior_auto(
    model: &ModelSpec,
    prior: &PriorSpec,
    data: &Dataset,
    spec: &LatticeSpec,
    include_first: bool,
) -> Result<OracleResult> {
    check_oracle_inputs(model, prior, data, include_first)?;
    let f = |lat: &Lattice| lat.evaluate(|t| log_joint(model, prior, data, t, include_first));
    let mut spec = spec.clone();
    if spec.points.is_none() {
        spec.points = Some(vec![2 * default_points(prior.dim())]);
    }
    let lattice = resolve_lattice(&spec, prior.bounds(8.0), prior, &f)?;
    exact_posterior_lattice(model, prior, data, &lattice, include_first)
}

#[derive(Debug, Clone)]
pub struct EbcResult {
    pub dim: usize,
    /// Row-major accepted parameters.
    pub samples: Vec<f64>,
    pub total_draws: u64,
}

/// Whole-dataset exact-match rejection sampling: accept θ* only if a fresh
/// simulation reproduces every observation. For IID models all
/// observations are simulated; for Markov models the first is the initial
/// state. Simulation stops at the first mismatch.
pub fn ebc_sample(
    model: &ModelSpec,
    prior: &PriorSpec,
    observations: &[Observation],
    m: usize,
    cap: u64,
    seed: u64,
) -> Result<EbcResult> {
    if !model.discrete() {
        return Err(Error::Unsupported("exact matching needs discrete data".into()));
    }
    if observations.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    if !model.is_iid() && observations.len() < 2 {
        return Err(Error::InvalidArgument(
            "a Markov dataset needs at least two observations".into(),
        ));
    }
    if observations.iter().any(|o| o.state.len() != model.obs_dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.obs_dim(),
            got: observations[0].state.len(),
        });
    }
    let d = model.param_dim();
    let base = rng::stream(seed, domain::EBC, 0);
    let mut theta = vec![0.0; d];
    let mut sim = vec![0.0; model.obs_dim()];
    let mut samples = Vec::with_capacity(m * d);
    let mut accepted = 0;
    let mut draws = 0u64;
    let dummy = Observation {
        time: f64::NEG_INFINITY,
        state: vec![0.0; model.obs_dim()],
    };
    while accepted < m {
        if draws == cap {
            return Err(Error::EbcCapExhausted {
                cap,
                accepted,
                wanted: m,
            });
        }
        let mut r = base.clone();
        r.set_stream(draws);
        draws += 1;
        prior.sample_into(&mut r, &mut theta);
        let mut matched = true;
        let targets: Box<dyn Iterator<Item = (&Observation, &Observation)>> = if model.is_iid() {
            Box::new(observations.iter().map(|o| (&dummy, o)))
        } else {
            Box::new(observations.windows(2).map(|w| (&w[0], &w[1])))
        };
        for (from, to) in targets {
            match model.simulate_transition_into(&theta, from, to.time, &mut r, &mut sim) {
                Ok(()) => {}
                Err(SimError::InvalidState(s)) => return Err(Error::Simulation(s)),
                Err(_) => {
                    matched = false;
                    break;
                }
            }
            if sim != to.state {
                matched = false;
                break;
            }
        }
        if matched {
            samples.extend_from_slice(&theta);
            accepted += 1;
        }
    }
    Ok(EbcResult {
        dim: d,
        samples,
        total_draws: draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub tv: f64,
    pub kl: f64,
}

/// Total variation and `KL(p ‖ q)` between two posteriors on one lattice.
pub fn divergence(p: &LatticePosterior, q: &LatticePosterior) -> Result<Divergence> {
    if p.lattice != q.lattice {
        return Err(Error::LatticeMismatch);
    }
    let vol = p.lattice.cell_volume();
    let mut tv = 0.0;
    let mut kl = 0.0;
    for (lp, lq) in p.log_density.iter().zip(&q.log_density) {
        let (a, b) = (lp.exp(), lq.exp());
        tv += (a - b).abs();
        if a > 0.0 {
            kl += a * (lp - lq);
        }
    }
    Ok(Divergence {
        tv: 0.5 * tv * vol,
        kl: kl * vol,
    })
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // split first so narrow peaks are not stepped over
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            step(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// `∫ π(xᵢ | xᵢ₋₁, θ) π(θ) dθ` for a one-parameter model, by quadrature
/// over `[lo, hi]`.
pub fn factor_evidence(
    model: &ModelSpec,
    prior: &PriorSpec,
    from: &Observation,
    to: &Observation,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if model.param_dim() != 1 {
        return Err(Error::Unsupported("factor_evidence is one-dimensional".into()));
    }
    model.exact_transition_logpdf(&[0.5 * (lo + hi)], from, to)?;
    Ok(integrate(
        |t| {
            let l = model
                .exact_transition_logpdf_tol(&[t], from, to, CIR_ORACLE_TOL)
                .unwrap_or(f64::NEG_INFINITY);
            (l + prior.log_density(&[t])).exp()
        },
        lo,
        hi,
        1e-14,
    ))
}

/// Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let c = cdf(*x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// One-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    let s = (n as f64).sqrt();
    1.628 / (s + 0.12 + 0.11 / s)
}
