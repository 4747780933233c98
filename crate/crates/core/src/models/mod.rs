//! Markov models: one-step simulators, priors, and exact transition
//! densities where they exist.

pub mod binomial;
pub mod cir;
pub mod dataset;
pub mod inar;
pub mod lotka_volterra;
pub mod prior;
pub mod transform;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ParamVec;
use crate::rng::{self, Stream};

pub use dataset::{Dataset, DatasetMeta, Observation};
pub use prior::PriorSpec;
pub use transform::Transform;

/// Strict tolerance for the CIR series when computing ground truth.
pub const CIR_ORACLE_TOL: f64 = 1e-18;
/// Tolerance for the CIR series in ordinary use.
pub const CIR_DEFAULT_TOL: f64 = 1e-16;

/// Failure of a single simulated transition.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("population exceeded cap {cap}")]
    PopulationCap { cap: u64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        Error::Simulation(e.to_string())
    }
}

/// The concrete model families and their fixed (non-inferred) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    /// IID Binomial(trials, p); θ = logit p.
    Binomial { trials: u64 },
    /// CIR diffusion with known `a`, `sigma`; θ = log b.
    Cir { a: f64, sigma: f64 },
    /// INAR(1) with Poisson innovations; θ = (logit α, log λ).
    Inar1,
    /// Stochastic Lotka–Volterra; θ = (log r₁, log r₂, log r₃).
    LotkaVolterra {
        #[serde(default = "default_cap")]
        population_cap: u64,
    },
}

fn default_cap() -> u64 {
    lotka_volterra::DEFAULT_POPULATION_CAP
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    kind: ModelKind,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Result<Self> {
        match &kind {
            ModelKind::Binomial { trials } if *trials == 0 => {
                return Err(Error::InvalidArgument("binomial needs trials > 0".into()))
            }
            ModelKind::Cir { a, sigma } if !(*a > 0.0 && *sigma > 0.0) => {
                return Err(Error::InvalidArgument("CIR needs a > 0 and sigma > 0".into()))
            }
            ModelKind::LotkaVolterra { population_cap } if *population_cap == 0 => {
                return Err(Error::InvalidArgument("LV population cap must be positive".into()))
            }
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn binomial(trials: u64) -> Self {
        Self::new(ModelKind::Binomial { trials }).expect("valid binomial")
    }

    pub fn cir(a: f64, sigma: f64) -> Self {
        Self::new(ModelKind::Cir { a, sigma }).expect("valid CIR")
    }

    pub fn inar1() -> Self {
        Self { kind: ModelKind::Inar1 }
    }

    pub fn lotka_volterra() -> Self {
        Self {
            kind: ModelKind::LotkaVolterra {
                population_cap: lotka_volterra::DEFAULT_POPULATION_CAP,
            },
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            ModelKind::Binomial { .. } => "binomial",
            ModelKind::Cir { .. } => "cir",
            ModelKind::Inar1 => "inar1",
            ModelKind::LotkaVolterra { .. } => "lotka_volterra",
        }
    }

    pub fn transforms(&self) -> &'static [Transform] {
        match self.kind {
            ModelKind::Binomial { .. } => &[Transform::Logit],
            ModelKind::Cir { .. } => &[Transform::Log],
            ModelKind::Inar1 => &[Transform::Logit, Transform::Log],
            ModelKind::LotkaVolterra { .. } => &[Transform::Log, Transform::Log, Transform::Log],
        }
    }

    pub fn param_dim(&self) -> usize {
        self.transforms().len()
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            ModelKind::LotkaVolterra { .. } => 2,
            _ => 1,
        }
    }

    pub fn discrete(&self) -> bool {
        !matches!(self.kind, ModelKind::Cir { .. })
    }

    /// Observations are independent of the previous state.
    pub fn is_iid(&self) -> bool {
        matches!(self.kind, ModelKind::Binomial { .. })
    }

    pub fn has_exact_likelihood(&self) -> bool {
        !matches!(self.kind, ModelKind::LotkaVolterra { .. })
    }

    pub fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        self.transforms()
            .iter()
            .zip(theta)
            .map(|(t, v)| t.inverse(*v))
            .collect()
    }

    pub fn to_inference(&self, natural: &[f64]) -> ParamVec {
        ParamVec::from_iterator(
            natural.len(),
            self.transforms().iter().zip(natural).map(|(t, v)| t.forward(*v)),
        )
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok(())
    }

    /// One exact draw of the state at `to_time` given `from`, written into
    /// `out` (length = observation dimension).
    pub fn simulate_transition_into<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        from: &Observation,
        to_time: f64,
        rng: &mut R,
        out: &mut [f64],
    ) -> std::result::Result<(), SimError> {
        let dt = to_time - from.time;
        if !self.is_iid() && !(dt > 0.0) {
            return Err(SimError::InvalidState(format!(
                "target time {to_time} not after {}",
                from.time
            )));
        }
        match self.kind {
            ModelKind::Binomial { trials } => {
                out[0] = binomial::simulate(trials, transform::logistic(theta[0]), rng)?;
            }
            ModelKind::Cir { a, sigma } => {
                out[0] = cir::simulate(a, theta[0].exp(), sigma, from.state[0], dt, rng)?;
            }
            ModelKind::Inar1 => {
                let prev = as_count(from.state[0]).map_err(|e| SimError::InvalidState(e.to_string()))?;
                out[0] = inar::simulate(transform::logistic(theta[0]), theta[1].exp(), prev, rng)?;
            }
            ModelKind::LotkaVolterra { population_cap } => {
                let count = |v: f64| {
                    as_count(v).map_err(|e| SimError::InvalidState(e.to_string()))
                };
                let mut pops = lotka_volterra::Populations {
                    prey: count(from.state[0])?,
                    predators: count(from.state[1])?,
                };
                let rates = [theta[0].exp(), theta[1].exp(), theta[2].exp()];
                lotka_volterra::simulate(rates, &mut pops, dt, population_cap, rng)?;
                out[0] = pops.prey as f64;
                out[1] = pops.predators as f64;
            }
        }
        Ok(())
    }

    pub fn simulate_transition<R: Rng + ?Sized>(
        &self,
        theta: &ParamVec,
        from: &Observation,
        to_time: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta.as_slice())?;
        if from.state.len() != self.obs_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim(),
                got: from.state.len(),
            });
        }
        let mut out = vec![0.0; self.obs_dim()];
        self.simulate_transition_into(theta.as_slice(), from, to_time, rng, &mut out)?;
        Ok(out)
    }

    /// Exact log transition density (or mass) of `to` given `from`.
    pub fn exact_transition_logpdf(
        &self,
        theta: &[f64],
        from: &Observation,
        to: &Observation,
    ) -> Result<f64> {
        self.exact_transition_logpdf_tol(theta, from, to, CIR_DEFAULT_TOL)
    }

    pub fn exact_transition_logpdf_tol(
        &self,
        theta: &[f64],
        from: &Observation,
        to: &Observation,
        cir_tol: f64,
    ) -> Result<f64> {
        self.check_theta(theta)?;
        match self.kind {
            ModelKind::Binomial { trials } => {
                let x = as_count(to.state[0])?;
                if x > trials {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(binomial::log_pmf(trials, theta[0], x))
            }
            ModelKind::Cir { a, sigma } => Ok(cir::log_density(
                a,
                theta[0].exp(),
                sigma,
                from.state[0],
                to.state[0],
                to.time - from.time,
                cir_tol,
            )),
            ModelKind::Inar1 => Ok(inar::log_pmf(
                theta[0],
                theta[1],
                as_count(from.state[0])?,
                as_count(to.state[0])?,
            )),
            ModelKind::LotkaVolterra { .. } => Err(Error::Unsupported(
                "Lotka-Volterra has no tractable transition density".into(),
            )),
        }
    }

    /// Simulates `n` observations spaced `dt` apart. For Markov models the
    /// first observation is `x0` at time 0; for IID models it is a fresh
    /// draw. Transition `i` uses its own keyed stream.
    pub fn simulate_dataset(
        &self,
        theta_true: &ParamVec,
        n: usize,
        dt: f64,
        x0: Option<&[f64]>,
        seed: u64,
    ) -> Result<Dataset> {
        self.check_theta(theta_true.as_slice())?;
        if n < 2 {
            return Err(Error::InvalidArgument("a dataset needs n >= 2 observations".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let u = self.obs_dim();
        let mut obs = Vec::with_capacity(n);
        let first = if self.is_iid() {
            let dummy = Observation {
                time: -dt,
                state: vec![0.0; u],
            };
            let mut r: Stream = rng::stream(seed, rng::domain::DATASET, 0);
            self.simulate_transition(theta_true, &dummy, 0.0, &mut r)?
        } else {
            let x0 = x0.ok_or_else(|| {
                Error::InvalidArgument(format!("model {} needs an initial state x0", self.id()))
            })?;
            if x0.len() != u {
                return Err(Error::DimensionMismatch {
                    expected: u,
                    got: x0.len(),
                });
            }
            x0.to_vec()
        };
        obs.push(Observation {
            time: 0.0,
            state: first,
        });
        for i in 1..n {
            let mut r: Stream = rng::stream(seed, rng::domain::DATASET, i as u64);
            let t = i as f64 * dt;
            let next = self.simulate_transition(theta_true, &obs[i - 1], t, &mut r)?;
            obs.push(Observation { time: t, state: next });
        }
        Dataset::new(self.id(), self.discrete(), obs)
    }
}

/// A state entry that must be a nonnegative integer.
pub fn as_count(v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 {
        Ok(v as u64)
    } else {
        Err(Error::InvalidArgument(format!(
            "discrete state must be a nonnegative integer, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn transform_round_trip_all_models() {
        let cases: Vec<(ModelSpec, Vec<f64>)> = vec![
            (ModelSpec::binomial(100), vec![0.6]),
            (ModelSpec::cir(0.5, 0.15), vec![1.0]),
            (ModelSpec::inar1(), vec![0.7, 1.0]),
            (ModelSpec::lotka_volterra(), vec![1.0, 0.005, 0.6]),
        ];
        for (m, nat) in cases {
            let back = m.to_natural(m.to_inference(&nat).as_slice());
            for (a, b) in nat.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12, "{}: {a} vs {b}", m.id());
            }
        }
    }

    #[test]
    fn binomial_dataset_moments() {
        let m = ModelSpec::binomial(100);
        let theta = m.to_inference(&[0.6]);
        let n = 400;
        let data = m.simulate_dataset(&theta, n, 1.0, None, 11).unwrap();
        let mean = data.observations.iter().map(|o| o.state[0]).sum::<f64>() / n as f64;
        let se = (100.0 * 0.6 * 0.4 / n as f64).sqrt();
        assert!((mean - 60.0).abs() < 3.0 * se);
    }

    #[test]
    fn reference_designs_simulate() {
        let cir = ModelSpec::cir(0.5, 0.15);
        let d = cir
            .simulate_dataset(&cir.to_inference(&[1.0]), 10, 0.5, Some(&[1.0]), 3)
            .unwrap();
        assert_eq!(d.observations.len(), 10);
        assert!((d.observations[9].time - 4.5).abs() < 1e-12);
        assert!(d.observations.iter().all(|o| o.state[0] > 0.0));

        let lv = ModelSpec::lotka_volterra();
        let d = lv
            .simulate_dataset(&lv.to_inference(&[1.0, 0.005, 0.6]), 31, 1.0, Some(&[50.0, 100.0]), 3)
            .unwrap();
        assert_eq!(d.observations.len(), 31);
        for o in &d.observations {
            assert!(o.state.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        }
    }

    #[test]
    fn discrete_outputs_are_counts() {
        let m = ModelSpec::inar1();
        let theta = dvector![0.8473, 0.0];
        let from = Observation {
            time: 0.0,
            state: vec![10.0],
        };
        for i in 0..500 {
            let x = m
                .simulate_transition(&theta, &from, 1.0, &mut rng::stream(1, 0, i))
                .unwrap();
            assert!(x[0] >= 0.0 && x[0].fract() == 0.0);
        }
    }

    #[test]
    fn lv_has_no_exact_density() {
        let m = ModelSpec::lotka_volterra();
        let o = Observation {
            time: 0.0,
            state: vec![1.0, 1.0],
        };
        let p = Observation {
            time: 1.0,
            state: vec![1.0, 1.0],
        };
        assert!(matches!(
            m.exact_transition_logpdf(&[0.0, 0.0, 0.0], &o, &p),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn non_integer_state_rejected() {
        let m = ModelSpec::inar1();
        let o = Observation {
            time: 0.0,
            state: vec![1.5],
        };
        let p = Observation {
            time: 1.0,
            state: vec![1.0],
        };
        assert!(m.exact_transition_logpdf(&[0.0, 0.0], &o, &p).is_err());
    }

    #[test]
    fn short_dataset_rejected() {
        let m = ModelSpec::binomial(10);
        assert!(m.simulate_dataset(&dvector![0.0], 1, 1.0, None, 0).is_err());
    }
}
