//! Per-factor ABC rejection sampling.
//!
//! Factor `i ∈ 2..=n` targets `φᵢ(θ) ∝ π(xᵢ | xᵢ₋₁, θ) π(θ)`: draw θ* from the
//! prior, simulate one transition from the observed `xᵢ₋₁`, and keep θ* if
//! the simulated state lands in the ε-ball around `xᵢ`. Draw `j` of factor
//! `i` always uses `rng::stream(seed, i, j)`, so the accepted set is the
//! same however the work is split.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ball_volume, LpBallSpec, ParamVec};
use crate::models::dataset::format_real;
use crate::models::{Dataset, ModelSpec, Observation, PriorSpec, SimError};
use crate::par;
use crate::rng;

pub const DEFAULT_MAX_DRAWS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    /// Accepted draws wanted per factor.
    pub m: usize,
    pub ball: LpBallSpec,
    pub max_draws_per_factor: u64,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl AbcConfig {
    pub fn new(m: usize, ball: LpBallSpec, seed: u64) -> Self {
        Self {
            m,
            ball,
            max_draws_per_factor: DEFAULT_MAX_DRAWS,
            seed,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ball.validate()?;
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("m must be >= 2, got {}", self.m)));
        }
        if self.max_draws_per_factor < self.m as u64 {
            return Err(Error::InvalidArgument(format!(
                "max_draws_per_factor ({}) is below m ({})",
                self.max_draws_per_factor, self.m
            )));
        }
        Ok(())
    }
}

/// The `m` accepted draws for one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSampleSet {
    pub factor_index: usize,
    pub dim: usize,
    /// Row-major `m × d`.
    pub samples: Vec<f64>,
    /// `Mᵢ`: draws made to reach `m` acceptances.
    pub total_draws: u64,
    /// Draws whose simulation was abandoned (population cap, undefined law).
    pub failed_draws: u64,
    pub from: Observation,
    pub to: Observation,
    pub elapsed_secs: f64,
}

impl FactorSampleSet {
    pub fn m(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn sample_vec(&self, j: usize) -> ParamVec {
        ParamVec::from_column_slice(self.sample(j))
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.m() as f64 / self.total_draws as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("theta_{k}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Rebuilds a sample set from its CSV and the run record.
    pub fn load_csv(path: &Path, record: &FactorRecord, data: &Dataset) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(File::open(path)?);
        let dim = rdr.headers()?.len();
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for v in rec.iter() {
                samples.push(
                    v.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{}: {v:?}: {e}", path.display())))?,
                );
            }
        }
        if samples.len() != record.accepted * dim {
            return Err(Error::Parse(format!(
                "{}: expected {} rows, found {}",
                path.display(),
                record.accepted,
                samples.len() / dim.max(1)
            )));
        }
        if record.factor_index < 2 || record.factor_index > data.len() {
            return Err(Error::InvalidArgument(format!(
                "factor {} is outside the dataset",
                record.factor_index
            )));
        }
        let (from, to) = data.pair(record.factor_index);
        Ok(Self {
            factor_index: record.factor_index,
            dim,
            samples,
            total_draws: record.total_draws,
            failed_draws: record.failed_draws,
            from: from.clone(),
            to: to.clone(),
            elapsed_secs: 0.0,
        })
    }
}

/// `log ĉᵢ = log m − log V − log Mᵢ`.
pub fn estimate_ci(fs: &FactorSampleSet, ball: &LpBallSpec) -> Result<f64> {
    let v = ball_volume(ball)?;
    Ok((fs.m() as f64).ln() - v.ln() - (fs.total_draws as f64).ln())
}

fn check_inputs(model: &ModelSpec, prior: &PriorSpec, cfg: &AbcConfig) -> Result<()> {
    cfg.validate()?;
    prior.validate()?;
    if prior.dim() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: prior.dim(),
        });
    }
    if cfg.ball.dim_u != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.obs_dim(),
            got: cfg.ball.dim_u,
        });
    }
    if cfg.ball.discrete != model.discrete() {
        return Err(Error::InvalidArgument(format!(
            "ball discreteness ({}) does not match model {}",
            cfg.ball.discrete,
            model.id()
        )));
    }
    Ok(())
}

const FIRST_CHUNK: u64 = 256;
const MAX_CHUNK: u64 = 1 << 16;
/// Room for every model's parameter and state vectors.
const BUF: usize = 4;

enum Draw {
    Accepted(Vec<f64>),
    Rejected,
    Failed,
    Invalid(String),
}

/// Rejection-samples one factor until `cfg.m` acceptances.
pub fn sample_factor(
    model: &ModelSpec,
    prior: &PriorSpec,
    from: &Observation,
    to: &Observation,
    cfg: &AbcConfig,
    factor_index: usize,
) -> Result<FactorSampleSet> {
    check_inputs(model, prior, cfg)?;
    if from.state.len() != model.obs_dim() || to.state.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.obs_dim(),
            got: to.state.len(),
        });
    }
    let start = Instant::now();
    let d = model.param_dim();
    let base = rng::stream(cfg.seed, factor_index as u64, 0);
    let mut samples = Vec::with_capacity(cfg.m * d);
    let mut accepted = 0usize;
    let mut failed = 0u64;
    let mut draws = 0u64;
    let mut chunk = FIRST_CHUNK;
    // Draws are evaluated in parallel chunks and scanned in index order, so
    // the result is the sequential one whatever the chunking or pool size.
    'outer: while accepted < cfg.m {
        if draws == cfg.max_draws_per_factor {
            return Err(Error::DrawCapExhausted {
                factor: factor_index,
                cap: cfg.max_draws_per_factor,
                accepted,
                wanted: cfg.m,
            });
        }
        let len = chunk.min(cfg.max_draws_per_factor - draws);
        let first = draws;
        let outcomes = par::map_range(len as usize, |k| {
            let mut r = base.clone();
            r.set_stream(first + k as u64);
            let (mut tb, mut sb) = ([0.0; BUF], [0.0; BUF]);
            let (theta, sim) = (&mut tb[..d], &mut sb[..model.obs_dim()]);
            prior.sample_into(&mut r, theta);
            match model.simulate_transition_into(theta, from, to.time, &mut r, sim) {
                Ok(()) if cfg.ball.accepts(sim, &to.state) => Draw::Accepted(theta.to_vec()),
                Ok(()) => Draw::Rejected,
                Err(SimError::PopulationCap { .. }) | Err(SimError::InvalidParameter(_)) => Draw::Failed,
                Err(e @ SimError::InvalidState(_)) => Draw::Invalid(e.to_string()),
            }
        });
        for o in outcomes {
            draws += 1;
            match o {
                Draw::Accepted(theta) => {
                    samples.extend_from_slice(&theta);
                    accepted += 1;
                    if accepted == cfg.m {
                        break 'outer;
                    }
                }
                Draw::Rejected => {}
                Draw::Failed => failed += 1,
                Draw::Invalid(e) => return Err(Error::Simulation(format!("factor {factor_index}: {e}"))),
            }
        }
        chunk = (chunk * 2).min(MAX_CHUNK);
    }
    if failed > 0 {
        log::debug!("factor {factor_index}: {failed} draws abandoned by the simulator");
    }
    Ok(FactorSampleSet {
        factor_index,
        dim: d,
        samples,
        total_draws: draws,
        failed_draws: failed,
        from: from.clone(),
        to: to.clone(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Samples factors `2..=n` concurrently. Every failing factor is reported.
pub fn sample_all_factors(
    model: &ModelSpec,
    prior: &PriorSpec,
    data: &Dataset,
    cfg: &AbcConfig,
) -> Result<Vec<FactorSampleSet>> {
    data.validate()?;
    check_inputs(model, prior, cfg)?;
    if data.state_dim() != model.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.obs_dim(),
            got: data.state_dim(),
        });
    }
    let n = data.len();
    let done = AtomicUsize::new(0);
    let results = par::with_workers(cfg.workers, || {
        par::map_range(n - 1, |k| {
            let i = k + 2;
            let (from, to) = data.pair(i);
            let out = sample_factor(model, prior, from, to, cfg, i);
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Ok(fs) = &out {
                log::info!(
                    "factor {i} done ({finished}/{}): {} draws, acceptance {:.4}",
                    n - 1,
                    fs.total_draws,
                    fs.acceptance_rate()
                );
            }
            out
        })
    });
    let mut sets = Vec::with_capacity(n - 1);
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(sets)
    } else {
        Err(Error::Factors(errors))
    }
}

/// One line of the run-level record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub factor_index: usize,
    pub accepted: usize,
    pub total_draws: u64,
    pub failed_draws: u64,
    pub acceptance_rate: f64,
    pub log_ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub factors: Vec<FactorRecord>,
    pub mean_acceptance: f64,
    pub total_simulations: u64,
}

impl RunReport {
    pub fn new(sets: &[FactorSampleSet], cfg: &AbcConfig) -> Result<Self> {
        let factors = sets
            .iter()
            .map(|fs| {
                Ok(FactorRecord {
                    factor_index: fs.factor_index,
                    accepted: fs.m(),
                    total_draws: fs.total_draws,
                    failed_draws: fs.failed_draws,
                    acceptance_rate: fs.acceptance_rate(),
                    log_ci: estimate_ci(fs, &cfg.ball)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_acceptance =
            factors.iter().map(|f| f.acceptance_rate).sum::<f64>() / factors.len().max(1) as f64;
        Ok(Self {
            seed: cfg.seed,
            total_simulations: factors.iter().map(|f| f.total_draws).sum(),
            factors,
            mean_acceptance,
        })
    }

    pub fn log_ci(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.log_ci).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::NormOrder;

    fn binomial_setup() -> (ModelSpec, PriorSpec, Dataset) {
        let model = ModelSpec::binomial(100);
        let prior = PriorSpec::gaussian(vec![0.0], vec![3.0]).unwrap();
        let data = model
            .simulate_dataset(&ParamVec::from_element(1, 0.405), 4, 1.0, None, 3)
            .unwrap();
        (model, prior, data)
    }

    fn exact_ball() -> LpBallSpec {
        LpBallSpec::new(NormOrder::Infinity, 0.0, 1, true).unwrap()
    }

    #[test]
    fn exact_match_predicate_holds() {
        let (model, prior, data) = binomial_setup();
        let cfg = AbcConfig::new(50, exact_ball(), 11);
        let (from, to) = data.pair(2);
        let fs = sample_factor(&model, &prior, from, to, &cfg, 2).unwrap();
        assert_eq!(fs.m(), 50);
        assert!(fs.total_draws >= 50);
        // replaying each stream reproduces an exact match for accepted draws
        let base = rng::stream(11, 2, 0);
        let mut kept = Vec::new();
        for j in 0..fs.total_draws {
            let mut r = base.clone();
            r.set_stream(j);
            let th = prior.sample(&mut r);
            let x = model.simulate_transition(&th, from, to.time, &mut r).unwrap();
            if x == to.state {
                kept.extend_from_slice(th.as_slice());
            }
        }
        assert_eq!(kept, fs.samples);
    }

    #[test]
    fn estimate_ci_arithmetic() {
        let (_, _, data) = binomial_setup();
        let (from, to) = data.pair(2);
        let fs = FactorSampleSet {
            factor_index: 2,
            dim: 1,
            samples: vec![0.0; 10],
            total_draws: 100,
            failed_draws: 0,
            from: from.clone(),
            to: to.clone(),
            elapsed_secs: 0.0,
        };
        assert!((estimate_ci(&fs, &exact_ball()).unwrap() - 0.1f64.ln()).abs() < 1e-15);
        let cir_ball = LpBallSpec::new(NormOrder::Infinity, 0.01, 1, false).unwrap();
        let expect = (10.0f64 / (0.02 * 100.0)).ln();
        assert!((estimate_ci(&fs, &cir_ball).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn draw_cap_reports_partial_progress() {
        let (model, prior, data) = binomial_setup();
        let mut cfg = AbcConfig::new(1000, exact_ball(), 1);
        cfg.max_draws_per_factor = 1000;
        let (from, to) = data.pair(2);
        match sample_factor(&model, &prior, from, to, &cfg, 2) {
            Err(Error::DrawCapExhausted {
                factor: 2,
                cap: 1000,
                accepted,
                wanted: 1000,
            }) => assert!(accepted < 1000),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_factor_errors_are_aggregated() {
        let (model, prior, data) = binomial_setup();
        let mut cfg = AbcConfig::new(1000, exact_ball(), 1);
        cfg.max_draws_per_factor = 1000;
        match sample_all_factors(&model, &prior, &data, &cfg) {
            Err(Error::Factors(errs)) => assert_eq!(errs.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_observations_give_one_factor() {
        let (model, prior, data) = binomial_setup();
        let two = Dataset::new("binomial", true, data.observations[..2].to_vec()).unwrap();
        let cfg = AbcConfig::new(20, exact_ball(), 5);
        let all = sample_all_factors(&model, &prior, &two, &cfg).unwrap();
        assert_eq!(all.len(), 1);
        let (from, to) = two.pair(2);
        let one = sample_factor(&model, &prior, from, to, &cfg, 2).unwrap();
        assert_eq!(all[0].samples, one.samples);
        assert_eq!(all[0].total_draws, one.total_draws);
    }

    #[test]
    fn worker_count_does_not_change_samples() {
        let (model, prior, data) = binomial_setup();
        let mut cfg = AbcConfig::new(30, exact_ball(), 9);
        cfg.workers = Some(1);
        let a = sample_all_factors(&model, &prior, &data, &cfg).unwrap();
        cfg.workers = Some(3);
        let b = sample_all_factors(&model, &prior, &data, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.total_draws, y.total_draws);
        }
    }

    #[test]
    fn wider_ball_accepts_more_with_common_numbers() {
        let model = ModelSpec::cir(0.5, 0.15);
        let prior = PriorSpec::uniform_box(vec![-5.0], vec![2.0]).unwrap();
        let from = Observation {
            time: 0.0,
            state: vec![1.0],
        };
        let to = Observation {
            time: 0.5,
            state: vec![1.02],
        };
        let narrow = AbcConfig::new(100, LpBallSpec::new(NormOrder::Infinity, 0.01, 1, false).unwrap(), 4);
        let wide = AbcConfig::new(100, LpBallSpec::new(NormOrder::Infinity, 0.05, 1, false).unwrap(), 4);
        let a = sample_factor(&model, &prior, &from, &to, &narrow, 2).unwrap();
        let b = sample_factor(&model, &prior, &from, &to, &wide, 2).unwrap();
        // same streams: every draw accepted by the narrow ball is accepted by the wide one
        assert!(b.total_draws <= a.total_draws);
    }

    #[test]
    fn csv_round_trip() {
        let (model, prior, data) = binomial_setup();
        let cfg = AbcConfig::new(25, exact_ball(), 2);
        let sets = sample_all_factors(&model, &prior, &data, &cfg).unwrap();
        let report = RunReport::new(&sets, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (fs, rec) in sets.iter().zip(&report.factors) {
            let p = dir.path().join(format!("factor_{}.csv", fs.factor_index));
            fs.save_csv(&p).unwrap();
            let back = FactorSampleSet::load_csv(&p, rec, &data).unwrap();
            assert_eq!(back.samples, fs.samples);
            assert_eq!(back.total_draws, fs.total_draws);
            assert_eq!(back.from, fs.from);
        }
    }

    #[test]
    fn mismatched_ball_rejected() {
        let (model, prior, data) = binomial_setup();
        let ball = LpBallSpec::new(NormOrder::Infinity, 0.5, 1, false).unwrap();
        let cfg = AbcConfig::new(10, ball, 1);
        assert!(sample_all_factors(&model, &prior, &data, &cfg).is_err());
    }
}
