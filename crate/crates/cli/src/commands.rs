//! `simulate`, `infer`, `oracle` and `sweep-q`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use pwabc::abc::{sample_all_factors, FactorSampleSet, RunReport};
use pwabc::gaussian_estimator::{
    assemble_gaussian_posterior, factor_summaries, fit_gaussian_factor, matrix_rows,
    sample_gaussian_posterior, sample_moments, FactorSummary, GaussianFactor, GaussianPosterior,
    PosteriorSummary,
};
use pwabc::kde::{
    assemble_auto, fit_kde_factor, log_marginal_kde, optimal_q, sample_lattice_posterior,
    KdeFactor, LatticePosterior,
};
use pwabc::math::{Lattice, ParamVec};
use pwabc::models::dataset::format_real;
use pwabc::models::{Dataset, ModelSpec};
use pwabc::oracle::{exact_posterior_auto, OracleSummary};
use pwabc::par;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, *};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::write_marginals_long;

/// Options shared by the commands that read a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
}

/// `kde_summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeRecord {
    #[serde(flatten)]
    pub summary: PosteriorSummary,
    pub q: f64,
    pub lattice: Lattice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    workers: usize,
    sampling_secs: f64,
    per_factor_secs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaussian_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kde_secs: Option<f64>,
}

fn out_dir(opts: &RunOptions, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    opts.out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Config("no output directory (pass --out or set \"output\")".into()))
}

fn workers(opts: &RunOptions, cfg: &RunConfig) -> Option<usize> {
    opts.workers.or(cfg.abc.workers)
}

pub fn simulate(opts: &RunOptions) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.data.seed = s;
    }
    let model = cfg.model_spec()?;
    let dir = out_dir(opts, &cfg)?;
    let (data, meta) = obtain_dataset(&cfg, &model, None)?;
    prepare_out_dir(&dir, opts.force)?;
    data.save(&dir.join(DATA), &meta)?;
    std::fs::write(dir.join(CONFIG), cfg.to_json())?;
    println!(
        "simulated {} observations of {} into {}",
        data.len(),
        model.id(),
        dir.join(DATA).display()
    );
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    model: ModelSpec,
    data: Dataset,
    dir: PathBuf,
}

fn prepare(opts: &RunOptions, seed_is_data: bool) -> Result<Prepared, CliError> {
    let mut cfg = RunConfig::load(&opts.config)?;
    if let Some(s) = opts.seed {
        if seed_is_data {
            cfg.data.seed = s;
        } else {
            cfg.abc.seed = s;
        }
    }
    let model = cfg.model_spec()?;
    let dir = out_dir(opts, &cfg)?;
    let (data, meta) = obtain_dataset(&cfg, &model, opts.data.as_deref())?;
    prepare_out_dir(&dir, opts.force)?;
    data.save(&dir.join(DATA), &meta)?;
    std::fs::write(dir.join(CONFIG), cfg.to_json())?;
    Ok(Prepared { cfg, model, data, dir })
}

/// Samples every factor on the current pool and records the run.
fn sample(p: &Prepared) -> Result<(Vec<FactorSampleSet>, RunReport, f64), CliError> {
    let mut abc = p.cfg.abc_config(&p.model)?;
    abc.workers = None;
    let t = Instant::now();
    let sets = sample_all_factors(&p.model, &p.cfg.prior, &p.data, &abc).map_err(|e| {
        CliError::Runtime(anyhow::Error::from(e).context("factor sampling failed"))
    })?;
    let secs = t.elapsed().as_secs_f64();
    let report = RunReport::new(&sets, &abc)?;
    save_factors(&p.dir, &sets)?;
    write_json(
        &p.dir.join(RUN),
        &RunRecord {
            report: report.clone(),
            config: p.cfg.clone(),
        },
    )?;
    println!(
        "sampled {} factors: mean acceptance {:.4}, {} simulations",
        sets.len(),
        report.mean_acceptance,
        report.total_simulations
    );
    Ok((sets, report, secs))
}

pub fn infer(opts: &RunOptions) -> Result<(), CliError> {
    let p = prepare(opts, false)?;
    let w = workers(opts, &p.cfg);
    par::with_workers(w, || infer_in_pool(&p))
}

fn infer_in_pool(p: &Prepared) -> Result<(), CliError> {
    let (sets, report, sampling_secs) = sample(p)?;
    let ci = report.log_ci();
    let backend = p.cfg.estimator.backend;
    let mut marg = LogMarginals {
        gaussian: None,
        kde: None,
    };
    let mut timing = Timing {
        workers: par::current_workers(),
        sampling_secs,
        per_factor_secs: sets.iter().map(|s| s.elapsed_secs).collect(),
        gaussian_secs: None,
        kde_secs: None,
    };

    if backend.gaussian() {
        let t = Instant::now();
        let (factors, gp) = gaussian_backend(&sets, &p.cfg)?;
        let lm = ci.iter().sum::<f64>() + gp.log_integral;
        let summary = PosteriorSummary {
            backend: "gaussian".into(),
            mu_post: gp.density.mean.iter().copied().collect(),
            sigma_post: matrix_rows(gp.density.cov.matrix()),
            log_marginal: lm,
            truncation_mass: gp.truncation.as_ref().map(|t| t.mass),
            per_factor: factor_summaries(&factors, &sets, &ci),
        };
        write_json(&p.dir.join(GAUSSIAN_SUMMARY), &summary)?;
        if p.cfg.estimator.posterior_samples > 0 {
            let draws = sample_gaussian_posterior(&gp, p.cfg.estimator.posterior_samples, p.cfg.abc.seed)?;
            write_draws(&p.dir.join("samples_gaussian.csv"), &draws)?;
        }
        marg.gaussian = Some(lm);
        timing.gaussian_secs = Some(t.elapsed().as_secs_f64());
        println!("gaussian: log marginal {lm:.4}, mean {:?}", summary.mu_post);
    }

    if backend.kde() {
        let t = Instant::now();
        let q = p.cfg.estimator.q;
        let factors = kde_factors(&sets, q)?;
        let lp = assemble_auto(&factors, &p.cfg.prior, &p.cfg.estimator.lattice)
            .context("kernel posterior assembly failed")?;
        let lm = log_marginal_kde(&lp, &ci);
        let record = kde_record(&lp, &sets, &ci, lm, q.unwrap_or_else(|| optimal_q(lp.dim())));
        lp.save_csv(&p.dir.join(KDE_LATTICE))?;
        write_json(&p.dir.join(KDE_SUMMARY), &record)?;
        if p.cfg.estimator.posterior_samples > 0 {
            let draws = sample_lattice_posterior(&lp, p.cfg.estimator.posterior_samples, p.cfg.abc.seed);
            write_draws(&p.dir.join("samples_kde.csv"), &draws)?;
        }
        marg.kde = Some(lm);
        timing.kde_secs = Some(t.elapsed().as_secs_f64());
        println!("kde: log marginal {lm:.4}, mean {:?}", record.summary.mu_post);
    }

    write_json(&p.dir.join(LOG_MARGINAL), &marg)?;
    write_json(&p.dir.join(TIMING), &timing)?;
    println!("wrote {}", p.dir.display());
    Ok(())
}

pub(crate) fn gaussian_backend(
    sets: &[FactorSampleSet],
    cfg: &RunConfig,
) -> anyhow::Result<(Vec<GaussianFactor>, GaussianPosterior)> {
    let factors = sets
        .iter()
        .map(fit_gaussian_factor)
        .collect::<pwabc::Result<Vec<_>>>()
        .context("fitting Gaussian factors")?;
    let gp = assemble_gaussian_posterior(&factors, &cfg.prior).context("Gaussian posterior assembly failed")?;
    Ok((factors, gp))
}

pub(crate) fn kde_factors(sets: &[FactorSampleSet], q: Option<f64>) -> anyhow::Result<Vec<KdeFactor>> {
    sets.iter()
        .map(|s| fit_kde_factor(s, q))
        .collect::<pwabc::Result<Vec<_>>>()
        .context("fitting kernel factors")
}

fn kde_record(lp: &LatticePosterior, sets: &[FactorSampleSet], ci: &[f64], lm: f64, q: f64) -> KdeRecord {
    let per_factor = sets
        .iter()
        .zip(ci)
        .map(|(s, c)| {
            let (mean, cov) = sample_moments(&s.samples, s.dim);
            FactorSummary {
                factor_index: s.factor_index,
                mean: mean.iter().copied().collect(),
                cov: matrix_rows(&cov),
                log_ci: *c,
                acceptance: s.acceptance_rate(),
            }
        })
        .collect();
    KdeRecord {
        summary: PosteriorSummary {
            backend: "kde".into(),
            mu_post: lp.mean(),
            sigma_post: matrix_rows(&lp.cov()),
            log_marginal: lm,
            truncation_mass: None,
            per_factor,
        },
        q,
        lattice: lp.lattice.clone(),
    }
}

fn write_draws(path: &Path, draws: &[ParamVec]) -> anyhow::Result<()> {
    let d = draws.first().map_or(0, |x| x.len());
    let header: Vec<String> = (1..=d).map(|k| format!("theta_{k}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for x in draws {
        let row: Vec<String> = x.iter().map(|v| format_real(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn oracle(opts: &RunOptions) -> Result<(), CliError> {
    let p = prepare(opts, true)?;
    if !p.model.has_exact_likelihood() {
        return Err(CliError::Config(format!(
            "model {} has no exact likelihood to build an oracle from",
            p.model.id()
        )));
    }
    let w = workers(opts, &p.cfg);
    par::with_workers(w, || -> Result<(), CliError> {
        let o = &p.cfg.oracle;
        let res = exact_posterior_auto(&p.model, &p.cfg.prior, &p.data, &o.lattice, o.include_first)
            .context("exact posterior failed")?;
        res.posterior.save_csv(&p.dir.join(ORACLE_LATTICE))?;
        let summary = OracleSummary {
            model_id: res.model_id.clone(),
            log_marginal_true: res.log_marginal_true,
            include_first: o.include_first,
            lattice: res.posterior.lattice.clone(),
            mean: res.posterior.mean(),
        };
        write_json(&p.dir.join(ORACLE), &summary)?;
        println!(
            "oracle: log marginal {:.4}, mean {:?}",
            summary.log_marginal_true, summary.mean
        );
        Ok(())
    })
}

pub fn sweep_q(opts: &RunOptions, qs: &[f64]) -> Result<(), CliError> {
    let p = prepare(opts, false)?;
    let qs: Vec<f64> = if qs.is_empty() {
        p.cfg.estimator.q_sweep.clone()
    } else {
        qs.to_vec()
    };
    if qs.is_empty() {
        return Err(CliError::Config("no q values (pass --q or set estimator.q_sweep)".into()));
    }
    if let Some(bad) = qs.iter().find(|q| !(**q > 0.0 && q.is_finite())) {
        return Err(CliError::Config(format!("q must be positive, got {bad}")));
    }
    let w = workers(opts, &p.cfg);
    par::with_workers(w, || -> Result<(), CliError> {
        let (sets, report, _) = sample(&p)?;
        let ci = report.log_ci();
        std::fs::create_dir_all(p.dir.join(SWEEP_DIR))?;
        let mut entries = Vec::new();
        for q in &qs {
            let factors = kde_factors(&sets, Some(*q))?;
            let lp = assemble_auto(&factors, &p.cfg.prior, &p.cfg.estimator.lattice)
                .with_context(|| format!("kernel posterior assembly failed at q = {q}"))?;
            let name = format!("{SWEEP_DIR}/kde_q_{}.csv", q_label(*q));
            lp.save_csv(&p.dir.join(&name))?;
            write_marginals_long(&p.dir.join(format!("{SWEEP_DIR}/marginal_q_{}.csv", q_label(*q))), &lp)?;
            let lm = log_marginal_kde(&lp, &ci);
            println!("q = {q}: log marginal {lm:.4}");
            entries.push(SweepEntry {
                q: *q,
                lattice_file: name,
                log_marginal: lm,
                mean: lp.mean(),
            });
        }
        artifacts::write_json(&p.dir.join(SWEEP), &entries)?;
        Ok(())
    })
}
