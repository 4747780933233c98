//! Comparison tables and plot data for a finished run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pwabc::gaussian_estimator::PosteriorSummary;
use pwabc::kde::{
    assemble_lattice_posterior, default_points, hpd_thresholds, LatticePosterior,
};
use pwabc::math::{Lattice, ParamVec};
use pwabc::models::{Dataset, DatasetMeta, ModelSpec, PriorSpec};
use pwabc::oracle::{divergence, OracleSummary};
use pwabc::par;
use serde::Serialize;

use crate::artifacts::*;
use crate::commands::{gaussian_backend, kde_factors, KdeRecord};
use crate::error::CliError;
use crate::svg::{line_plot, Series};

/// Probability masses of the reported highest-density regions.
pub const CONTOUR_MASSES: [f64; 5] = [0.05, 0.10, 0.50, 0.90, 0.95];

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub run_dir: PathBuf,
    pub oracle_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceReport {
    pub mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_marginal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    /// Per dimension pair: is the generating parameter inside the 95% region
    /// of the bivariate marginal (empty without a known truth or for d = 1).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub truth_in_95: Vec<PairCoverage>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCoverage {
    pub dims: [usize; 2],
    pub inside: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub model_id: String,
    pub lattice: Lattice,
    /// Inference-scale parameter that generated the data, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    pub sources: BTreeMap<String, SourceReport>,
}

pub fn report(opts: &ReportOptions) -> Result<(), CliError> {
    let run = &opts.run_dir;
    let record: RunRecord = read_json(&run.join(RUN)).map_err(CliError::Runtime)?;
    let cfg = record.config.clone();
    let model = cfg.model_spec()?;
    let (data, meta) = Dataset::load(&run.join(DATA), model.discrete())
        .with_context(|| format!("loading {}", run.join(DATA).display()))?;
    let out = opts.out.clone().unwrap_or_else(|| run.join(REPORT_DIR));
    if same_dir(&out, run) {
        return bail_cfg("the report directory must differ from the run directory");
    }
    prepare_out_dir(&out, opts.force)?;
    if run.join(SWEEP).exists() {
        return sweep_report(run, &out);
    }
    par::with_workers(opts.workers, || {
        full_report(opts, &record, &model, &data, &meta, &out)
    })
}

struct Source {
    name: &'static str,
    lp: LatticePosterior,
    log_marginal: Option<f64>,
}

fn full_report(
    opts: &ReportOptions,
    record: &RunRecord,
    model: &ModelSpec,
    data: &Dataset,
    meta: &DatasetMeta,
    out: &Path,
) -> Result<(), CliError> {
    let run = &opts.run_dir;
    let cfg = &record.config;
    let prior = &cfg.prior;
    let sets = load_factors(run, record, data)?;

    let oracle = match &opts.oracle_dir {
        Some(dir) => {
            let summary: OracleSummary = read_json(&dir.join(ORACLE))?;
            if summary.model_id != model.id() {
                return Err(CliError::Config(format!(
                    "oracle in {} is for model {}, run is {}",
                    dir.display(),
                    summary.model_id,
                    model.id()
                )));
            }
            let lp = load_lattice_values(&dir.join(ORACLE_LATTICE), &summary.lattice)?;
            Some((summary, lp))
        }
        None => None,
    };
    let kde_rec: Option<KdeRecord> = if cfg.estimator.backend.kde() {
        Some(read_json(&run.join(KDE_SUMMARY))?)
    } else {
        None
    };
    let gauss_sum: Option<PosteriorSummary> = if cfg.estimator.backend.gaussian() {
        Some(read_json(&run.join(GAUSSIAN_SUMMARY))?)
    } else {
        None
    };

    let gp = if gauss_sum.is_some() {
        Some(gaussian_backend(&sets, cfg)?.1)
    } else {
        None
    };
    let lattice = if let Some((s, _)) = &oracle {
        s.lattice.clone()
    } else if let Some(k) = &kde_rec {
        k.lattice.clone()
    } else if let Some(g) = &gp {
        gaussian_lattice(g.density.mean.as_slice(), g.density.cov.matrix(), prior)?
    } else {
        bail_cfg("the run has no posterior to report")?
    };

    let mut sources = Vec::new();
    if let Some((s, lp)) = &oracle {
        sources.push(Source {
            name: "oracle",
            lp: lp.clone(),
            log_marginal: Some(s.log_marginal_true),
        });
    }
    if let (Some(g), Some(sum)) = (&gp, &gauss_sum) {
        let vals = lattice.evaluate(|t| g.logpdf(&ParamVec::from_column_slice(t)).unwrap_or(f64::NEG_INFINITY));
        match LatticePosterior::from_log_values(lattice.clone(), vals) {
            Ok(lp) => sources.push(Source {
                name: "gaussian",
                lp,
                log_marginal: Some(sum.log_marginal),
            }),
            Err(e) => log::warn!("Gaussian posterior has no mass on the report lattice: {e}"),
        }
    }
    if let Some(k) = &kde_rec {
        let lp = if k.lattice == lattice {
            load_lattice_values(&run.join(KDE_LATTICE), &lattice)?
        } else {
            let factors = kde_factors(&sets, Some(k.q))?;
            assemble_lattice_posterior(&factors, prior, &lattice)
                .context("kernel posterior on the report lattice")?
        };
        sources.push(Source {
            name: "kde",
            lp,
            log_marginal: Some(k.summary.log_marginal),
        });
    }

    let theta_true = meta
        .theta_true
        .as_ref()
        .map(|t| model.to_inference(t).iter().copied().collect::<Vec<f64>>());
    let d = lattice.dim();
    let names: Vec<&str> = sources.iter().map(|s| s.name).collect();

    // per-dimension marginals
    for k in 0..d {
        let axis = lattice.axis(k);
        let margs: Vec<Vec<f64>> = sources.iter().map(|s| s.lp.marginal(k)).collect();
        let mut header = vec![format!("theta_{}", k + 1)];
        header.extend(names.iter().map(|n| n.to_string()));
        let rows: Vec<Vec<Option<f64>>> = (0..axis.len())
            .map(|i| {
                let mut r = vec![Some(axis[i])];
                r.extend(margs.iter().map(|m| Some(m[i])));
                r
            })
            .collect();
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(&out.join(format!("marginal_{}.csv", k + 1)), &hdr, &rows)?;
        let series: Vec<Series> = sources
            .iter()
            .zip(margs)
            .map(|(s, y)| Series {
                name: s.name.to_string(),
                x: &axis,
                y,
            })
            .collect();
        let label = format!("theta_{}", k + 1);
        std::fs::write(
            out.join(format!("marginal_{}.svg", k + 1)),
            line_plot(&format!("{} posterior marginal, {label}", model.id()), &label, &series),
        )?;
    }

    // contour levels and bivariate grids
    let mut contour_rows = Vec::new();
    let mut coverage: Vec<Vec<PairCoverage>> = vec![Vec::new(); sources.len()];
    if d == 1 {
        for (si, s) in sources.iter().enumerate() {
            let dens = s.lp.marginal(0);
            let levels = hpd_thresholds(&dens, lattice.spacing(0), &CONTOUR_MASSES);
            for (mass, lvl) in CONTOUR_MASSES.iter().zip(levels) {
                contour_rows.push(vec![Some(si as f64), Some(1.0), Some(1.0), Some(*mass), Some(lvl)]);
            }
        }
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let (ak, al) = (lattice.axis(k), lattice.axis(l));
            let grids: Vec<Vec<f64>> = sources.iter().map(|s| s.lp.bivariate(k, l)).collect();
            let area = lattice.spacing(k) * lattice.spacing(l);
            let mut header = vec![format!("theta_{}", k + 1), format!("theta_{}", l + 1)];
            header.extend(names.iter().map(|n| n.to_string()));
            let rows: Vec<Vec<Option<f64>>> = (0..ak.len() * al.len())
                .map(|c| {
                    let mut r = vec![Some(ak[c / al.len()]), Some(al[c % al.len()])];
                    r.extend(grids.iter().map(|g| Some(g[c])));
                    r
                })
                .collect();
            let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
            write_table(&out.join(format!("bivariate_{}_{}.csv", k + 1, l + 1)), &hdr, &rows)?;
            for (si, g) in grids.iter().enumerate() {
                let levels = hpd_thresholds(g, area, &CONTOUR_MASSES);
                for (mass, lvl) in CONTOUR_MASSES.iter().zip(&levels) {
                    contour_rows.push(vec![
                        Some(si as f64),
                        Some((k + 1) as f64),
                        Some((l + 1) as f64),
                        Some(*mass),
                        Some(*lvl),
                    ]);
                }
                if let Some(t) = &theta_true {
                    let ik = cell_of(&lattice, k, t[k]);
                    let il = cell_of(&lattice, l, t[l]);
                    let inside = match (ik, il) {
                        (Some(i), Some(j)) => g[i * al.len() + j] >= levels[4],
                        _ => false,
                    };
                    coverage[si].push(PairCoverage {
                        dims: [k + 1, l + 1],
                        inside,
                    });
                }
            }
        }
    }
    write_contours(&out.join("contours.csv"), &names, &contour_rows)?;

    // divergence and marginal-likelihood tables
    let mut reports = BTreeMap::new();
    let oracle_lp = oracle.as_ref().map(|(_, lp)| lp);
    let oracle_lm = oracle.as_ref().map(|(s, _)| s.log_marginal_true);
    let mut div_lines = vec!["backend,tv,kl".to_string()];
    let mut lm_lines = vec!["source,log_marginal,error".to_string()];
    for (si, s) in sources.iter().enumerate() {
        let div = match oracle_lp {
            Some(o) if s.name != "oracle" => Some(divergence(o, &s.lp)?),
            _ => None,
        };
        if s.name != "oracle" {
            div_lines.push(format!(
                "{},{},{}",
                s.name,
                opt(div.as_ref().map(|d| d.tv)),
                opt(div.as_ref().map(|d| d.kl))
            ));
        }
        let err = match (s.log_marginal, oracle_lm) {
            (Some(v), Some(o)) if s.name != "oracle" => Some(v - o),
            _ => None,
        };
        lm_lines.push(format!("{},{},{}", s.name, opt(s.log_marginal), opt(err)));
        reports.insert(
            s.name.to_string(),
            SourceReport {
                mean: s.lp.mean(),
                log_marginal: s.log_marginal,
                tv: div.as_ref().map(|d| d.tv),
                kl: div.as_ref().map(|d| d.kl),
                truth_in_95: std::mem::take(&mut coverage[si]),
            },
        );
    }
    std::fs::write(out.join("divergence.csv"), div_lines.join("\n") + "\n")?;
    std::fs::write(out.join("log_marginal.csv"), lm_lines.join("\n") + "\n")?;
    write_json(
        &out.join("report.json"),
        &Report {
            model_id: model.id().to_string(),
            lattice,
            theta_true,
            sources: reports,
        },
    )?;
    println!("wrote report to {}", out.display());
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn bail_cfg<T>(msg: &str) -> Result<T, CliError> {
    Err(CliError::Config(msg.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn cell_of(lattice: &Lattice, k: usize, x: f64) -> Option<usize> {
    let pos = (x - lattice.lower()[k]) / lattice.spacing(k);
    if pos >= 0.0 && pos < lattice.points_per_dim()[k] as f64 {
        Some(pos as usize)
    } else {
        None
    }
}

fn write_contours(path: &Path, names: &[&str], rows: &[Vec<Option<f64>>]) -> anyhow::Result<()> {
    let mut out = String::from("source,dim_a,dim_b,mass,level\n");
    for r in rows {
        let src = names[r[0].unwrap_or(0.0) as usize];
        out.push_str(&format!(
            "{src},{},{},{},{}\n",
            r[1].unwrap_or(0.0) as usize,
            r[2].unwrap_or(0.0) as usize,
            opt(r[3]),
            opt(r[4])
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// `mean ± 6 sd` per dimension, cut to a uniform prior box.
fn gaussian_lattice(mean: &[f64], cov: &nalgebra::DMatrix<f64>, prior: &PriorSpec) -> Result<Lattice, CliError> {
    let d = mean.len();
    let mut lower: Vec<f64> = (0..d).map(|k| mean[k] - 6.0 * cov[(k, k)].sqrt()).collect();
    let mut upper: Vec<f64> = (0..d).map(|k| mean[k] + 6.0 * cov[(k, k)].sqrt()).collect();
    if let PriorSpec::UniformBox { lower: pl, upper: pu } = prior {
        for k in 0..d {
            lower[k] = lower[k].max(pl[k]);
            upper[k] = upper[k].min(pu[k]);
        }
    }
    if d > pwabc::kde::MAX_LATTICE_DIM {
        return bail_cfg("reports are limited to d <= 3");
    }
    Ok(Lattice::uniform(lower, upper, default_points(d))?)
}

/// Per-dimension marginals in long form: `dim,theta,density`.
pub fn write_marginals_long(path: &Path, lp: &LatticePosterior) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for k in 0..lp.dim() {
        let axis = lp.lattice.axis(k);
        for (x, p) in axis.iter().zip(lp.marginal(k)) {
            rows.push(vec![Some((k + 1) as f64), Some(*x), Some(p)]);
        }
    }
    let mut out = String::from("dim,theta,density\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r[0].unwrap() as usize, opt(r[1]), opt(r[2])));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn sweep_report(run: &Path, out: &Path) -> Result<(), CliError> {
    let entries: Vec<SweepEntry> = read_json(&run.join(SWEEP))?;
    if entries.is_empty() {
        return Err(anyhow::anyhow!("{} lists no q values", run.join(SWEEP).display()).into());
    }
    let mut lps = Vec::new();
    let mut lines = vec!["q,log_marginal".to_string()];
    for e in &entries {
        let lp = LatticePosterior::load_csv(&run.join(&e.lattice_file))
            .with_context(|| format!("loading {}", e.lattice_file))?;
        write_marginals_long(&out.join(format!("marginal_q_{}.csv", q_label(e.q))), &lp)?;
        lines.push(format!("{:?},{:?}", e.q, e.log_marginal));
        lps.push(lp);
    }
    std::fs::write(out.join("sweep_log_marginal.csv"), lines.join("\n") + "\n")?;
    let d = lps[0].dim();
    for k in 0..d {
        let axes: Vec<Vec<f64>> = lps.iter().map(|lp| lp.lattice.axis(k)).collect();
        let series: Vec<Series> = entries
            .iter()
            .zip(&lps)
            .zip(&axes)
            .map(|((e, lp), x)| Series {
                name: format!("q = {}", e.q),
                x,
                y: lp.marginal(k),
            })
            .collect();
        let label = format!("theta_{}", k + 1);
        std::fs::write(
            out.join(format!("marginal_{}.svg", k + 1)),
            line_plot(&format!("kernel marginal by q, {label}"), &label, &series),
        )?;
    }
    println!("wrote sweep report to {}", out.display());
    Ok(())
}
