//! File names and readers/writers for run directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pwabc::abc::{FactorSampleSet, RunReport};
use pwabc::kde::LatticePosterior;
use pwabc::math::Lattice;
use pwabc::models::dataset::format_real;
use pwabc::models::{Dataset, DatasetMeta, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG: &str = "config.json";
pub const DATA: &str = "data.csv";
pub const RUN: &str = "run.json";
pub const FACTORS: &str = "factors";
pub const TIMING: &str = "timing.json";
pub const GAUSSIAN_SUMMARY: &str = "gaussian_summary.json";
pub const KDE_SUMMARY: &str = "kde_summary.json";
pub const KDE_LATTICE: &str = "kde_lattice.csv";
pub const LOG_MARGINAL: &str = "log_marginal.json";
pub const ORACLE_LATTICE: &str = "oracle_lattice.csv";
pub const ORACLE: &str = "oracle.json";
pub const SWEEP: &str = "sweep.json";
pub const SWEEP_DIR: &str = "sweep";
pub const REPORT_DIR: &str = "report";

/// Everything a command may have written at the top of an output directory.
const KNOWN: &[&str] = &[
    CONFIG,
    DATA,
    "data.json",
    RUN,
    FACTORS,
    TIMING,
    GAUSSIAN_SUMMARY,
    KDE_SUMMARY,
    KDE_LATTICE,
    LOG_MARGINAL,
    ORACLE_LATTICE,
    ORACLE,
    SWEEP,
    SWEEP_DIR,
    REPORT_DIR,
    "samples_gaussian.csv",
    "samples_kde.csv",
];

/// `run.json`: the sampling record plus the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub report: RunReport,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogMarginals {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde: Option<f64>,
}

/// One entry of `sweep.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub q: f64,
    pub lattice_file: String,
    pub log_marginal: f64,
    pub mean: Vec<f64>,
}

/// Creates `dir`, refusing to touch an existing non-empty directory unless
/// `force`, in which case earlier artifacts are removed.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        for name in KNOWN {
            let p = dir.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            } else if p.exists() {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn factor_path(dir: &Path, factor_index: usize) -> PathBuf {
    dir.join(FACTORS).join(format!("factor_{factor_index:04}.csv"))
}

pub fn save_factors(dir: &Path, sets: &[FactorSampleSet]) -> anyhow::Result<()> {
    fs::create_dir_all(dir.join(FACTORS))?;
    for fs in sets {
        fs.save_csv(&factor_path(dir, fs.factor_index))?;
    }
    Ok(())
}

pub fn load_factors(dir: &Path, record: &RunRecord, data: &Dataset) -> anyhow::Result<Vec<FactorSampleSet>> {
    record
        .report
        .factors
        .iter()
        .map(|r| {
            let p = factor_path(dir, r.factor_index);
            FactorSampleSet::load_csv(&p, r, data).with_context(|| format!("loading {}", p.display()))
        })
        .collect()
}

/// The dataset named by `--data`, or one simulated from the config.
pub fn obtain_dataset(
    cfg: &RunConfig,
    model: &ModelSpec,
    data_path: Option<&Path>,
) -> Result<(Dataset, DatasetMeta), CliError> {
    if let Some(p) = data_path {
        let (data, meta) = Dataset::load(p, model.discrete())
            .with_context(|| format!("loading dataset {}", p.display()))?;
        if meta.model_id != model.id() {
            return Err(CliError::Config(format!(
                "dataset {} belongs to model {}, config is for {}",
                p.display(),
                meta.model_id,
                model.id()
            )));
        }
        if data.state_dim() != model.obs_dim() {
            return Err(CliError::Config(format!(
                "dataset has {} state columns, model {} needs {}",
                data.state_dim(),
                model.id(),
                model.obs_dim()
            )));
        }
        return Ok((data, meta));
    }
    let theta = cfg.data.theta_true.as_ref().ok_or_else(|| {
        CliError::Config("data.theta_true is required to simulate a dataset (or pass --data)".into())
    })?;
    let data = model.simulate_dataset(
        &model.to_inference(theta),
        cfg.data.n,
        cfg.data.dt,
        cfg.data.x0.as_deref(),
        cfg.data.seed,
    )?;
    let meta = DatasetMeta {
        model_id: model.id().to_string(),
        theta_true: Some(theta.clone()),
        seed: Some(cfg.data.seed),
        dt: Some(cfg.data.dt),
    };
    Ok((data, meta))
}

/// Lattice CSV values placed on a known lattice (avoids rebuilding the
/// lattice from rounded cell centres).
pub fn load_lattice_values(path: &Path, lattice: &Lattice) -> anyhow::Result<LatticePosterior> {
    let lp = LatticePosterior::load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    if lp.lattice.points_per_dim() != lattice.points_per_dim() {
        bail!("{} does not match its recorded lattice", path.display());
    }
    Ok(LatticePosterior::from_log_values(lattice.clone(), lp.log_density)?)
}

/// Writes rows of optional numbers; `None` becomes an empty field.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<Option<f64>>]) -> anyhow::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.map(format_real).unwrap_or_default()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// File-name form of a smoothing parameter.
pub fn q_label(q: f64) -> String {
    format_real(q)
}
