//! Kernel density factor approximations, the lattice posterior they imply,
//! and the exact Gaussian-mixture product for small problems.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abc::FactorSampleSet;
use crate::error::{Error, Result};
use crate::gaussian_estimator::{prior_correct, sample_moments};
use crate::math::{
    lattice_integral, log_sum_exp, CovMatrix, GaussianDensity, Lattice, ParamVec,
    WeightedGaussian,
};
use crate::models::dataset::format_real;
use crate::models::PriorSpec;
use crate::rng::{self, domain};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Kernels further than this (in squared whitened distance) beyond the
/// nearest one contribute below e⁻⁴⁰ each and are skipped.
const KERNEL_CUTOFF_SQ: f64 = 80.0;
pub const MIXTURE_COMPONENT_CAP: usize = 100_000;
pub const MAX_LATTICE_DIM: usize = 3;

/// `q = ((d + 2) / 4)^{−2/(d+4)}`.
pub fn optimal_q(d: usize) -> f64 {
    let d = d as f64;
    ((d + 2.0) / 4.0).powf(-2.0 / (d + 4.0))
}

/// `φ̂(θ) = (1/m) Σⱼ K(θ; θⱼ, H)` with `H = q m^{−2/(d+4)} Q`.
#[derive(Debug, Clone)]
pub struct KdeFactor {
    pub factor_index: usize,
    pub dim: usize,
    pub samples: Vec<f64>,
    pub bandwidth: CovMatrix,
    pub q: f64,
    whitener: DMatrix<f64>,
    whitened: Vec<f64>,
    log_const: f64,
}

impl KdeFactor {
    pub fn from_samples(samples: Vec<f64>, dim: usize, q: Option<f64>, factor_index: usize) -> Result<Self> {
        let m = samples.len() / dim;
        if m <= dim {
            return Err(Error::InvalidArgument(format!(
                "factor {factor_index}: {m} samples cannot fit a {dim}-dimensional bandwidth"
            )));
        }
        let q = q.unwrap_or_else(|| optimal_q(dim));
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::InvalidArgument(format!("q must be positive, got {q}")));
        }
        let (_, cov) = sample_moments(&samples, dim);
        let scale = q * (m as f64).powf(-2.0 / (dim as f64 + 4.0));
        let bandwidth = CovMatrix::new(CovMatrix::new(cov)?.matrix() * scale)?;
        Ok(Self::with_bandwidth(samples, dim, bandwidth, q, factor_index))
    }

    /// A kernel estimate with a given bandwidth matrix.
    pub fn with_bandwidth(
        samples: Vec<f64>,
        dim: usize,
        bandwidth: CovMatrix,
        q: f64,
        factor_index: usize,
    ) -> Self {
        let m = samples.len() / dim;
        let whitener = bandwidth
            .cholesky_lower()
            .clone()
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .expect("cholesky factor has a positive diagonal");
        let mut whitened = vec![0.0; samples.len()];
        for (src, dst) in samples.chunks_exact(dim).zip(whitened.chunks_exact_mut(dim)) {
            apply(&whitener, src, dst);
        }
        let log_const = -0.5 * (dim as f64 * LN_2PI + bandwidth.log_det()) - (m as f64).ln();
        Self {
            factor_index,
            dim,
            samples,
            bandwidth,
            q,
            whitener,
            whitened,
            log_const,
        }
    }

    pub fn m(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub(crate) fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub(crate) fn whitened(&self) -> &[f64] {
        &self.whitened
    }

    pub(crate) fn log_const(&self) -> f64 {
        self.log_const
    }

    /// `log φ̂(θ)`.
    pub fn logpdf(&self, theta: &[f64]) -> f64 {
        let mut z = [0.0f64; MAX_LATTICE_DIM];
        let d = self.dim;
        if d > MAX_LATTICE_DIM {
            let mut zv = vec![0.0; d];
            apply(&self.whitener, theta, &mut zv);
            return self.log_const + whitened_lse(&self.whitened, &zv);
        }
        apply(&self.whitener, theta, &mut z[..d]);
        self.log_const + whitened_lse(&self.whitened, &z[..d])
    }
}

fn apply(lower: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..=r).map(|c| lower[(r, c)] * x[c]).sum();
    }
}

/// `log Σⱼ exp(−½‖z − wⱼ‖²)` over row-major `w`.
fn whitened_lse(w: &[f64], z: &[f64]) -> f64 {
    match z.len() {
        1 => lse_by(w.len(), |j| {
            let a = z[0] - w[j];
            a * a
        }),
        2 => lse_by(w.len() / 2, |j| {
            let a = z[0] - w[2 * j];
            let b = z[1] - w[2 * j + 1];
            a * a + b * b
        }),
        3 => lse_by(w.len() / 3, |j| {
            let a = z[0] - w[3 * j];
            let b = z[1] - w[3 * j + 1];
            let c = z[2] - w[3 * j + 2];
            a * a + b * b + c * c
        }),
        d => lse_by(w.len() / d, |j| {
            z.iter()
                .zip(&w[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        }),
    }
}

#[inline(always)]
fn lse_by<F: Fn(usize) -> f64>(m: usize, dist_sq: F) -> f64 {
    let mut min = f64::INFINITY;
    for j in 0..m {
        let v = dist_sq(j);
        if v < min {
            min = v;
        }
    }
    let limit = min + KERNEL_CUTOFF_SQ;
    let mut s = 0.0;
    for j in 0..m {
        let v = dist_sq(j);
        if v < limit {
            s += (-0.5 * (v - min)).exp();
        }
    }
    -0.5 * min + s.ln()
}

pub fn fit_kde_factor(fs: &FactorSampleSet, q: Option<f64>) -> Result<KdeFactor> {
    KdeFactor::from_samples(fs.samples.clone(), fs.dim, q, fs.factor_index)
}

pub fn kde_logpdf(f: &KdeFactor, theta: &ParamVec) -> Result<f64> {
    if theta.len() != f.dim {
        return Err(Error::DimensionMismatch {
            expected: f.dim,
            got: theta.len(),
        });
    }
    Ok(f.logpdf(theta.as_slice()))
}

/// A density tabulated at lattice cell centres, normalised so its lattice
/// integral is one.
#[derive(Debug, Clone)]
pub struct LatticePosterior {
    pub lattice: Lattice,
    pub log_density: Vec<f64>,
    /// Log lattice integral of the values before normalisation.
    pub log_normaliser: f64,
}

impl LatticePosterior {
    pub fn from_log_values(lattice: Lattice, mut logvals: Vec<f64>) -> Result<Self> {
        let z = lattice_integral(&logvals, &lattice)?;
        if !z.is_finite() {
            return Err(Error::MassEscaped);
        }
        for v in logvals.iter_mut() {
            *v -= z;
        }
        Ok(Self {
            lattice,
            log_density: logvals,
            log_normaliser: z,
        })
    }

    /// Tabulates `log_f` on `lattice` and normalises.
    pub fn tabulate<F>(lattice: Lattice, log_f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let vals = lattice.evaluate(log_f);
        Self::from_log_values(lattice, vals)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// Cell probabilities (density × cell volume).
    pub fn cell_masses(&self) -> Vec<f64> {
        let lv = self.lattice.log_cell_volume();
        self.log_density.iter().map(|v| (v + lv).exp()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut c = vec![0.0; d];
        for (i, p) in self.cell_masses().iter().enumerate() {
            self.lattice.center_into(i, &mut c);
            for k in 0..d {
                out[k] += p * c[k];
            }
        }
        out
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mu = self.mean();
        let mut out = DMatrix::zeros(d, d);
        let mut c = vec![0.0; d];
        for (i, p) in self.cell_masses().iter().enumerate() {
            self.lattice.center_into(i, &mut c);
            for r in 0..d {
                for s in 0..d {
                    out[(r, s)] += p * (c[r] - mu[r]) * (c[s] - mu[s]);
                }
            }
        }
        out
    }

    /// Centre of the highest-density cell.
    pub fn mode(&self) -> Vec<f64> {
        let best = self
            .log_density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        self.lattice.center(best.0).iter().copied().collect()
    }

    /// Log density of the cell containing `theta` (−∞ off the lattice).
    pub fn log_density_at(&self, theta: &[f64]) -> f64 {
        match self.lattice.locate(theta) {
            Some(i) => self.log_density[i],
            None => f64::NEG_INFINITY,
        }
    }

    /// Marginal density of dimension `k` at its axis points.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let n = self.lattice.points_per_dim()[k];
        let mut out = vec![0.0; n];
        for (i, p) in self.cell_masses().iter().enumerate() {
            out[self.lattice.multi_index(i)[k]] += p;
        }
        let h = self.lattice.spacing(k);
        out.iter().map(|p| p / h).collect()
    }

    /// Joint marginal density of dimensions `(k, l)`, row-major in `k`.
    pub fn bivariate(&self, k: usize, l: usize) -> Vec<f64> {
        let nk = self.lattice.points_per_dim()[k];
        let nl = self.lattice.points_per_dim()[l];
        let mut out = vec![0.0; nk * nl];
        for (i, p) in self.cell_masses().iter().enumerate() {
            let idx = self.lattice.multi_index(i);
            out[idx[k] * nl + idx[l]] += p;
        }
        let area = self.lattice.spacing(k) * self.lattice.spacing(l);
        out.iter().map(|p| p / area).collect()
    }

    /// Linear-interpolated CDF of a one-dimensional posterior.
    pub fn cdf(&self, x: f64) -> f64 {
        let lo = self.lattice.lower()[0];
        let h = self.lattice.spacing(0);
        let masses = self.cell_masses();
        let pos = (x - lo) / h;
        if pos <= 0.0 {
            return 0.0;
        }
        let full = (pos.floor() as usize).min(masses.len());
        let mut c: f64 = masses[..full].iter().sum();
        if full < masses.len() {
            c += masses[full] * (pos - full as f64);
        }
        c.min(1.0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|k| format!("theta_{k}")).collect();
        header.push("log_density".into());
        writeln!(w, "{}", header.join(","))?;
        let mut c = vec![0.0; d];
        for (i, v) in self.log_density.iter().enumerate() {
            self.lattice.center_into(i, &mut c);
            let mut line: Vec<String> = c.iter().map(|x| format_real(*x)).collect();
            line.push(format_real(*v));
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

    /// Reads a CSV written by [`LatticePosterior::write_csv`]; the lattice is
    /// rebuilt from the cell centres.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(File::open(path)?);
        let d = rdr.headers()?.len() - 1;
        let mut centres: Vec<Vec<f64>> = vec![Vec::new(); d];
        let mut logd = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            for k in 0..d {
                centres[k].push(vals[k]);
            }
            logd.push(vals[d]);
        }
        // last dimension varies fastest
        let mut points = vec![0usize; d];
        let mut stride = 1usize;
        for k in (0..d).rev() {
            let first = centres[k][0];
            let mut count = 1;
            while count * stride < logd.len() && centres[k][count * stride] != first {
                count += 1;
            }
            points[k] = count;
            stride *= count;
        }
        if stride != logd.len() {
            return Err(Error::Parse(format!("{}: not a full lattice", path.display())));
        }
        let mut lower = Vec::with_capacity(d);
        let mut upper = Vec::with_capacity(d);
        let mut step = 1usize;
        let mut strides = vec![0usize; d];
        for k in (0..d).rev() {
            strides[k] = step;
            step *= points[k];
        }
        for k in 0..d {
            let c0 = centres[k][0];
            let h = if points[k] > 1 {
                (centres[k][strides[k] * (points[k] - 1)] - c0) / (points[k] - 1) as f64
            } else {
                return Err(Error::Parse("lattice needs two points per dimension".into()));
            };
            lower.push(c0 - 0.5 * h);
            upper.push(c0 + (points[k] as f64 - 0.5) * h);
        }
        let lattice = Lattice::new(lower, upper, points)?;
        let z = lattice_integral(&logd, &lattice)?;
        Ok(Self {
            lattice,
            log_density: logd.iter().map(|v| v - z).collect(),
            log_normaliser: 0.0,
        })
    }
}

/// Density thresholds whose superlevel sets hold each of `masses`, for
/// densities tabulated on cells of area `cell_area`.
pub fn hpd_thresholds(density: &[f64], cell_area: f64, masses: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = density.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum::<f64>() * cell_area;
    masses
        .iter()
        .map(|target| {
            let mut acc = 0.0;
            for v in &sorted {
                acc += v * cell_area / total;
                if acc >= *target {
                    return *v;
                }
            }
            0.0
        })
        .collect()
}

/// How to place the lattice for a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    #[serde(default)]
    pub points: Option<Vec<usize>>,
    /// Narrow the bounds to where the posterior lives before the final pass.
    #[serde(default = "yes")]
    pub focus: bool,
}

fn yes() -> bool {
    true
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            lower: None,
            upper: None,
            points: None,
            focus: true,
        }
    }
}

pub fn default_points(d: usize) -> usize {
    if d <= 2 {
        400
    } else {
        120
    }
}

/// Per dimension: all factor means ± 6 × the largest factor sd, cut to the
/// prior box when the prior is uniform.
pub fn default_bounds(factors: &[KdeFactor], prior: &PriorSpec) -> (Vec<f64>, Vec<f64>) {
    let d = factors[0].dim;
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    let mut max_sd = vec![0.0f64; d];
    for f in factors {
        let (mean, cov) = sample_moments(&f.samples, d);
        for k in 0..d {
            lower[k] = lower[k].min(mean[k]);
            upper[k] = upper[k].max(mean[k]);
            max_sd[k] = max_sd[k].max(cov[(k, k)].sqrt());
        }
    }
    for k in 0..d {
        let pad = 6.0 * max_sd[k].max(1e-6);
        lower[k] -= pad;
        upper[k] += pad;
    }
    clip_to_prior(&mut lower, &mut upper, prior);
    (lower, upper)
}

fn clip_to_prior(lower: &mut [f64], upper: &mut [f64], prior: &PriorSpec) {
    if let PriorSpec::UniformBox { lower: pl, upper: pu } = prior {
        for k in 0..lower.len() {
            lower[k] = lower[k].max(pl[k]);
            upper[k] = upper[k].min(pu[k]);
            if !(lower[k] < upper[k]) {
                lower[k] = pl[k];
                upper[k] = pu[k];
            }
        }
    }
}

/// Shrinks `[lower, upper]` around the region where `log_f` is within
/// `depth` nats of its maximum, by repeated coarse passes. `log_f` tabulates
/// a function on a lattice.
pub fn focus_bounds<F>(
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_f: &F,
    depth: f64,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&Lattice) -> Vec<f64>,
{
    let d = lower.len();
    let coarse = match d {
        1 => 200,
        2 => 48,
        _ => 20,
    };
    let (mut lo, mut hi) = (lower, upper);
    for _ in 0..12 {
        let lat = Lattice::uniform(lo.clone(), hi.clone(), coarse)?;
        let vals = log_f(&lat);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::MassEscaped);
        }
        let mut imin = vec![usize::MAX; d];
        let mut imax = vec![0usize; d];
        for (i, v) in vals.iter().enumerate() {
            if *v >= max - depth {
                let idx = lat.multi_index(i);
                for k in 0..d {
                    imin[k] = imin[k].min(idx[k]);
                    imax[k] = imax[k].max(idx[k]);
                }
            }
        }
        let mut shrunk = false;
        let mut nlo = lo.clone();
        let mut nhi = hi.clone();
        for k in 0..d {
            let h = lat.spacing(k);
            nlo[k] = (lo[k] + (imin[k] as f64 - 2.0) * h).max(lo[k]);
            nhi[k] = (lo[k] + (imax[k] as f64 + 3.0) * h).min(hi[k]);
            if nhi[k] - nlo[k] < 0.75 * (hi[k] - lo[k]) {
                shrunk = true;
            }
        }
        lo = nlo;
        hi = nhi;
        if !shrunk {
            break;
        }
    }
    Ok((lo, hi))
}

/// Resolves a [`LatticeSpec`] into a lattice for the function `log_f`.
pub fn resolve_lattice<F>(
    spec: &LatticeSpec,
    default: (Vec<f64>, Vec<f64>),
    prior: &PriorSpec,
    log_f: &F,
) -> Result<Lattice>
where
    F: Fn(&Lattice) -> Vec<f64>,
{
    let d = default.0.len();
    if d > MAX_LATTICE_DIM {
        return Err(Error::Unsupported(format!(
            "lattice assembly is limited to d <= {MAX_LATTICE_DIM}, got d = {d}"
        )));
    }
    let mut lower = spec.lower.clone().unwrap_or(default.0);
    let mut upper = spec.upper.clone().unwrap_or(default.1);
    if lower.len() != d || upper.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: lower.len().min(upper.len()),
        });
    }
    clip_to_prior(&mut lower, &mut upper, prior);
    if spec.focus {
        let (l, u) = focus_bounds(lower, upper, log_f, 40.0)?;
        lower = l;
        upper = u;
    }
    let points = match &spec.points {
        Some(p) if p.len() == d => p.clone(),
        Some(p) if p.len() == 1 => vec![p[0]; d],
        Some(p) => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            })
        }
        None => vec![default_points(d); d],
    };
    Lattice::new(lower, upper, points)
}

/// `log g(θ) = Σᵢ log φ̂ᵢ(θ) + (2 − n) log π(θ)`.
pub fn log_unnormalised(factors: &[KdeFactor], prior: &PriorSpec, theta: &[f64]) -> f64 {
    let exponent = 1.0 - factors.len() as f64;
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    factors.iter().map(|f| f.logpdf(theta)).sum::<f64>() + exponent * lp
}

/// [`log_unnormalised`] at every cell centre of `lattice`.
pub fn log_unnormalised_on_lattice(factors: &[KdeFactor], prior: &PriorSpec, lattice: &Lattice) -> Vec<f64> {
    let exponent = 1.0 - factors.len() as f64;
    let mut vals = crate::tiled::sum_logpdf_on_lattice(factors, lattice);
    let mut c = vec![0.0; lattice.dim()];
    for (i, v) in vals.iter_mut().enumerate() {
        lattice.center_into(i, &mut c);
        let lp = prior.log_density(&c);
        *v = if lp == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            *v + exponent * lp
        };
    }
    vals
}

fn check_factors(factors: &[KdeFactor], prior: &PriorSpec) -> Result<usize> {
    let first = factors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no factors to assemble".into()))?;
    let d = first.dim;
    if factors.iter().any(|f| f.dim != d) || prior.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.dim(),
        });
    }
    Ok(d)
}

/// Normalised posterior from kernel factors evaluated on `lattice`.
pub fn assemble_lattice_posterior(
    factors: &[KdeFactor],
    prior: &PriorSpec,
    lattice: &Lattice,
) -> Result<LatticePosterior> {
    let d = check_factors(factors, prior)?;
    if d > MAX_LATTICE_DIM {
        return Err(Error::Unsupported(format!(
            "lattice assembly is limited to d <= {MAX_LATTICE_DIM}, got d = {d}"
        )));
    }
    if lattice.dim() != d {
        return Err(Error::LatticeMismatch);
    }
    if let PriorSpec::UniformBox { lower, upper } = prior {
        let outside = (0..d).any(|k| lattice.lower()[k] < lower[k] || lattice.upper()[k] > upper[k]);
        if outside {
            return Err(Error::InvalidArgument(
                "lattice extends beyond the uniform prior box (prior is zero there)".into(),
            ));
        }
    }
    let vals = log_unnormalised_on_lattice(factors, prior, lattice);
    LatticePosterior::from_log_values(lattice.clone(), vals)
}

/// Default-or-configured lattice, then assembly.
pub fn assemble_auto(
    factors: &[KdeFactor],
    prior: &PriorSpec,
    spec: &LatticeSpec,
) -> Result<LatticePosterior> {
    check_factors(factors, prior)?;
    let f = |lat: &Lattice| log_unnormalised_on_lattice(factors, prior, lat);
    let lattice = resolve_lattice(spec, default_bounds(factors, prior), prior, &f)?;
    assemble_lattice_posterior(factors, prior, &lattice)
}

/// `Σ log ĉᵢ + log ∫ ∏ φ̂ᵢ(θ) π(θ)^{2−n} dθ`.
pub fn log_marginal_kde(lp: &LatticePosterior, ci_logs: &[f64]) -> f64 {
    ci_logs.iter().sum::<f64>() + lp.log_normaliser
}

/// Every term of the kernel product, expanded.
#[derive(Debug, Clone)]
pub struct MixtureProduct {
    /// `∏ φ̂ᵢ = Σ w K(θ; a, B)` over all index tuples.
    pub product: Vec<WeightedGaussian>,
    /// The same terms multiplied by `π^{2−n}`: weights are `w′`, components
    /// are the normalised posterior pieces.
    pub posterior: Vec<WeightedGaussian>,
}

impl MixtureProduct {
    pub fn len(&self) -> usize {
        self.product.len()
    }

    pub fn is_empty(&self) -> bool {
        self.product.is_empty()
    }

    /// `log Σ w′`.
    pub fn log_integral(&self) -> f64 {
        let w: Vec<f64> = self.posterior.iter().map(|c| c.log_weight).collect();
        log_sum_exp(&w)
    }

    pub fn log_product(&self, theta: &ParamVec) -> Result<f64> {
        mixture_logpdf(&self.product, theta)
    }

    /// Normalised posterior log density.
    pub fn log_posterior(&self, theta: &ParamVec) -> Result<f64> {
        Ok(mixture_logpdf(&self.posterior, theta)? - self.log_integral())
    }
}

fn mixture_logpdf(parts: &[WeightedGaussian], theta: &ParamVec) -> Result<f64> {
    let v = parts
        .iter()
        .map(|c| c.log_value(theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&v))
}

/// Expands `∏ᵢ φ̂ᵢ` into its `m^{n−1}` Gaussian terms and applies the
/// Gaussian prior correction to each. All terms share `B = (Σ Hᵢ⁻¹)⁻¹`.
pub fn mixture_product_exact(factors: &[KdeFactor], prior: &PriorSpec) -> Result<MixtureProduct> {
    let d = check_factors(factors, prior)?;
    let pg = prior
        .as_gaussian()
        .ok_or_else(|| Error::Unsupported("the exact mixture needs a Gaussian prior".into()))?;
    let mut count: usize = 1;
    for f in factors {
        count = count
            .checked_mul(f.m())
            .filter(|c| *c <= MIXTURE_COMPONENT_CAP)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "mixture would exceed {MIXTURE_COMPONENT_CAP} components"
                ))
            })?;
    }
    let mut precision = DMatrix::zeros(d, d);
    for f in factors {
        precision += f.bandwidth.inverse();
    }
    let b = CovMatrix::from_precision(&precision).map_err(|_| Error::SingularFactor {
        factor: factors[0].factor_index,
    })?;
    // vᵢⱼ = B Hᵢ⁻¹ θᵢⱼ, so a = Σᵢ vᵢⱼᵢ
    let projected: Vec<Vec<ParamVec>> = factors
        .iter()
        .map(|f| {
            let t = b.matrix() * f.bandwidth.inverse();
            (0..f.m())
                .map(|j| &t * ParamVec::from_column_slice(f.sample(j)))
                .collect()
        })
        .collect();
    let base = 0.5 * (d as f64 * LN_2PI + b.log_det())
        - factors
            .iter()
            .map(|f| 0.5 * (d as f64 * LN_2PI + f.bandwidth.log_det()) + (f.m() as f64).ln())
            .sum::<f64>();
    let exponent = 1.0 - factors.len() as f64;

    let mut product = Vec::with_capacity(count);
    let mut posterior = Vec::with_capacity(count);
    let mut idx = vec![0usize; factors.len()];
    for _ in 0..count {
        let mut a = ParamVec::zeros(d);
        for (i, j) in idx.iter().enumerate() {
            a += &projected[i][*j];
        }
        let mut log_w = base;
        for (i, f) in factors.iter().enumerate() {
            let diff = ParamVec::from_column_slice(f.sample(idx[i])) - &a;
            log_w -= 0.5 * f.bandwidth.mahalanobis_sq(&diff);
        }
        let term = WeightedGaussian {
            log_weight: log_w,
            component: GaussianDensity::new(a, b.clone())?,
        };
        posterior.push(prior_correct(&term, &pg, exponent)?);
        product.push(term);
        for (i, f) in factors.iter().enumerate() {
            idx[i] += 1;
            if idx[i] < f.m() {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(MixtureProduct { product, posterior })
}

/// Draws cells by mass, then a uniform point inside the chosen cell.
pub fn sample_lattice_posterior(lp: &LatticePosterior, count: usize, seed: u64) -> Vec<ParamVec> {
    let masses = lp.cell_masses();
    let mut cumulative = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for p in &masses {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let d = lp.dim();
    crate::par::map_range(count, |j| {
        let mut r = rng::stream(seed, domain::POSTERIOR_SAMPLES, j as u64);
        let u: f64 = r.random::<f64>() * total;
        let cell = cumulative
            .partition_point(|c| *c <= u)
            .min(cumulative.len() - 1);
        let mut centre = vec![0.0; d];
        lp.lattice.center_into(cell, &mut centre);
        ParamVec::from_fn(d, |k, _| {
            centre[k] + (r.random::<f64>() - 0.5) * lp.lattice.spacing(k)
        })
    })
}
