use serde::{Deserialize, Serialize};

use super::gaussian::ParamVec;
use super::logsum::log_sum_exp;
use crate::error::{Error, Result};
use crate::par;

/// Rectangular midpoint lattice. Values on the lattice are stored row-major
/// with the last dimension varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points_per_dim: Vec<usize>,
}

impl Lattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_dim: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if upper.len() != d || points_per_dim.len() != d || d == 0 {
            return Err(Error::InvalidArgument(
                "lattice bounds and resolution must share a positive dimension".into(),
            ));
        }
        for k in 0..d {
            if !(lower[k] < upper[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "lattice dimension {k}: need finite lower < upper, got [{}, {}]",
                    lower[k], upper[k]
                )));
            }
            if points_per_dim[k] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "lattice dimension {k} has no points"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            points_per_dim,
        })
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>, points: usize) -> Result<Self> {
        let d = lower.len();
        Self::new(lower, upper, vec![points; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points_per_dim(&self) -> &[usize] {
        &self.points_per_dim
    }

    pub fn cell_count(&self) -> usize {
        self.points_per_dim.iter().product()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / self.points_per_dim[k] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn log_cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k).ln()).sum()
    }

    /// Cell centres along axis `k`.
    pub fn axis(&self, k: usize) -> Vec<f64> {
        let h = self.spacing(k);
        (0..self.points_per_dim[k])
            .map(|i| self.lower[k] + (i as f64 + 0.5) * h)
            .collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        for k in (0..d).rev() {
            idx[k] = flat % self.points_per_dim[k];
            flat /= self.points_per_dim[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.points_per_dim)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for k in (0..self.dim()).rev() {
            let i = rest % self.points_per_dim[k];
            rest /= self.points_per_dim[k];
            out[k] = self.lower[k] + (i as f64 + 0.5) * self.spacing(k);
        }
    }

    pub fn center(&self, flat: usize) -> ParamVec {
        let mut out = vec![0.0; self.dim()];
        self.center_into(flat, &mut out);
        ParamVec::from_vec(out)
    }

    /// Flat index of the cell containing `theta`, if inside.
    pub fn locate(&self, theta: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for (k, &t) in theta.iter().enumerate() {
            if t < self.lower[k] || t >= self.upper[k] {
                return None;
            }
            let i = ((t - self.lower[k]) / self.spacing(k)).floor() as usize;
            idx.push(i.min(self.points_per_dim[k] - 1));
        }
        Some(self.flat_index(&idx))
    }

    /// Same bounds, `factor`× the points per dimension.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            points_per_dim: self.points_per_dim.iter().map(|n| n * factor).collect(),
        }
    }

    /// Bounds translated by `fraction` of a cell in every dimension.
    pub fn shifted(&self, fraction: f64) -> Self {
        let delta: Vec<f64> = (0..self.dim()).map(|k| fraction * self.spacing(k)).collect();
        Self {
            lower: self.lower.iter().zip(&delta).map(|(l, d)| l + d).collect(),
            upper: self.upper.iter().zip(&delta).map(|(u, d)| u + d).collect(),
            points_per_dim: self.points_per_dim.clone(),
        }
    }

    /// Evaluates `f` at every cell centre (in parallel when enabled).
    pub fn evaluate<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let mut out = vec![0.0; self.cell_count()];
        let d = self.dim();
        par::fill_indexed(&mut out, |i| {
            let mut buf = [0.0f64; 8];
            let theta = &mut buf[..d];
            self.center_into(i, theta);
            f(theta)
        });
        out
    }
}

/// Log of the midpoint-rule integral of `exp(logvals)` over the lattice.
pub fn lattice_integral(logvals: &[f64], lat: &Lattice) -> Result<f64> {
    if logvals.len() != lat.cell_count() {
        return Err(Error::ShapeMismatch {
            expected: lat.cell_count(),
            got: logvals.len(),
        });
    }
    Ok(log_sum_exp(logvals) + lat.log_cell_volume())
}
