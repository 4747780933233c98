//! Kernel sums over whole lattices.
//!
//! Inside a block of cells around a centre `c`, a Gaussian kernel term
//! `−½(c + δ − x)ᵀP(c + δ − x)` splits as `E − δᵀg − ½δᵀPδ` with `g = P(c − x)`.
//! The middle term is a sum over axes, so the block of sums reduces to one
//! exponential per sample and axis followed by a matrix product.

use nalgebra::DMatrix;

use crate::kde::KdeFactor;
use crate::math::Lattice;

/// Samples whose every term in a block is this many nats below the best
/// sample's are dropped.
const DROP_NATS: f64 = 40.0;
/// Largest per-axis exponent allowed before a block falls back to direct sums.
const MAX_AXIS_EXPONENT: f64 = 300.0;

#[derive(Debug, Clone)]
pub(crate) struct Block {
    start: [usize; 3],
    len: [usize; 3],
}

impl Block {
    pub(crate) fn cells(&self) -> usize {
        self.len.iter().product()
    }
}

fn block_width(d: usize) -> usize {
    match d {
        1 => 64,
        2 => 16,
        _ => 8,
    }
}

pub(crate) fn blocks(lattice: &Lattice) -> Vec<Block> {
    let d = lattice.dim();
    let w = block_width(d);
    let pts = lattice.points_per_dim();
    let counts: Vec<usize> = (0..3).map(|k| if k < d { pts[k].div_ceil(w) } else { 1 }).collect();
    let mut out = Vec::with_capacity(counts.iter().product());
    for b0 in 0..counts[0] {
        for b1 in 0..counts[1] {
            for b2 in 0..counts[2] {
                let b = [b0, b1, b2];
                let mut start = [0; 3];
                let mut len = [1; 3];
                for k in 0..d {
                    start[k] = b[k] * w;
                    len[k] = w.min(pts[k] - start[k]);
                }
                out.push(Block { start, len });
            }
        }
    }
    out
}

/// Flat lattice index of each cell of `block`, in block order.
pub(crate) fn block_indices(lattice: &Lattice, block: &Block) -> Vec<usize> {
    let d = lattice.dim();
    let mut out = Vec::with_capacity(block.cells());
    let mut idx = vec![0usize; d];
    for t0 in 0..block.len[0] {
        for t1 in 0..block.len[1] {
            for t2 in 0..block.len[2] {
                let t = [t0, t1, t2];
                for k in 0..d {
                    idx[k] = block.start[k] + t[k];
                }
                out.push(lattice.flat_index(&idx));
            }
        }
    }
    out
}

/// Adds `log φ̂` at every cell of `block` to `out`.
pub(crate) fn add_block_logpdf(f: &KdeFactor, lattice: &Lattice, block: &Block, out: &mut [f64]) {
    let d = f.dim;
    let w = f.whitener();
    let white = f.whitened();
    let m = f.m();

    let mut h = [0.0; 3];
    let mut half = [0.0; 3];
    let mut centre = [0.0; 3];
    for k in 0..d {
        h[k] = lattice.spacing(k);
        half[k] = 0.5 * (block.len[k] as f64 - 1.0) * h[k];
        centre[k] = lattice.lower()[k] + (block.start[k] as f64 + 0.5 * block.len[k] as f64) * h[k];
    }
    let zc = lower_apply(w, &centre[..d]);

    // largest whitened offset from the centre over the block's corners
    let mut rho: f64 = 0.0;
    for corner in 0..(1usize << d) {
        let off: Vec<f64> = (0..d)
            .map(|k| if corner >> k & 1 == 1 { half[k] } else { -half[k] })
            .collect();
        let z = lower_apply(w, &off);
        rho = rho.max(z.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    let mut r2 = vec![0.0; m];
    let mut best = f64::INFINITY;
    for j in 0..m {
        let s: f64 = (0..d).map(|k| (zc[k] - white[j * d + k]).powi(2)).sum();
        r2[j] = s;
        best = best.min(s);
    }
    let best_r = best.sqrt();
    let keep: Vec<usize> = (0..m)
        .filter(|&j| 0.5 * (r2[j] - best) - rho * (r2[j].sqrt() + best_r) <= DROP_NATS)
        .collect();

    let rest: usize = block.len[1] * block.len[2];
    let mut left = DMatrix::<f64>::zeros(block.len[0], keep.len());
    let mut right = DMatrix::<f64>::zeros(keep.len(), rest);
    let mut axis = [vec![0.0; block.len[0]], vec![0.0; block.len[1]], vec![0.0; block.len[2]]];
    for (col, &j) in keep.iter().enumerate() {
        let diff: Vec<f64> = (0..d).map(|k| zc[k] - white[j * d + k]).collect();
        for k in 0..3 {
            if k >= d {
                axis[k][0] = 1.0;
                continue;
            }
            // g_k = (Wᵀ diff)_k
            let g: f64 = (k..d).map(|r| w[(r, k)] * diff[r]).sum();
            if (half[k] * g).abs() > MAX_AXIS_EXPONENT {
                return add_block_direct(f, lattice, block, out);
            }
            let ratio = (-h[k] * g).exp();
            let mut v = (half[k] * g).exp();
            for slot in axis[k].iter_mut() {
                *slot = v;
                v *= ratio;
            }
        }
        let a = (-0.5 * (r2[j] - best)).exp();
        for t0 in 0..block.len[0] {
            left[(t0, col)] = a * axis[0][t0];
        }
        for t1 in 0..block.len[1] {
            for t2 in 0..block.len[2] {
                right[(col, t1 * block.len[2] + t2)] = axis[1][t1] * axis[2][t2];
            }
        }
    }
    let sums = left * right;

    let base = f.log_const() - 0.5 * best;
    let idx = block_indices(lattice, block);
    let mut cell = 0;
    let mut delta = [0.0; 3];
    for t0 in 0..block.len[0] {
        for t1 in 0..block.len[1] {
            for t2 in 0..block.len[2] {
                let t = [t0, t1, t2];
                for k in 0..d {
                    delta[k] = t[k] as f64 * h[k] - half[k];
                }
                let s = sums[(t0, t1 * block.len[2] + t2)];
                out[cell] += if s > 0.0 && s.is_finite() {
                    let z = lower_apply(w, &delta[..d]);
                    base - 0.5 * z.iter().map(|v| v * v).sum::<f64>() + s.ln()
                } else {
                    let mut c = vec![0.0; d];
                    lattice.center_into(idx[cell], &mut c);
                    f.logpdf(&c)
                };
                cell += 1;
            }
        }
    }
}

fn add_block_direct(f: &KdeFactor, lattice: &Lattice, block: &Block, out: &mut [f64]) {
    let mut c = vec![0.0; f.dim];
    for (slot, i) in out.iter_mut().zip(block_indices(lattice, block)) {
        lattice.center_into(i, &mut c);
        *slot += f.logpdf(&c);
    }
}

fn lower_apply(w: &DMatrix<f64>, x: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for r in 0..x.len() {
        out[r] = (0..=r).map(|c| w[(r, c)] * x[c]).sum();
    }
    out
}

/// `Σᵢ log φ̂ᵢ` at every cell centre of `lattice` (`d ≤ 3`).
pub(crate) fn sum_logpdf_on_lattice(factors: &[KdeFactor], lattice: &Lattice) -> Vec<f64> {
    let bl = blocks(lattice);
    let parts = crate::par::map_range(bl.len(), |b| {
        let mut acc = vec![0.0; bl[b].cells()];
        for f in factors {
            add_block_logpdf(f, lattice, &bl[b], &mut acc);
        }
        acc
    });
    let mut out = vec![0.0; lattice.cell_count()];
    for (block, vals) in bl.iter().zip(parts) {
        for (i, v) in block_indices(lattice, block).into_iter().zip(vals) {
            out[i] = v;
        }
    }
    out
}
