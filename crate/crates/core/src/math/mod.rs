//! Parameter-space primitives: Gaussian algebra, acceptance-ball geometry,
//! log-domain accumulation and rectangular lattices.

pub mod ball;
pub mod gaussian;
pub mod lattice;
pub mod logsum;
pub mod special;

pub use ball::{ball_volume, LpBallSpec, NormOrder};
pub use gaussian::{
    gaussian_logpdf, gaussian_product, CovMatrix, GaussianDensity, ParamVec, WeightedGaussian,
};
pub use lattice::{lattice_integral, Lattice};
pub use logsum::{log_sum_exp, LogSumExp};
