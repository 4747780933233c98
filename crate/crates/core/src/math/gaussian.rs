//! Multivariate Gaussian densities and their closed-form products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A point in the transformed (inference-scale) parameter space.
pub type ParamVec = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive-definite covariance with its Cholesky factor cached.
///
/// Construction tries a plain Cholesky decomposition first. When that fails
/// a single ridge `λI` with `λ = 1e-10 · trace / d` is added; a zero trace
/// falls back to `λ = 1e-10`. If the ridged matrix still fails, construction
/// is a hard error.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl CovMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance entry".into()));
        }
        let scale = matrix.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let asym = (&matrix - matrix.transpose())
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale > 0.0 && asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym / scale));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;

        if let Some(c) = sym.clone().cholesky() {
            return Ok(Self::from_cholesky(sym, c.l(), 0.0));
        }
        let d = sym.nrows();
        let trace = sym.trace();
        let lambda = if trace > 0.0 {
            1e-10 * trace / d as f64
        } else {
            1e-10
        };
        let ridged = &sym + DMatrix::identity(d, d) * lambda;
        match ridged.clone().cholesky() {
            Some(c) => Ok(Self::from_cholesky(ridged, c.l(), lambda)),
            None => Err(Error::NotPositiveDefinite),
        }
    }

    fn from_cholesky(matrix: DMatrix<f64>, l: DMatrix<f64>, jitter: f64) -> Self {
        let d = matrix.nrows();
        let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let l_inv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("cholesky factor has a positive diagonal");
        let mut inverse = l_inv.transpose() * l_inv;
        inverse = (&inverse + inverse.transpose()) * 0.5;
        Self {
            matrix,
            chol_lower: l,
            inverse,
            log_det,
            jitter,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_diagonal(&vec![1.0; d]).expect("identity is positive definite")
    }

    pub fn from_diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    /// Builds the covariance whose inverse is `precision`.
    pub fn from_precision(precision: &DMatrix<f64>) -> Result<Self> {
        let p = (precision + precision.transpose()) * 0.5;
        let chol = p.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let mut inv = chol.inverse();
        inv = (&inv + inv.transpose()) * 0.5;
        Self::new(inv)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.matrix * factor)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Ridge added during construction (0 if none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L⁻¹ x`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol_lower
            .solve_lower_triangular(x)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `xᵀ Σ⁻¹ x`.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        self.whiten(x).norm_squared()
    }
}

/// `K(θ; μ, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    pub mean: ParamVec,
    pub cov: CovMatrix,
}

impl GaussianDensity {
    pub fn new(mean: ParamVec, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian mean".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: CovMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn logpdf(&self, theta: &ParamVec) -> Result<f64> {
        gaussian_logpdf(theta, self)
    }
}

/// A Gaussian density scaled by `exp(log_weight)`.
#[derive(Debug, Clone)]
pub struct WeightedGaussian {
    pub log_weight: f64,
    pub component: GaussianDensity,
}

impl WeightedGaussian {
    pub fn log_value(&self, theta: &ParamVec) -> Result<f64> {
        Ok(self.log_weight + gaussian_logpdf(theta, &self.component)?)
    }
}

/// Log of the multivariate normal density at `theta`.
pub fn gaussian_logpdf(theta: &ParamVec, g: &GaussianDensity) -> Result<f64> {
    let d = g.dim();
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.len(),
        });
    }
    let diff = theta - &g.mean;
    let quad = g.cov.mahalanobis_sq(&diff);
    Ok(-0.5 * (d as f64 * LN_2PI + g.cov.log_det() + quad))
}

/// Closed-form product of Gaussian densities: `∏ K(θ; μᵢ, Σᵢ) = w · K(θ; a, B)`.
///
/// `B = (Σ Σᵢ⁻¹)⁻¹`, `a = B Σ Σᵢ⁻¹ μᵢ`, and
/// `log w = ½ log det(2πB) − ½ Σ log det(2πΣᵢ) − ½ Σ (μᵢ − a)ᵀ Σᵢ⁻¹ (μᵢ − a)`.
pub fn gaussian_product(factors: &[GaussianDensity]) -> Result<WeightedGaussian> {
    let first = factors
        .first()
        .ok_or_else(|| Error::InvalidArgument("gaussian_product needs a factor".into()))?;
    let d = first.dim();
    if let Some(bad) = factors.iter().find(|f| f.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    if factors.len() == 1 {
        return Ok(WeightedGaussian {
            log_weight: 0.0,
            component: first.clone(),
        });
    }

    let mut precision = DMatrix::zeros(d, d);
    let mut info = DVector::zeros(d);
    for f in factors {
        precision += f.cov.inverse();
        info += f.cov.inverse() * &f.mean;
    }
    let b = match CovMatrix::from_precision(&precision) {
        Ok(b) => b,
        Err(_) => return Err(Error::SingularFactor {
            factor: offending_factor(factors),
        }),
    };
    let a = b.matrix() * info;

    let log_w = product_log_weight(factors, &a, &b);
    Ok(WeightedGaussian {
        log_weight: log_w,
        component: GaussianDensity { mean: a, cov: b },
    })
}

/// Log weight of `∏ K(θ; μᵢ, Σᵢ)` given the product's mean `a` and
/// covariance `b`.
pub(crate) fn product_log_weight(factors: &[GaussianDensity], a: &ParamVec, b: &CovMatrix) -> f64 {
    let d = b.dim() as f64;
    let mut log_w = 0.5 * (d * LN_2PI + b.log_det());
    for f in factors {
        log_w -= 0.5 * (d * LN_2PI + f.cov.log_det());
        log_w -= 0.5 * f.cov.mahalanobis_sq(&(&f.mean - a));
    }
    log_w
}

/// `Σ_{s<t} (xₛ − xₜ)ᵀ Pₛ B Pₜ (xₛ − xₜ)`: the pairwise form of the
/// product exponent. It equals `Σᵢ (xᵢ − a)ᵀ Pᵢ (xᵢ − a)` only when every
/// `Pₛ B Pₜ` is symmetric (one dimension, or two factors).
pub fn pairwise_quadratic(points: &[&ParamVec], precisions: &[&DMatrix<f64>], b: &DMatrix<f64>) -> f64 {
    let n = points.len();
    let left: Vec<DMatrix<f64>> = precisions.iter().map(|p| *p * b).collect();
    let mut total = 0.0;
    for s in 0..n {
        for t in (s + 1)..n {
            let diff = points[s] - points[t];
            let rhs = precisions[t] * &diff;
            total += diff.dot(&(&left[s] * rhs));
        }
    }
    total
}

fn offending_factor(factors: &[GaussianDensity]) -> usize {
    let d = factors[0].dim();
    let mut running = DMatrix::zeros(d, d);
    for (i, f) in factors.iter().enumerate() {
        running += f.cov.inverse();
        if running.clone().cholesky().is_none() {
            return i;
        }
    }
    factors.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn g1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::new(
            DVector::from_element(1, mean),
            CovMatrix::from_diagonal(&[var]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = gaussian_logpdf(&DVector::zeros(1), &GaussianDensity::standard(1)).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-14);
    }

    #[test]
    fn mode_in_d_dimensions() {
        for d in 1..5 {
            let v = gaussian_logpdf(&DVector::zeros(d), &GaussianDensity::standard(d)).unwrap();
            assert!((v + 0.5 * d as f64 * LN_2PI).abs() < 1e-13);
        }
    }

    #[test]
    fn two_sigma_point() {
        let v = gaussian_logpdf(&DVector::from_element(1, 2.0), &GaussianDensity::standard(1))
            .unwrap();
        assert!((v - (-0.918_938_533_204_672_7 - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn far_tail_stays_finite() {
        let v = gaussian_logpdf(&DVector::from_element(1, 1e6), &GaussianDensity::standard(1))
            .unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let err = gaussian_logpdf(&DVector::zeros(2), &GaussianDensity::standard(3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn non_pd_is_error() {
        let m = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(CovMatrix::new(m), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn asymmetric_is_error() {
        let m = dmatrix![1.0, 0.5; 0.4, 1.0];
        assert!(matches!(CovMatrix::new(m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn zero_matrix_gets_jitter() {
        let c = CovMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        assert!(c.jitter() > 0.0);
        assert!((c.matrix()[(0, 0)] - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn single_factor_product() {
        let f = g1(1.5, 2.0);
        let p = gaussian_product(std::slice::from_ref(&f)).unwrap();
        assert_eq!(p.log_weight, 0.0);
        assert_eq!(p.component.mean[0], 1.5);
        assert_eq!(p.component.cov.matrix()[(0, 0)], 2.0);
    }

    #[test]
    fn two_unit_normals_one_dimension() {
        let p = gaussian_product(&[g1(0.0, 1.0), g1(2.0, 1.0)]).unwrap();
        assert!((p.component.cov.matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.component.mean[0] - 1.0).abs() < 1e-15);
        // frozen from trapezoid quadrature of N(θ;0,1)N(θ;2,1) over [-10, 12]
        let quadrature = {
            let h = 1e-4;
            let steps = (22.0 / h) as usize;
            let f = |x: f64| {
                (-0.5 * x * x - 0.5 * (x - 2.0) * (x - 2.0)).exp() / (2.0 * std::f64::consts::PI)
            };
            let mut s = 0.5 * (f(-10.0) + f(12.0));
            for k in 1..steps {
                s += f(-10.0 + k as f64 * h);
            }
            s * h
        };
        let expected = (-1f64).exp() / (2.0 * std::f64::consts::PI.sqrt());
        assert!((quadrature - expected).abs() < 1e-10);
        assert!((p.log_weight.exp() - expected).abs() < 1e-14);
        assert!((p.log_weight.exp() - 0.103_776_874_355_148_7).abs() < 1e-12);
    }

    #[test]
    fn two_identity_normals_two_dimensions() {
        let p = gaussian_product(&[GaussianDensity::standard(2), GaussianDensity::standard(2)])
            .unwrap();
        let b = p.component.cov.matrix();
        assert!((b[(0, 0)] - 0.5).abs() < 1e-15 && b[(0, 1)].abs() < 1e-15);
        assert!(p.component.mean.norm() < 1e-15);
        let expected = 1.0 / (4.0 * std::f64::consts::PI);
        assert!((p.log_weight.exp() - expected).abs() < 1e-15);
    }

    #[test]
    fn pairwise_form_agrees_in_one_dimension() {
        let fs = [g1(0.3, 2.0), g1(-1.0, 0.5), g1(2.2, 1.3), g1(0.0, 4.0)];
        let prod = gaussian_product(&fs).unwrap();
        let pts: Vec<&ParamVec> = fs.iter().map(|f| &f.mean).collect();
        let precs: Vec<&DMatrix<f64>> = fs.iter().map(|f| f.cov.inverse()).collect();
        let pair = pairwise_quadratic(&pts, &precs, prod.component.cov.matrix());
        let exact: f64 = fs
            .iter()
            .map(|f| f.cov.mahalanobis_sq(&(&f.mean - &prod.component.mean)))
            .sum();
        assert!((pair - exact).abs() < 1e-12);
    }

    #[test]
    fn pairwise_form_is_not_exact_for_correlated_factors() {
        let cov = |a: f64, b: f64, c: f64| CovMatrix::new(dmatrix![a, b; b, c]).unwrap();
        let fs = [
            GaussianDensity::new(dvector![0.0, 1.0], cov(1.0, 0.8, 1.0)).unwrap(),
            GaussianDensity::new(dvector![1.0, -1.0], cov(2.0, -0.5, 0.5)).unwrap(),
            GaussianDensity::new(dvector![-1.0, 0.5], cov(0.3, 0.0, 3.0)).unwrap(),
        ];
        let prod = gaussian_product(&fs).unwrap();
        let pts: Vec<&ParamVec> = fs.iter().map(|f| &f.mean).collect();
        let precs: Vec<&DMatrix<f64>> = fs.iter().map(|f| f.cov.inverse()).collect();
        let pair = pairwise_quadratic(&pts, &precs, prod.component.cov.matrix());
        let exact: f64 = fs
            .iter()
            .map(|f| f.cov.mahalanobis_sq(&(&f.mean - &prod.component.mean)))
            .sum();
        assert!((pair - exact).abs() > 1e-3);
        let theta = dvector![0.2, 0.1];
        let lhs: f64 = fs.iter().map(|f| f.logpdf(&theta).unwrap()).sum();
        assert!((prod.log_value(&theta).unwrap() - lhs).abs() < 1e-12);
    }

    fn random_spd(d: usize, seed: &[f64]) -> CovMatrix {
        let a = DMatrix::from_fn(d, d, |i, j| seed[(i * d + j) % seed.len()]);
        CovMatrix::new(&a * a.transpose() + DMatrix::identity(d, d) * 0.3).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn product_identity_holds(
            d in 1usize..=3,
            n in 2usize..=5,
            raw in proptest::collection::vec(-1.5f64..1.5, 200),
        ) {
            let mut it = raw.iter().copied().cycle();
            let factors: Vec<GaussianDensity> = (0..n)
                .map(|_| {
                    let mean = DVector::from_fn(d, |_, _| it.next().unwrap());
                    let s: Vec<f64> = (0..d * d).map(|_| it.next().unwrap()).collect();
                    GaussianDensity::new(mean, random_spd(d, &s)).unwrap()
                })
                .collect();
            let prod = gaussian_product(&factors).unwrap();
            for _ in 0..10 {
                let theta = DVector::from_fn(d, |_, _| it.next().unwrap());
                let lhs: f64 = factors.iter().map(|f| f.logpdf(&theta).unwrap()).sum();
                let rhs = prod.log_value(&theta).unwrap();
                prop_assert!(((rhs - lhs).exp() - 1.0).abs() <= 1e-10, "lhs {} rhs {}", lhs, rhs);
            }

            let mut rev = factors.clone();
            rev.reverse();
            let prod_rev = gaussian_product(&rev).unwrap();
            prop_assert!((prod.log_weight - prod_rev.log_weight).abs() <= 1e-12);
            prop_assert!((prod.component.mean.clone() - prod_rev.component.mean.clone()).amax() <= 1e-12);
            prop_assert!((prod.component.cov.matrix() - prod_rev.component.cov.matrix()).amax() <= 1e-12);
        }
    }
}
