//! Log-domain probability mass and density helpers.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::logsum::LogSumExp;

const LN_2: f64 = std::f64::consts::LN_2;

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `log Binom(k; n, p)` given `log p` and `log(1 − p)`.
pub fn ln_binomial_pmf(k: u64, n: u64, ln_p: f64, ln_q: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let a = if k == 0 { 0.0 } else { k as f64 * ln_p };
    let b = if k == n { 0.0 } else { (n - k) as f64 * ln_q };
    ln_choose(n, k) + a + b
}

/// `log Po(k; λ)` given `log λ`.
pub fn ln_poisson_pmf(k: u64, lambda: f64, ln_lambda: f64) -> f64 {
    if k == 0 {
        -lambda
    } else {
        k as f64 * ln_lambda - lambda - ln_factorial(k)
    }
}

/// Log density of a central chi-square with `nu` degrees of freedom.
pub fn ln_chi2_pdf(y: f64, nu: f64) -> f64 {
    if y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let half = 0.5 * nu;
    (half - 1.0) * y.ln() - 0.5 * y - half * LN_2 - ln_gamma(half)
}

/// Log density of a non-central chi-square, `df` degrees of freedom and
/// non-centrality `ncp`, as a Poisson(ncp/2)-weighted sum of central
/// chi-square densities. Terms are added outward from the Poisson mode
/// until they fall below `rel_tol` times the running sum.
pub fn ln_noncentral_chi2_pdf(y: f64, df: f64, ncp: f64, rel_tol: f64) -> f64 {
    if y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ncp <= 0.0 {
        return ln_chi2_pdf(y, df);
    }
    let half_ncp = 0.5 * ncp;
    let ln_half_ncp = half_ncp.ln();
    let term = |j: u64| -> f64 {
        ln_poisson_pmf(j, half_ncp, ln_half_ncp) + ln_chi2_pdf(y, df + 2.0 * j as f64)
    };
    let ln_tol = rel_tol.ln();
    let start = half_ncp.floor() as u64;

    let mut acc = LogSumExp::new();
    let mut prev = f64::NEG_INFINITY;
    let mut j = start;
    loop {
        let t = term(j);
        acc.push(t);
        if t < prev && t < acc.value() + ln_tol {
            break;
        }
        prev = t;
        j += 1;
        if j > start + 10_000_000 {
            break;
        }
    }
    let mut prev = term(start);
    let mut j = start;
    while j > 0 {
        j -= 1;
        let t = term(j);
        acc.push(t);
        if t < prev && t < acc.value() + ln_tol {
            break;
        }
        prev = t;
    }
    acc.value()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_pmf_by_log_factorials() {
        let direct = {
            let lnf = |n: u64| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
            lnf(100) - lnf(60) - lnf(40) + 60.0 * 0.6f64.ln() + 40.0 * 0.4f64.ln()
        };
        let v = ln_binomial_pmf(60, 100, 0.6f64.ln(), 0.4f64.ln());
        assert!((v - direct).abs() < 1e-10);
        assert!((v - (-2.510_604_283_791_217)).abs() < 1e-9);
    }

    #[test]
    fn poisson_two_at_one() {
        assert!((ln_poisson_pmf(2, 1.0, 0.0) - (-1.693_147_180_559_945_2)).abs() < 1e-14);
    }

    #[test]
    fn noncentral_reduces_to_central() {
        let a = ln_noncentral_chi2_pdf(2.3, 3.0, 0.0, 1e-16);
        assert!((a - ln_chi2_pdf(2.3, 3.0)).abs() < 1e-15);
        let b = ln_noncentral_chi2_pdf(2.3, 3.0, 1e-300, 1e-16);
        assert!((b - a).abs() < 1e-12);
    }

    #[test]
    fn noncentral_integrates_to_one() {
        for &(df, ncp) in &[(3.0, 2.0), (88.9, 312.0), (2.5, 5.0)] {
            let mean: f64 = df + ncp;
            let sd = (2.0 * (df + 2.0 * ncp)).sqrt();
            let hi = mean + 40.0 * sd;
            let n = 400_000;
            let h = hi / n as f64;
            let s: f64 = (0..n)
                .map(|i| ln_noncentral_chi2_pdf((i as f64 + 0.5) * h, df, ncp, 1e-16).exp())
                .sum();
            assert!((s * h - 1.0).abs() < 2e-4, "df {df} ncp {ncp}: {}", s * h);
        }
    }

    #[test]
    fn noncentral_matches_mean() {
        let (df, ncp) = (5.0, 7.0);
        let n = 200_000;
        let h = 200.0 / n as f64;
        let m: f64 = (0..n)
            .map(|i| {
                let y = (i as f64 + 0.5) * h;
                y * ln_noncentral_chi2_pdf(y, df, ncp, 1e-16).exp()
            })
            .sum::<f64>()
            * h;
        assert!((m - (df + ncp)).abs() < 1e-6);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // statrs erfc is accurate to ~1e-12 here
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-11);
        assert!(normal_cdf(-40.0) >= 0.0);
    }
}
