//! Quantiles of the F distribution.
//!
//! With `x = d1 F / (d1 F + d2)`, `x ~ Beta(d1 / 2, d2 / 2)`, so the F quantile
//! follows from inverting the regularized incomplete beta function. The
//! inversion is plain bisection over `[0, 1]` run to floating-point
//! resolution; upper-tail probabilities are solved on `1 - x` through the
//! reflection `I_x(a, b) = 1 - I_{1-x}(b, a)` so large quantiles keep their
//! precision.

use statrs::function::beta::beta_reg;

use super::PsychometricsError;

/// Inverse CDF of the F distribution with `(df1, df2)` degrees of freedom.
pub fn f_quantile(p: f64, df1: u32, df2: u32) -> Result<f64, PsychometricsError> {
    if !(0.0..=1.0).contains(&p) || df1 == 0 || df2 == 0 {
        return Err(PsychometricsError::InvalidArgument(format!(
            "f_quantile requires 0 <= p <= 1 and positive dfs, got p={p}, df=({df1}, {df2})"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    let (a, b) = (df1 as f64 / 2.0, df2 as f64 / 2.0);
    let (d1, d2) = (df1 as f64, df2 as f64);
    if p <= 0.5 {
        let x = invert_increasing(|x| beta_reg(a, b, x), p);
        Ok(d2 * x / (d1 * (1.0 - x)))
    } else {
        // y = 1 - x solves I_y(b, a) = 1 - p
        let y = invert_increasing(|y| beta_reg(b, a, y), 1.0 - p);
        Ok(d2 * (1.0 - y) / (d1 * y))
    }
}

/// Smallest-bracket bisection for an increasing CDF on `[0, 1]`.
fn invert_increasing(cdf: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: F density integrated by composite Simpson on
    /// `u = F^(1/4)` (smooth near zero for every df pair used here), then
    /// bisection on the resulting CDF.
    fn oracle_quantile(p: f64, d1: f64, d2: f64) -> f64 {
        let ln_norm = statrs::function::gamma::ln_gamma((d1 + d2) / 2.0)
            - statrs::function::gamma::ln_gamma(d1 / 2.0)
            - statrs::function::gamma::ln_gamma(d2 / 2.0)
            + (d1 / 2.0) * (d1 / d2).ln();
        let pdf = |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            (ln_norm + (d1 / 2.0 - 1.0) * x.ln() - ((d1 + d2) / 2.0) * (1.0 + d1 * x / d2).ln()).exp()
        };
        let cdf = |x: f64| {
            let umax = x.powf(0.25);
            let n = 20_000;
            let h = umax / n as f64;
            let g = |u: f64| pdf(u.powi(4)) * 4.0 * u.powi(3);
            let mut s = g(0.0) + g(umax);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * g(i as f64 * h);
            }
            s * h / 3.0
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while cdf(hi) < p {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn median_with_equal_dfs_is_one() {
        assert!((f_quantile(0.5, 10, 10).unwrap() - 1.0).abs() < 1e-9);
        assert!((f_quantile(0.5, 3, 3).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_numerical_integration_oracle() {
        for &(p, d1, d2) in &[(0.95, 5, 10), (0.975, 2, 15), (0.025, 14, 75), (0.975, 4, 25), (0.025, 4, 25)] {
            let got = f_quantile(p, d1, d2).unwrap();
            let want = oracle_quantile(p, d1 as f64, d2 as f64);
            assert!((got - want).abs() < 1e-7, "p={p} df=({d1},{d2}) got {got} oracle {want}");
        }
    }

    #[test]
    fn frozen_reference_values() {
        // Reference values from scipy.stats.f.ppf.
        let cases = [
            (0.95, 5, 10, 3.3258345304130112),
            (0.975, 2, 15, 4.765048283888203),
            (0.025, 14, 75, 0.3861696832863868),
            (0.975, 99, 500, 1.3370195932575284),
            (0.025, 99, 500, 0.7245712249905736),
            (0.999, 1, 1, 405284.0679028485),
            (0.001, 3, 7, 0.007599774174264018),
        ];
        for (p, d1, d2, want) in cases {
            let got = f_quantile(p, d1, d2).unwrap();
            let tol = 1e-9 * f64::max(want, 1.0);
            assert!((got - want).abs() < tol, "p={p} df=({d1},{d2}) got {got} want {want}");
        }
    }

    #[test]
    fn lower_limit_is_zero() {
        assert_eq!(f_quantile(0.0, 3, 4).unwrap(), 0.0);
        assert!(f_quantile(1e-12, 3, 4).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(f_quantile(1.5, 3, 4).is_err());
        assert!(f_quantile(0.5, 0, 4).is_err());
    }

    #[test]
    fn reciprocal_symmetry() {
        for &(p, d1, d2) in &[(0.025, 5, 60), (0.1, 2, 9)] {
            let a = f_quantile(p, d1, d2).unwrap();
            let b = f_quantile(1.0 - p, d2, d1).unwrap();
            assert!((a - 1.0 / b).abs() < 1e-10);
        }
    }
}
