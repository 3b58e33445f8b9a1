//! Single-factor confirmatory factor analysis on three indicators and
//! Bartlett factor scores.
//!
//! The model is `x = mu + lambda * eta + e` with `Var(eta) = 1` and
//! `Cov(e) = diag(eps)`. Three indicators give six covariance moments for six
//! free parameters, so the maximum-likelihood solution reproduces the sample
//! covariance exactly and has the closed form
//!
//! ```text
//! lambda_1 = sqrt(s12 * s13 / s23)   (cyclic for 2 and 3)
//! eps_i    = s_ii - lambda_i^2
//! ```

use super::PsychometricsError;
use crate::ingest::ClipId;

/// Minimum number of observations accepted by [`fit_cfa`].
pub const MIN_OBSERVATIONS: usize = 10;

pub type Cov3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfaFit {
    pub loadings: [f64; 3],
    /// Residual variances after Heywood clamping (never negative).
    pub residual_vars: [f64; 3],
    pub means: [f64; 3],
    pub indicator_sds: [f64; 3],
    /// Indicators whose unclamped residual variance came out negative.
    pub heywood: [bool; 3],
    pub n: usize,
}

impl CfaFit {
    pub fn standardized_loadings(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.loadings[i] / self.indicator_sds[i])
    }

    pub fn standardized_residuals(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.residual_vars[i] / self.indicator_sds[i].powi(2))
    }

    pub fn has_heywood(&self) -> bool {
        self.heywood.iter().any(|&h| h)
    }

    /// Residual variances before clamping; negative for Heywood indicators.
    pub fn unclamped_residuals(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.indicator_sds[i].powi(2) - self.loadings[i].powi(2))
    }

    /// `Sigma(theta) = lambda lambda^T + diag(eps)` at the unclamped estimate,
    /// which reproduces the fitted covariance.
    pub fn implied_covariance(&self) -> Cov3 {
        let eps = self.unclamped_residuals();
        std::array::from_fn(|i| {
            std::array::from_fn(|j| self.loadings[i] * self.loadings[j] + if i == j { eps[i] } else { 0.0 })
        })
    }
}

/// Column means and ML (divide-by-n) covariance of an `n x 3` matrix.
pub fn sample_moments(x: &[[f64; 3]]) -> ([f64; 3], Cov3) {
    let n = x.len() as f64;
    let means: [f64; 3] = std::array::from_fn(|j| x.iter().map(|r| r[j]).sum::<f64>() / n);
    let mut cov = [[0.0; 3]; 3];
    for r in x {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (r[i] - means[i]) * (r[j] - means[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);
    (means, cov)
}

/// Fits the single-factor model to per-clip question means.
pub fn fit_cfa(x: &[[f64; 3]]) -> Result<CfaFit, PsychometricsError> {
    if x.len() < MIN_OBSERVATIONS {
        return Err(PsychometricsError::TooFewObservations { n: x.len(), min: MIN_OBSERVATIONS });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PsychometricsError::NonFinite);
    }
    let (means, cov) = sample_moments(x);
    fit_cfa_covariance(&cov, means, x.len())
}

/// Closed-form solution from a covariance matrix.
pub fn fit_cfa_covariance(cov: &Cov3, means: [f64; 3], n: usize) -> Result<CfaFit, PsychometricsError> {
    let (s12, s13, s23) = (cov[0][1], cov[0][2], cov[1][2]);
    if !(s12 > 0.0 && s13 > 0.0 && s23 > 0.0) {
        return Err(PsychometricsError::NonPositiveCovariance);
    }
    let loadings = [(s12 * s13 / s23).sqrt(), (s12 * s23 / s13).sqrt(), (s13 * s23 / s12).sqrt()];
    let mut residual_vars = [0.0; 3];
    let mut heywood = [false; 3];
    for i in 0..3 {
        let eps = cov[i][i] - loadings[i] * loadings[i];
        heywood[i] = eps < 0.0;
        residual_vars[i] = eps.max(0.0);
    }
    Ok(CfaFit {
        loadings,
        residual_vars,
        means,
        indicator_sds: std::array::from_fn(|i| cov[i][i].sqrt()),
        heywood,
        n,
    })
}

/// A clip's Bartlett factor score.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip: ClipId,
    pub score: f64,
}

/// Linear weights `w` with `eta_hat = w . (x - mu)`.
///
/// `w = (L' P^-1 L)^-1 L' P^-1` with `P = diag(eps)`. When some residual
/// variances are zero the weights take the limit in which those indicators
/// are exact: only they contribute, in proportion to their loadings.
pub fn bartlett_weights(fit: &CfaFit) -> Result<[f64; 3], PsychometricsError> {
    let exact: Vec<usize> = (0..3).filter(|&i| fit.residual_vars[i] == 0.0 && fit.loadings[i] != 0.0).collect();
    let mut w = [0.0; 3];
    if exact.is_empty() {
        let info: f64 = (0..3).map(|i| fit.loadings[i].powi(2) / fit.residual_vars[i]).sum();
        if info == 0.0 || !info.is_finite() {
            return Err(PsychometricsError::AllZeroLoadings);
        }
        for i in 0..3 {
            w[i] = fit.loadings[i] / fit.residual_vars[i] / info;
        }
    } else {
        let info: f64 = exact.iter().map(|&i| fit.loadings[i].powi(2)).sum();
        for &i in &exact {
            w[i] = fit.loadings[i] / info;
        }
    }
    Ok(w)
}

/// Bartlett factor scores for each row of `x`.
pub fn bartlett_scores(fit: &CfaFit, x: &[[f64; 3]]) -> Result<Vec<f64>, PsychometricsError> {
    let w = bartlett_weights(fit)?;
    Ok(x.iter().map(|r| (0..3).map(|i| w[i] * (r[i] - fit.means[i])).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_from_corr(r12: f64, r13: f64, r23: f64) -> CfaFit {
        let cov = [[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]];
        fit_cfa_covariance(&cov, [0.0; 3], 100).unwrap()
    }

    /// ML discrepancy `log|Sigma| + tr(S Sigma^-1)` minimised by shrinking-step
    /// pattern search over (lambda, eps). Independent of the triad formulas.
    fn ml_oracle(s: &Cov3) -> [f64; 6] {
        fn det3(m: &Cov3) -> f64 {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        fn inv3(m: &Cov3) -> Cov3 {
            let d = det3(m);
            let minor = |r: usize, c: usize| {
                let rows: Vec<usize> = (0..3).filter(|&x| x != r).collect();
                let cols: Vec<usize> = (0..3).filter(|&x| x != c).collect();
                m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]]
            };
            std::array::from_fn(|i| {
                std::array::from_fn(|j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 } * minor(j, i) / d)
            })
        }
        let obj = |t: &[f64; 6]| {
            let sigma: Cov3 =
                std::array::from_fn(|i| std::array::from_fn(|j| t[i] * t[j] + if i == j { t[3 + i] } else { 0.0 }));
            let d = det3(&sigma);
            if d <= 0.0 || t[3..].iter().any(|&e| e <= 0.0) {
                return f64::INFINITY;
            }
            let inv = inv3(&sigma);
            let tr: f64 = (0..3).map(|i| (0..3).map(|j| s[i][j] * inv[j][i]).sum::<f64>()).sum();
            d.ln() + tr
        };
        let mut t = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let mut best = obj(&t);
        let mut step = 0.25;
        while step > 1e-11 {
            let mut improved = false;
            for k in 0..6 {
                for dir in [1.0, -1.0] {
                    let mut c = t;
                    c[k] += dir * step;
                    let v = obj(&c);
                    if v < best {
                        best = v;
                        t = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        t
    }

    #[test]
    fn triad_example_loadings() {
        let fit = fit_from_corr(0.72, 0.63, 0.56);
        let std = fit.standardized_loadings();
        for (got, want) in std.iter().zip([0.9, 0.8, 0.7]) {
            assert!((got - want).abs() < 1e-12);
        }
        let oracle = ml_oracle(&[[1.0, 0.72, 0.63], [0.72, 1.0, 0.56], [0.63, 0.56, 1.0]]);
        for i in 0..3 {
            assert!((oracle[i] - fit.loadings[i]).abs() < 1e-6, "{oracle:?}");
            assert!((oracle[3 + i] - fit.residual_vars[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn equicorrelated_loadings() {
        let fit = fit_from_corr(0.64, 0.64, 0.64);
        assert!(fit.standardized_loadings().iter().all(|l| (l - 0.8).abs() < 1e-12));
    }

    #[test]
    fn standardized_parts_sum_to_one() {
        let fit = fit_from_corr(0.72, 0.63, 0.56);
        let (l, e) = (fit.standardized_loadings(), fit.standardized_residuals());
        for i in 0..3 {
            assert!((l[i] * l[i] + e[i] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn heywood_is_flagged_and_clamped() {
        // lambda_1^2 = 0.9 * 0.9 / 0.5 = 1.62 > 1
        let fit = fit_from_corr(0.9, 0.9, 0.5);
        assert!(fit.heywood[0] && !fit.heywood[1]);
        assert_eq!(fit.residual_vars[0], 0.0);
    }

    #[test]
    fn non_positive_covariance_rejected() {
        let cov = [[1.0, 0.5, -0.1], [0.5, 1.0, 0.3], [-0.1, 0.3, 1.0]];
        assert!(matches!(fit_cfa_covariance(&cov, [0.0; 3], 50), Err(PsychometricsError::NonPositiveCovariance)));
    }

    #[test]
    fn too_few_observations() {
        let x = vec![[1.0, 2.0, 3.0]; 9];
        assert!(matches!(fit_cfa(&x), Err(PsychometricsError::TooFewObservations { .. })));
    }

    fn manual_fit(loadings: [f64; 3], residual_vars: [f64; 3]) -> CfaFit {
        CfaFit { loadings, residual_vars, means: [0.0; 3], indicator_sds: [1.0; 3], heywood: [false; 3], n: 0 }
    }

    #[test]
    fn bartlett_symmetric_average() {
        let fit = manual_fit([1.0; 3], [1.0; 3]);
        let s = bartlett_scores(&fit, &[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn bartlett_noiseless_generative_point() {
        let fit = manual_fit([0.9, 0.8, 0.7], [0.19, 0.36, 0.51]);
        // Closed-form: sum(l^2/e) / sum(l^2/e) = 1.
        let s = bartlett_scores(&fit, &[[0.9, 0.8, 0.7]]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bartlett_exact_indicator_limit() {
        let fit = manual_fit([0.9, 0.8, 0.7], [0.0, 0.36, 0.51]);
        let s = bartlett_scores(&fit, &[[1.8, -5.0, 9.0]]).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12);
        // The limit agrees with a tiny positive residual variance.
        let near = manual_fit([0.9, 0.8, 0.7], [1e-12, 0.36, 0.51]);
        let t = bartlett_scores(&near, &[[1.8, -5.0, 9.0]]).unwrap();
        assert!((s[0] - t[0]).abs() < 1e-9);
    }

    #[test]
    fn bartlett_zero_loadings() {
        let fit = manual_fit([0.0; 3], [1.0; 3]);
        assert!(matches!(bartlett_scores(&fit, &[[1.0; 3]]), Err(PsychometricsError::AllZeroLoadings)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triad_reproduces_covariance(a in prop::array::uniform9(0.01..2.0f64), ridge in 0.0..1.0f64) {
                // S = A A^T + ridge I has positive off-diagonals and is PD.
                let cov: Cov3 = std::array::from_fn(|i| std::array::from_fn(|j| {
                    (0..3).map(|k| a[3 * i + k] * a[3 * j + k]).sum::<f64>() + if i == j { ridge + 1e-3 } else { 0.0 }
                }));
                let fit = fit_cfa_covariance(&cov, [0.0; 3], 100).unwrap();
                let sigma = fit.implied_covariance();
                for i in 0..3 {
                    for j in 0..3 {
                        prop_assert!((sigma[i][j] - cov[i][j]).abs() < 1e-8 * (1.0 + cov[i][j].abs()));
                    }
                }
                let std_l = fit.standardized_loadings();
                let eps = fit.unclamped_residuals();
                for i in 0..3 {
                    prop_assert!((std_l[i].powi(2) + eps[i] / cov[i][i] - 1.0).abs() < 1e-12);
                    prop_assert_eq!(fit.heywood[i], eps[i] < 0.0);
                }
            }
        }
    }
}
