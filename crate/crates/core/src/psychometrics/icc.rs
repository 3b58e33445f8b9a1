//! One-way random-effects, average-measures intraclass correlation.

use super::{f_quantile, PsychometricsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IccResult {
    pub icc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_targets: usize,
    pub k_raters: usize,
    pub ms_between: f64,
    pub ms_within: f64,
}

/// ICC(1,k) of an `n_targets x k_raters` matrix given as rows, with an
/// F-based confidence interval at level `confidence`.
pub fn icc_1k<R: AsRef<[f64]>>(rows: &[R], confidence: f64) -> Result<IccResult, PsychometricsError> {
    let n = rows.len();
    if n < 2 {
        return Err(PsychometricsError::InvalidArgument(format!("ICC needs at least 2 targets, got {n}")));
    }
    let k = rows[0].as_ref().len();
    if k < 2 {
        return Err(PsychometricsError::InvalidArgument(format!("ICC needs at least 2 raters, got {k}")));
    }
    if rows.iter().any(|r| r.as_ref().len() != k) {
        return Err(PsychometricsError::InvalidArgument("ragged rating matrix".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(PsychometricsError::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
    }
    if rows.iter().flat_map(|r| r.as_ref()).any(|v| !v.is_finite()) {
        return Err(PsychometricsError::NonFinite);
    }

    let target_means: Vec<f64> = rows.iter().map(|r| r.as_ref().iter().sum::<f64>() / k as f64).collect();
    let grand = target_means.iter().sum::<f64>() / n as f64;
    let ss_between: f64 = target_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * k as f64;
    let ss_within: f64 = rows
        .iter()
        .zip(&target_means)
        .map(|(r, m)| r.as_ref().iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df1 = (n - 1) as u32;
    let df2 = (n * (k - 1)) as u32;
    let msb = ss_between / df1 as f64;
    let msw = ss_within / df2 as f64;

    // Relative threshold so that rescaled data degenerates consistently.
    let scale = rows.iter().flat_map(|r| r.as_ref()).fold(0.0_f64, |a, v| a.max((v - grand).abs()));
    if msb <= f64::EPSILON * scale * scale * k as f64 {
        return Err(PsychometricsError::DegenerateData);
    }
    if msw == 0.0 {
        return Ok(IccResult { icc: 1.0, ci_low: 1.0, ci_high: 1.0, n_targets: n, k_raters: k, ms_between: msb, ms_within: msw });
    }

    let f = msb / msw;
    let tail = (1.0 - confidence) / 2.0;
    let q_upper = f_quantile(1.0 - tail, df1, df2)?;
    let q_lower = f_quantile(tail, df1, df2)?;
    Ok(IccResult {
        icc: (msb - msw) / msb,
        ci_low: 1.0 - q_upper / f,
        ci_high: 1.0 - q_lower / f,
        n_targets: n,
        k_raters: k,
        ms_between: msb,
        ms_within: msw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let r = icc_1k(&[[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]], 0.95).unwrap();
        assert_eq!(r.icc, 1.0);
        assert_eq!((r.ci_low, r.ci_high), (1.0, 1.0));
    }

    #[test]
    fn anova_fixture() {
        // MSB = 2 * ((1.5-3.5)^2 + 0 + (5.5-3.5)^2) / 2 = 8, MSW = 3 * 0.5 / 3 = 0.5
        let r = icc_1k(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], 0.95).unwrap();
        assert!((r.ms_between - 8.0).abs() < 1e-12);
        assert!((r.ms_within - 0.5).abs() < 1e-12);
        assert!((r.icc - 0.9375).abs() < 1e-12);
        assert!(r.ci_low <= r.icc && r.icc <= r.ci_high);
    }

    #[test]
    fn equal_target_means_are_degenerate() {
        let r = icc_1k(&[[1.0, 3.0], [3.0, 1.0], [2.0, 2.0]], 0.95);
        assert!(matches!(r, Err(PsychometricsError::DegenerateData)));
    }

    #[test]
    fn negative_icc_representable() {
        // Within-target spread larger than between-target spread.
        let r = icc_1k(&[[0.0, 4.0], [4.0, 1.0], [1.0, 4.0]], 0.95).unwrap();
        assert!(r.icc < 0.0);
        assert!(r.ci_low <= r.icc && r.icc <= r.ci_high && r.ci_high <= 1.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let one: [[f64; 2]; 1] = [[1.0, 2.0]];
        assert!(icc_1k(&one, 0.95).is_err());
        assert!(icc_1k(&[vec![1.0], vec![2.0]], 0.95).is_err());
        assert!(icc_1k(&[vec![1.0, 2.0], vec![2.0]], 0.95).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// ICC with SSB recovered as SST - SSW.
        fn anova_oracle(m: &[Vec<f64>]) -> f64 {
            let (n, k) = (m.len() as f64, m[0].len() as f64);
            let grand = m.iter().flatten().sum::<f64>() / (n * k);
            let sst: f64 = m.iter().flatten().map(|v| (v - grand).powi(2)).sum();
            let ssw: f64 = m
                .iter()
                .map(|r| {
                    let mu = r.iter().sum::<f64>() / k;
                    r.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
                })
                .sum();
            let msb = (sst - ssw) / (n - 1.0);
            let msw = ssw / (n * (k - 1.0));
            1.0 - msw / msb
        }

        fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (2usize..30, 2usize..8).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(0.0..4.0f64, k), n))
        }

        proptest! {
            #[test]
            fn matches_anova_oracle(m in matrix()) {
                if let Ok(r) = icc_1k(&m, 0.95) {
                    prop_assert!((r.icc - anova_oracle(&m)).abs() < 1e-10 * r.icc.abs().max(1.0));
                    prop_assert!(r.ci_low <= r.icc && r.icc <= r.ci_high);
                }
            }

            #[test]
            fn affine_and_rater_order_invariant(m in matrix(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
                let Ok(r) = icc_1k(&m, 0.95) else { return Ok(()) };
                let t: Vec<Vec<f64>> = m.iter().map(|row| row.iter().rev().map(|v| a * v + b).collect()).collect();
                let r2 = icc_1k(&t, 0.95).unwrap();
                prop_assert!((r.icc - r2.icc).abs() < 1e-9 * (1.0 + r.icc.abs()));
            }
        }
    }
}
