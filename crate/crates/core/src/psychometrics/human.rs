//! Aggregating rater answers and the single-rater human baseline.

use std::collections::BTreeMap;

use super::{CfaFit, PsychometricsError};
use crate::ingest::{ClipId, RatingsTable};

/// Per-clip mean answer to each question.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMeans {
    pub clip: ClipId,
    pub means: [f64; 3],
    pub n_raters: usize,
}

pub fn mean_answers(table: &RatingsTable) -> Vec<ClipMeans> {
    table
        .by_clip()
        .into_iter()
        .map(|(clip, ratings)| {
            let k = ratings.len() as f64;
            let means = std::array::from_fn(|q| ratings.iter().map(|r| r.answers[q] as f64).sum::<f64>() / k);
            ClipMeans { clip: clip.clone(), means, n_raters: ratings.len() }
        })
        .collect()
}

/// Fails with `InsufficientRaters` unless every clip has at least `min` raters.
pub fn require_raters(table: &RatingsTable, min: usize) -> Result<(), PsychometricsError> {
    match table.by_clip().into_iter().find(|(_, r)| r.len() < min) {
        Some((clip, r)) => Err(PsychometricsError::InsufficientRaters { clip: clip.to_string(), found: r.len(), required: min }),
        None => Ok(()),
    }
}

/// Clip-by-rater matrix of answers to question `q` (0-based). Every clip must
/// have the same number of raters; columns follow rater-id order within each
/// clip, which is immaterial for the one-way model.
pub fn question_matrix(table: &RatingsTable, q: usize) -> Result<Vec<Vec<f64>>, PsychometricsError> {
    let by_clip = table.by_clip();
    let k = by_clip.values().next().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(by_clip.len());
    for (clip, ratings) in by_clip {
        if ratings.len() != k {
            return Err(PsychometricsError::UnbalancedRatings { clip: clip.to_string(), found: ratings.len(), expected: k });
        }
        rows.push(ratings.iter().map(|r| r.answers[q] as f64).collect());
    }
    Ok(rows)
}

/// Standardized single-rater scores paired with the standardized mean of the
/// other raters on the same clips.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterPairs {
    pub clips: Vec<ClipId>,
    pub predicted: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaterOutcome {
    pub rater: String,
    pub pairs: Result<RaterPairs, PsychometricsError>,
}

/// Builds the human baseline: each rater's loading-weighted answer sum,
/// standardized over the clips they rated, against the standardized mean of
/// the remaining raters' weighted sums on those clips.
pub fn human_baseline_scores(
    table: &RatingsTable,
    fit: &CfaFit,
    raters_per_clip: usize,
) -> Result<Vec<RaterOutcome>, PsychometricsError> {
    require_raters(table, raters_per_clip.max(2))?;
    let weighted = |a: &[u8; 3]| (0..3).map(|i| fit.loadings[i] * a[i] as f64).sum::<f64>();

    // rater -> (clip, own sum, mean of the others)
    let mut per_rater: BTreeMap<&str, (Vec<ClipId>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (clip, ratings) in table.by_clip() {
        let sums: Vec<f64> = ratings.iter().map(|r| weighted(&r.answers)).collect();
        let total: f64 = sums.iter().sum();
        let others = (sums.len() - 1) as f64;
        for (r, &own) in ratings.iter().zip(&sums) {
            let entry = per_rater.entry(r.rater.as_str()).or_default();
            entry.0.push(clip.clone());
            entry.1.push(own);
            entry.2.push((total - own) / others);
        }
    }

    Ok(per_rater
        .into_iter()
        .map(|(rater, (clips, own, rest))| {
            let pairs = match (standardize(&own), standardize(&rest)) {
                (Some(predicted), Some(target)) => Ok(RaterPairs { clips, predicted, target }),
                _ => Err(PsychometricsError::StandardizationDegenerate { rater: rater.to_string() }),
            };
            RaterOutcome { rater: rater.to_string(), pairs }
        })
        .collect())
}

/// z-scores with the population standard deviation; `None` for fewer than
/// two values or zero variance.
pub fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if !(sd > 1e-12 * scale.max(1e-300)) {
        return None;
    }
    Some(v.iter().map(|x| (x - mean) / sd).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Rating, Task, Window};

    fn table(rows: &[(&str, u32, [u8; 3])]) -> RatingsTable {
        RatingsTable::from_rows(
            rows.iter()
                .map(|&(rater, clip, answers)| Rating {
                    clip: ClipId::new("S1", Task::Startle, Window::from_start(3 * clip, 3 * clip + 3)),
                    rater: rater.into(),
                    answers,
                })
                .collect(),
        )
        .unwrap()
    }

    fn unit_fit() -> CfaFit {
        CfaFit { loadings: [0.9, 0.8, 0.7], residual_vars: [0.1; 3], means: [0.0; 3], indicator_sds: [1.0; 3], heywood: [false; 3], n: 10 }
    }

    #[test]
    fn means_of_constant_raters() {
        let raters = ["A", "B", "C", "D", "E", "F"];
        let rows: Vec<_> = raters.iter().map(|&r| (r, 1, [2, 3, 1])).collect();
        let m = mean_answers(&table(&rows));
        assert_eq!(m[0].means, [2.0, 3.0, 1.0]);
        assert_eq!(m[0].n_raters, 6);
    }

    #[test]
    fn means_of_split_answers() {
        let rows: Vec<_> = (0..6).map(|i| (["A", "B", "C", "D", "E", "F"][i], 1, [if i % 2 == 0 { 0 } else { 4 }, 1, 1])).collect();
        assert_eq!(mean_answers(&table(&rows))[0].means[0], 2.0);
    }

    #[test]
    fn identical_raters_agree_perfectly() {
        let raters = ["A", "B", "C", "D", "E", "F"];
        let mut rows = Vec::new();
        for clip in 1..=5u32 {
            let a = clip as u8 % 5;
            for r in raters {
                rows.push((r, clip, [a, (a + 1) % 5, a]));
            }
        }
        let out = human_baseline_scores(&table(&rows), &unit_fit(), 6).unwrap();
        assert_eq!(out.len(), 6);
        for o in out {
            let p = o.pairs.unwrap();
            for (a, b) in p.predicted.iter().zip(&p.target) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_rater_is_degenerate() {
        let raters = ["A", "B", "C", "D", "E", "F"];
        let mut rows = Vec::new();
        for clip in 1..=5u32 {
            for r in raters {
                let a = if r == "A" { 2 } else { (clip as u8 + r.as_bytes()[0]) % 5 };
                rows.push((r, clip, [a, a, a]));
            }
        }
        let out = human_baseline_scores(&table(&rows), &unit_fit(), 6).unwrap();
        assert!(matches!(out[0].pairs, Err(PsychometricsError::StandardizationDegenerate { ref rater }) if rater == "A"));
        assert!(out[1..].iter().all(|o| o.pairs.is_ok()));
    }

    #[test]
    fn missing_rater_rejected() {
        let rows = vec![("A", 1, [1, 1, 1]), ("B", 1, [1, 1, 1]), ("A", 2, [1, 1, 1])];
        assert!(matches!(
            human_baseline_scores(&table(&rows), &unit_fit(), 2),
            Err(PsychometricsError::InsufficientRaters { found: 1, .. })
        ));
    }

    #[test]
    fn unbalanced_matrix_rejected() {
        let rows = vec![("A", 1, [1, 1, 1]), ("B", 1, [1, 1, 1]), ("A", 2, [1, 1, 1])];
        assert!(question_matrix(&table(&rows), 0).is_err());
    }
}
