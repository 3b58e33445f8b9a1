//! Inter-rater reliability, single-factor CFA, Bartlett scores and the human
//! baseline.

mod cfa;
mod fdist;
mod human;
mod icc;
pub mod report;

pub use cfa::{bartlett_scores, bartlett_weights, fit_cfa, fit_cfa_covariance, sample_moments, CfaFit, ClipScore, Cov3, MIN_OBSERVATIONS};
pub use fdist::f_quantile;
pub use human::{human_baseline_scores, mean_answers, question_matrix, require_raters, standardize, ClipMeans, RaterOutcome, RaterPairs};
pub use icc::{icc_1k, IccResult};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsychometricsError {
    #[error("all target means are equal; ICC undefined")]
    DegenerateData,
    #[error("a pairwise question covariance is not positive; triad solution undefined")]
    NonPositiveCovariance,
    #[error("all loadings are zero")]
    AllZeroLoadings,
    #[error("{n} observations, at least {min} required")]
    TooFewObservations { n: usize, min: usize },
    #[error("clip {clip} has {found} raters, {required} required")]
    InsufficientRaters { clip: String, found: usize, required: usize },
    #[error("clip {clip} has {found} raters, expected {expected} like the other clips")]
    UnbalancedRatings { clip: String, found: usize, expected: usize },
    #[error("rater {rater} has zero variance across clips; cannot standardize")]
    StandardizationDegenerate { rater: String },
    #[error("non-finite input")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
}
