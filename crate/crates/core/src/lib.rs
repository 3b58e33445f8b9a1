//! Momentary expressiveness analysis: rater reliability, latent score
//! construction, kinematic features from facial tracking, elastic-net
//! prediction and cluster-bootstrap model comparison.

pub mod cli;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod psychometrics;
pub mod regression;
pub mod report;
pub mod synth;
