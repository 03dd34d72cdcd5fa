//! Memory-requirement prediction for batch-scheduler jobs.
//!
//! A job's peak memory is discretized into fixed-width bins; seven
//! classifiers are trained on a sliding window of finished jobs and
//! combined by a validation-weighted poll. The crate covers the whole
//! lifecycle: trace parsing and synthetic workload generation
//! ([`workload`]), feature encoding ([`featurization`]), the individual
//! learners ([`learners`]), the poll ([`ensemble`]), window management,
//! retraining and persistence ([`pipeline`]), segmented temporal
//! evaluation ([`evaluation`]), and the command-line front end ([`cli`]).

pub mod cli;
pub mod ensemble;
pub mod evaluation;
pub mod featurization;
pub mod learners;
pub mod pipeline;
pub mod workload;
