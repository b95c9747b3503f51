//! Deterministic, failure-capturing execution of simulation studies.
//!
//! A study is three pluggable stages (data generation, methods, metrics).
//! Every failure of a stage is captured in the outcome records; only faults
//! of the harness itself abort a run.

pub mod config;
pub mod demos;
pub mod execute;
pub mod policy;
pub mod seed;
pub mod study;

use simmiss_core::{DesignError, RecordSetError};
use thiserror::Error;

pub use execute::{execute_repetition, run_study, run_study_with_workers, Counters, RunOutput, RunSummary, TopUpOutcome};
pub use policy::{ExecutionPolicy, TimeoutRetry, TopUp, Validity};
pub use seed::derive_seed;
pub use study::{Cancel, GenContext, MethodOutput, PluggableStudy};

#[derive(Error, Debug)]
pub enum RunError {
    #[error("invalid execution policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("condition {0} has no truth")]
    MissingTruth(usize),
    #[error("harness fault: {0}")]
    Harness(String),
    #[error(transparent)]
    RecordSet(#[from] RecordSetError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("unknown demo study '{0}' (known: normal_mean, logistic_separation, rejection_dgm)")]
    UnknownDemo(String),
    #[error("config: {0}")]
    Config(String),
}
