//! Missingness-aware analysis of Monte Carlo simulation studies: outcome
//! records, missingness classification, handling strategies, performance
//! measures with Monte Carlo standard errors, diagnostics and reports.

pub mod classify;
pub mod diagnostics;
pub mod domain;
pub mod ingest;
pub mod logistic;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod stats;
pub mod strategy;

pub use domain::{
    Condition, DesignError, Factor, Failure, Level, MissingnessStatus, OutcomeRecord, RecordSet,
    RecordSetError, StatusKind, StudyDesign, TruthSpec,
};
pub use metrics::{EstimateValue, Measure, PerformanceEstimate};
pub use strategy::{AnalysisSet, HandlingStrategy, ImputationKind, StrategyConfig};
