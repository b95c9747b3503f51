//! Performance measures with Monte Carlo standard errors.

mod robust;

pub use robust::{robust_variant, RobustError, RobustVariant};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{outputs, RecordSet, StudyDesign, TruthSpec};
use crate::stats;
use crate::strategy::{self, AnalysisSet, Cell, HandlingStrategy, ImputationKind, LossContext, Provenance, StrategyError};

pub const DEFAULT_TRIM: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    RejectionRate,
    Coverage,
    Bias,
    EmpiricalSe,
    Mse,
    Rmse,
    MeanCiWidth,
    /// Trimmed mean of the estimates minus the true value.
    TrimmedBias,
    /// Median absolute deviation of the estimates.
    Mad,
}

/// What one repetition contributes to a measure. Imputed values are only
/// usable by measures of the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContributionKind {
    Rejection,
    Coverage,
    Estimate,
    SquaredError,
    Width,
}

impl Measure {
    pub const ALL: [Measure; 9] = [
        Measure::RejectionRate,
        Measure::Coverage,
        Measure::Bias,
        Measure::EmpiricalSe,
        Measure::Mse,
        Measure::Rmse,
        Measure::MeanCiWidth,
        Measure::TrimmedBias,
        Measure::Mad,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::RejectionRate => "rejection_rate",
            Measure::Coverage => "coverage",
            Measure::Bias => "bias",
            Measure::EmpiricalSe => "empirical_se",
            Measure::Mse => "mse",
            Measure::Rmse => "rmse",
            Measure::MeanCiWidth => "mean_ci_width",
            Measure::TrimmedBias => "trimmed_bias",
            Measure::Mad => "mad",
        }
    }

    pub fn kind(&self) -> ContributionKind {
        match self {
            Measure::RejectionRate => ContributionKind::Rejection,
            Measure::Coverage => ContributionKind::Coverage,
            Measure::Bias | Measure::EmpiricalSe | Measure::TrimmedBias | Measure::Mad => ContributionKind::Estimate,
            Measure::Mse | Measure::Rmse => ContributionKind::SquaredError,
            Measure::MeanCiWidth => ContributionKind::Width,
        }
    }

    pub fn is_proportion(&self) -> bool {
        matches!(self, Measure::RejectionRate | Measure::Coverage)
    }

    /// Smallest number of used repetitions for which a value is reported.
    pub fn minimum_n(&self) -> usize {
        if self.is_proportion() {
            1
        } else {
            2
        }
    }

    /// Measures with a per-repetition loss; spread measures have none.
    pub fn is_imputable(&self) -> bool {
        !matches!(self, Measure::EmpiricalSe | Measure::Mad)
    }

    pub fn required_outputs(&self) -> &'static [&'static str] {
        match self.kind() {
            ContributionKind::Rejection => &[outputs::P_VALUE],
            ContributionKind::Coverage | ContributionKind::Width => &[outputs::CI_LOWER, outputs::CI_UPPER],
            ContributionKind::Estimate | ContributionKind::SquaredError => &[outputs::ESTIMATE],
        }
    }

    /// Per-repetition contribution; `Err` names the absent output.
    pub fn repetition_value(&self, out: &BTreeMap<String, f64>, truth: &TruthSpec) -> Result<f64, &'static str> {
        let get = |k: &'static str| out.get(k).copied().ok_or(k);
        Ok(match self.kind() {
            ContributionKind::Rejection => f64::from(u8::from(get(outputs::P_VALUE)? < truth.nominal_alpha)),
            ContributionKind::Coverage => {
                let (lo, hi) = (get(outputs::CI_LOWER)?, get(outputs::CI_UPPER)?);
                f64::from(u8::from(lo <= truth.true_value && truth.true_value <= hi))
            }
            ContributionKind::Estimate => get(outputs::ESTIMATE)?,
            ContributionKind::SquaredError => {
                let e = get(outputs::ESTIMATE)? - truth.true_value;
                e * e
            }
            ContributionKind::Width => get(outputs::CI_UPPER)? - get(outputs::CI_LOWER)?,
        })
    }

    /// Loss of a per-repetition contribution; larger is worse. A rejection
    /// counts as a loss when the null (`null_value`) is true, a non-rejection
    /// otherwise.
    pub fn loss(&self, value: f64, truth: &TruthSpec, null_value: f64) -> f64 {
        match self.kind() {
            ContributionKind::Rejection => {
                if truth.true_value == null_value {
                    value
                } else {
                    1.0 - value
                }
            }
            ContributionKind::Coverage => 1.0 - value,
            ContributionKind::Estimate => (value - truth.true_value).abs(),
            ContributionKind::SquaredError | ContributionKind::Width => value,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| MeasureError::Unknown(s.to_string()))
    }
}

/// Parses a comma-separated measure list.
pub fn parse_measures(s: &str) -> Result<Vec<Measure>, MeasureError> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(str::parse).collect()
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MeasureError {
    #[error("unknown measure '{0}'")]
    Unknown(String),
    #[error("condition {condition_id} has no truth specification")]
    MissingTruth { condition_id: usize },
    #[error("output '{output}' absent for method '{method}' in condition {condition_id}, repetition {repetition}")]
    MissingOutput {
        condition_id: usize,
        method: String,
        repetition: u64,
        output: String,
    },
    #[error("values imputed for '{imputed_for}' cannot be used to estimate '{measure}'")]
    IncompatibleImputation { measure: Measure, imputed_for: String },
    #[error("trimming proportion {0} outside [0, 0.5)")]
    Trim(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum NotAnalyzedReason {
    /// Cell removed by the non-analysis threshold.
    Threshold { missing_rate: f64 },
    TooFew { n_used: usize, minimum: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimateValue {
    Value(f64),
    NotAnalyzed(NotAnalyzedReason),
}

impl EstimateValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            EstimateValue::Value(v) => Some(*v),
            EstimateValue::NotAnalyzed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceEstimate {
    pub measure: Measure,
    pub condition_id: usize,
    pub method: String,
    pub value: EstimateValue,
    pub mcse: Option<f64>,
    pub n_used: usize,
    pub n_missing: usize,
    /// Share of attempted repetitions that were not valid.
    pub missing_rate: f64,
    /// Strategy descriptor, e.g. `replacement[RE]`.
    pub strategy: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureOptions {
    /// Trimming proportion for `trimmed_bias`.
    pub trim: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self { trim: DEFAULT_TRIM }
    }
}

pub fn proportion_mcse(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Value and MCSE of `measure` from per-repetition contributions.
pub fn summarize(measure: Measure, values: &[f64], truth: &TruthSpec, opts: &MeasureOptions) -> Result<(f64, Option<f64>), MeasureError> {
    let n = values.len();
    let nf = n as f64;
    Ok(match measure {
        Measure::RejectionRate | Measure::Coverage => {
            let p = stats::mean(values);
            (p, finite(proportion_mcse(p, n)))
        }
        Measure::Bias => (
            stats::mean(values) - truth.true_value,
            finite(stats::sample_sd(values) / nf.sqrt()),
        ),
        Measure::EmpiricalSe => {
            let sd = stats::sample_sd(values);
            (sd, finite(sd / (2.0 * (nf - 1.0)).sqrt()))
        }
        Measure::Mse => (stats::mean(values), finite((stats::sample_variance(values) / nf).sqrt())),
        Measure::Rmse => {
            let mse = stats::mean(values);
            let rmse = mse.sqrt();
            let mse_mcse = (stats::sample_variance(values) / nf).sqrt();
            (rmse, finite(mse_mcse / (2.0 * rmse)))
        }
        Measure::MeanCiWidth => (stats::mean(values), finite(stats::sample_sd(values) / nf.sqrt())),
        Measure::TrimmedBias => {
            let t = robust_variant(values, RobustVariant::TrimmedMean(opts.trim)).map_err(|_| MeasureError::Trim(opts.trim))?;
            (t - truth.true_value, None)
        }
        Measure::Mad => (robust_variant(values, RobustVariant::Mad).expect("non-empty, NaN-free"), None),
    })
}

fn cell_values(cell: &Cell, measure: Measure, truth: &TruthSpec, imputed_for: Option<Measure>) -> Result<Vec<f64>, MeasureError> {
    let mut values = Vec::with_capacity(cell.entries.len());
    for e in &cell.entries {
        let v = match e.imputed_value {
            Some(v) => {
                let src = imputed_for.filter(|m| m.kind() == measure.kind()).ok_or_else(|| {
                    MeasureError::IncompatibleImputation {
                        measure,
                        imputed_for: imputed_for.map_or_else(|| "unknown".to_string(), |m| m.to_string()),
                    }
                })?;
                debug_assert_eq!(src.kind(), measure.kind());
                v
            }
            // An imputed parameter-space interval says nothing about estimates or rejections.
            None if e.provenance == Provenance::Imputed(ImputationKind::WorstCaseCi)
                && !matches!(measure.kind(), ContributionKind::Coverage | ContributionKind::Width) =>
            {
                return Err(MeasureError::IncompatibleImputation {
                    measure,
                    imputed_for: ImputationKind::WorstCaseCi.as_str().to_string(),
                });
            }
            None => measure.repetition_value(&e.outputs, truth).map_err(|o| MeasureError::MissingOutput {
                condition_id: cell.condition_id,
                method: cell.method.clone(),
                repetition: e.repetition,
                output: o.to_string(),
            })?,
        };
        values.push(v);
    }
    Ok(values)
}

/// One estimate per (condition, method) cell of the analysis set.
pub fn estimate_measure(
    set: &AnalysisSet,
    design: &StudyDesign,
    measure: Measure,
    opts: &MeasureOptions,
) -> Result<Vec<PerformanceEstimate>, MeasureError> {
    if !(0.0..0.5).contains(&opts.trim) {
        return Err(MeasureError::Trim(opts.trim));
    }
    let descriptor = set.descriptor();
    let mut out = Vec::with_capacity(set.cells.len());
    for cell in &set.cells {
        let truth = design.truth(cell.condition_id).ok_or(MeasureError::MissingTruth {
            condition_id: cell.condition_id,
        })?;
        let mut est = PerformanceEstimate {
            measure,
            condition_id: cell.condition_id,
            method: cell.method.clone(),
            value: EstimateValue::NotAnalyzed(NotAnalyzedReason::Threshold {
                missing_rate: cell.missing_rate(),
            }),
            mcse: None,
            n_used: 0,
            n_missing: cell.n_missing(),
            missing_rate: cell.missing_rate(),
            strategy: descriptor.clone(),
        };
        if !cell.not_analyzed {
            let values = cell_values(cell, measure, truth, set.imputed_for)?;
            est.n_used = values.len();
            if values.len() < measure.minimum_n() {
                est.value = EstimateValue::NotAnalyzed(NotAnalyzedReason::TooFew {
                    n_used: values.len(),
                    minimum: measure.minimum_n(),
                });
            } else {
                let (v, mcse) = summarize(measure, &values, truth, opts)?;
                est.value = EstimateValue::Value(v);
                est.mcse = mcse;
            }
        }
        out.push(est);
    }
    Ok(out)
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SensitivityError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityOptions {
    pub non_analysis_threshold: Option<f64>,
    pub measure: MeasureOptions,
    pub parameter_space: (f64, f64),
    pub null_value: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            non_analysis_threshold: None,
            measure: MeasureOptions::default(),
            parameter_space: (f64::NEG_INFINITY, f64::INFINITY),
            null_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub condition_id: usize,
    pub method: String,
    pub measure: Measure,
    pub strategy: String,
    pub value: EstimateValue,
    pub mcse: Option<f64>,
    pub n_used: usize,
    pub missing_rate: f64,
}

/// Applies a strategy (and the optional threshold filter) for one measure.
pub fn analysis_for(
    set: &RecordSet,
    strategy: &HandlingStrategy,
    measure: Measure,
    opts: &SensitivityOptions,
) -> Result<AnalysisSet, StrategyError> {
    let ctx = LossContext {
        measure,
        parameter_space: opts.parameter_space,
        null_value: opts.null_value,
    };
    let a = strategy::apply_strategy(set, strategy, Some(&ctx))?;
    match opts.non_analysis_threshold {
        Some(t) => strategy::filter_non_analysis(a, t),
        None => Ok(a),
    }
}

/// One row per (condition, method, measure, strategy), in that nesting order
/// with measures and strategies in the order given.
pub fn sensitivity_table(
    set: &RecordSet,
    strategies: &[HandlingStrategy],
    measures: &[Measure],
    opts: &SensitivityOptions,
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    // estimates[s][m] -> per-cell estimates in canonical cell order
    let mut estimates: Vec<Vec<Vec<PerformanceEstimate>>> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    for s in strategies {
        let mut per_measure = Vec::new();
        let mut shared: Option<AnalysisSet> = None;
        for &m in measures {
            let a = match s {
                HandlingStrategy::Imputation { .. } => analysis_for(set, s, m, opts)?,
                _ => match &shared {
                    Some(a) => a.clone(),
                    None => {
                        let a = analysis_for(set, s, m, opts)?;
                        shared = Some(a.clone());
                        a
                    }
                },
            };
            if rates.is_empty() {
                rates = a.cells.iter().map(Cell::missing_rate).collect();
            }
            per_measure.push(estimate_measure(&a, set.design(), m, &opts.measure)?);
        }
        estimates.push(per_measure);
    }
    let n_cells = rates.len();
    let mut rows = Vec::with_capacity(n_cells * strategies.len() * measures.len());
    for (c, rate) in rates.iter().enumerate() {
        for mi in 0..measures.len() {
            for per_strategy in &estimates {
                let e = &per_strategy[mi][c];
                rows.push(SensitivityRow {
                    condition_id: e.condition_id,
                    method: e.method.clone(),
                    measure: e.measure,
                    strategy: e.strategy.clone(),
                    value: e.value,
                    mcse: e.mcse,
                    n_used: e.n_used,
                    missing_rate: *rate,
                });
            }
        }
    }
    Ok(rows)
}
