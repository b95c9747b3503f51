//! Core value types shared by every stage: the factorial design, per-condition
//! truths, the missingness taxonomy and the per-repetition outcome records.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical output names produced by methods.
pub mod outputs {
    pub const ESTIMATE: &str = "estimate";
    pub const STD_ERROR: &str = "std_error";
    pub const CI_LOWER: &str = "ci_lower";
    pub const CI_UPPER: &str = "ci_upper";
    pub const P_VALUE: &str = "p_value";

    pub const STANDARD: [&str; 5] = [ESTIMATE, STD_ERROR, CI_LOWER, CI_UPPER, P_VALUE];
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DesignError {
    #[error("factor '{0}' has no levels")]
    EmptyFactor(String),
    #[error("duplicate factor name '{0}'")]
    DuplicateFactor(String),
    #[error("factor '{factor}' lists level '{level}' twice")]
    DuplicateLevel { factor: String, level: String },
    #[error("condition row {row} repeats the level combination of row {first}")]
    DuplicateCondition { row: usize, first: usize },
    #[error("condition row {row} has {found} levels but the design has {expected} factors")]
    WrongArity { row: usize, found: usize, expected: usize },
    #[error("condition row {row} references level index {index} of factor '{factor}'")]
    UnknownLevel { row: usize, factor: String, index: usize },
    #[error("design is not fully factorial: {found} conditions, expected {expected}")]
    IncompleteDesign { found: usize, expected: usize },
    #[error("truth references unknown condition {0}")]
    UnknownCondition(usize),
    #[error("invalid truth for condition {condition_id}: {reason}")]
    InvalidTruth { condition_id: usize, reason: String },
}

/// A factor level: numeric where the source value parses as a finite number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Number(f64),
    Text(String),
}

impl Level {
    pub fn parse(token: &str) -> Level {
        let t = token.trim();
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Level::Number(v),
            _ => Level::Text(t.to_string()),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Level::Number(v) => Some(*v),
            Level::Text(_) => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Number(v) => write!(f, "{v}"),
            Level::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<Level>,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: Vec<Level>) -> Self {
        Self {
            name: name.into(),
            levels,
        }
    }

    pub fn numeric(name: impl Into<String>, levels: &[f64]) -> Self {
        Self::new(name, levels.iter().map(|&v| Level::Number(v)).collect())
    }

    pub fn level_index(&self, level: &Level) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// One cell of the factorial grid; `levels[i]` indexes into factor `i`'s levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub id: usize,
    pub levels: Vec<usize>,
}

/// Per-condition estimand and nominal levels used by the performance measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub true_value: f64,
    pub nominal_alpha: f64,
    pub nominal_coverage: f64,
}

impl TruthSpec {
    pub fn new(true_value: f64, nominal_alpha: f64, nominal_coverage: f64) -> Result<Self, String> {
        let t = Self {
            true_value,
            nominal_alpha,
            nominal_coverage,
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), String> {
        if !self.true_value.is_finite() {
            return Err(format!("true_value {} is not finite", self.true_value));
        }
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.nominal_alpha) {
            return Err(format!("nominal_alpha {} outside (0,1)", self.nominal_alpha));
        }
        if !open_unit(self.nominal_coverage) {
            return Err(format!(
                "nominal_coverage {} outside (0,1)",
                self.nominal_coverage
            ));
        }
        Ok(())
    }
}

/// The factor grid, its conditions (dense ids) and the truths attached to them.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDesign {
    factors: Vec<Factor>,
    conditions: Vec<Condition>,
    truths: BTreeMap<usize, TruthSpec>,
}

impl StudyDesign {
    /// Full cartesian product; the last factor varies fastest.
    pub fn full_factorial(factors: Vec<Factor>) -> Result<Self, DesignError> {
        check_factors(&factors)?;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new()];
        for f in &factors {
            rows = rows
                .into_iter()
                .flat_map(|prefix| {
                    (0..f.levels.len()).map(move |i| {
                        let mut r = prefix.clone();
                        r.push(i);
                        r
                    })
                })
                .collect();
        }
        Self::from_condition_rows(factors, rows)
    }

    /// Builds a design from explicit condition rows (ids follow row order).
    /// The rows must cover the full cartesian product exactly once.
    pub fn from_condition_rows(
        factors: Vec<Factor>,
        rows: Vec<Vec<usize>>,
    ) -> Result<Self, DesignError> {
        check_factors(&factors)?;
        let mut seen: HashMap<&[usize], usize> = HashMap::with_capacity(rows.len());
        for (row, levels) in rows.iter().enumerate() {
            if levels.len() != factors.len() {
                return Err(DesignError::WrongArity {
                    row,
                    found: levels.len(),
                    expected: factors.len(),
                });
            }
            for (f, &idx) in factors.iter().zip(levels) {
                if idx >= f.levels.len() {
                    return Err(DesignError::UnknownLevel {
                        row,
                        factor: f.name.clone(),
                        index: idx,
                    });
                }
            }
            if let Some(&first) = seen.get(levels.as_slice()) {
                return Err(DesignError::DuplicateCondition { row, first });
            }
            seen.insert(levels.as_slice(), row);
        }
        let expected: usize = factors.iter().map(|f| f.levels.len()).product();
        if rows.len() != expected {
            return Err(DesignError::IncompleteDesign {
                found: rows.len(),
                expected,
            });
        }
        let conditions = rows
            .into_iter()
            .enumerate()
            .map(|(id, levels)| Condition { id, levels })
            .collect();
        Ok(Self {
            factors,
            conditions,
            truths: BTreeMap::new(),
        })
    }

    pub fn set_truth(&mut self, condition_id: usize, truth: TruthSpec) -> Result<(), DesignError> {
        if condition_id >= self.conditions.len() {
            return Err(DesignError::UnknownCondition(condition_id));
        }
        truth
            .check()
            .map_err(|reason| DesignError::InvalidTruth {
                condition_id,
                reason,
            })?;
        self.truths.insert(condition_id, truth);
        Ok(())
    }

    /// Attaches a truth to every condition, computed from the condition.
    pub fn with_truths<F>(mut self, mut truth_for: F) -> Result<Self, DesignError>
    where
        F: FnMut(&StudyDesign, &Condition) -> TruthSpec,
    {
        let truths: Vec<(usize, TruthSpec)> = self
            .conditions
            .iter()
            .map(|c| (c.id, truth_for(&self, c)))
            .collect();
        for (id, t) in truths {
            self.set_truth(id, t)?;
        }
        Ok(self)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn condition(&self, id: usize) -> Option<&Condition> {
        self.conditions.get(id)
    }

    pub fn truths(&self) -> &BTreeMap<usize, TruthSpec> {
        &self.truths
    }

    pub fn truth(&self, id: usize) -> Option<&TruthSpec> {
        self.truths.get(&id)
    }

    pub fn level(&self, condition_id: usize, factor: usize) -> &Level {
        let c = &self.conditions[condition_id];
        &self.factors[factor].levels[c.levels[factor]]
    }

    /// Level of the named factor in a condition.
    pub fn level_by_name(&self, condition_id: usize, factor: &str) -> Option<&Level> {
        let f = self.factor_index(factor)?;
        self.conditions.get(condition_id)?;
        Some(self.level(condition_id, f))
    }

    /// Looks up the condition with the given level indices.
    pub fn find_condition(&self, level_indices: &[usize]) -> Option<usize> {
        self.conditions
            .iter()
            .find(|c| c.levels == level_indices)
            .map(|c| c.id)
    }

    /// Finds the conditions matching every `(factor, level)` pair given.
    pub fn select(&self, filters: &[(&str, Level)]) -> Vec<usize> {
        self.conditions
            .iter()
            .filter(|c| {
                filters.iter().all(|(name, level)| {
                    self.factor_index(name)
                        .map(|f| &self.factors[f].levels[c.levels[f]] == level)
                        .unwrap_or(false)
                })
            })
            .map(|c| c.id)
            .collect()
    }

    /// `name=level` labels of a condition, e.g. `delta=0, k=10`.
    pub fn condition_label(&self, id: usize) -> String {
        if self.factors.is_empty() {
            return format!("condition {id}");
        }
        self.factors
            .iter()
            .enumerate()
            .map(|(f, factor)| format!("{}={}", factor.name, self.level(id, f)))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn check_factors(factors: &[Factor]) -> Result<(), DesignError> {
    let mut names = BTreeSet::new();
    for f in factors {
        if !names.insert(f.name.as_str()) {
            return Err(DesignError::DuplicateFactor(f.name.clone()));
        }
        if f.levels.is_empty() {
            return Err(DesignError::EmptyFactor(f.name.clone()));
        }
        for (i, l) in f.levels.iter().enumerate() {
            if f.levels[..i].contains(l) {
                return Err(DesignError::DuplicateLevel {
                    factor: f.name.clone(),
                    level: l.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Error class plus the verbatim message of a failure or warning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Failure {
    pub class: String,
    pub message: String,
}

impl Failure {
    pub fn new(class: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message.is_empty() {
            f.write_str(&self.class)
        } else {
            write!(f, "{}: {}", self.class, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusKind {
    Valid,
    DgmMissing,
    MethodMissing,
    PerformanceMissing,
}

impl StatusKind {
    pub const ALL: [StatusKind; 4] = [
        StatusKind::Valid,
        StatusKind::DgmMissing,
        StatusKind::MethodMissing,
        StatusKind::PerformanceMissing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StatusKind::Valid => "valid",
            StatusKind::DgmMissing => "dgm_missing",
            StatusKind::MethodMissing => "method_missing",
            StatusKind::PerformanceMissing => "performance_missing",
        }
    }
}

impl fmt::Display for StatusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which pipeline stage (if any) failed to produce a usable result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingnessStatus {
    Valid,
    DgmMissing(Failure),
    MethodMissing(Failure),
    PerformanceMissing { metric: String, failure: Failure },
}

impl MissingnessStatus {
    pub fn kind(&self) -> StatusKind {
        match self {
            MissingnessStatus::Valid => StatusKind::Valid,
            MissingnessStatus::DgmMissing(_) => StatusKind::DgmMissing,
            MissingnessStatus::MethodMissing(_) => StatusKind::MethodMissing,
            MissingnessStatus::PerformanceMissing { .. } => StatusKind::PerformanceMissing,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, MissingnessStatus::Valid)
    }

    pub fn failure(&self) -> Option<&Failure> {
        match self {
            MissingnessStatus::Valid => None,
            MissingnessStatus::DgmMissing(f) | MissingnessStatus::MethodMissing(f) => Some(f),
            MissingnessStatus::PerformanceMissing { failure, .. } => Some(failure),
        }
    }

    /// Text written to the `status` column: `valid`, `dgm_missing`,
    /// `method_missing` or `performance_missing:<metric>`.
    pub fn label(&self) -> String {
        match self {
            MissingnessStatus::PerformanceMissing { metric, .. } => {
                format!("performance_missing:{metric}")
            }
            other => other.kind().as_str().to_string(),
        }
    }

    /// Inverse of [`label`](Self::label): the kind plus the metric name, if any.
    pub fn parse_label(label: &str) -> Option<(StatusKind, Option<String>)> {
        let label = label.trim();
        if let Some(metric) = label.strip_prefix("performance_missing:") {
            if metric.is_empty() {
                return None;
            }
            return Some((StatusKind::PerformanceMissing, Some(metric.to_string())));
        }
        let kind = match label {
            "valid" => StatusKind::Valid,
            "dgm_missing" => StatusKind::DgmMissing,
            "method_missing" => StatusKind::MethodMissing,
            "performance_missing" => StatusKind::PerformanceMissing,
            _ => return None,
        };
        Some((kind, None))
    }
}

/// One (condition, repetition, method) result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub condition_id: usize,
    pub repetition: u64,
    pub method: String,
    pub status: MissingnessStatus,
    pub outputs: BTreeMap<String, f64>,
    pub seed: Option<u64>,
    pub runtime_ms: Option<f64>,
    pub dgm_attempts: Option<u32>,
    pub replaced_by: Option<String>,
    /// Warning text for records that are valid nonetheless.
    pub warning: Option<Failure>,
}

impl OutcomeRecord {
    pub fn new(condition_id: usize, repetition: u64, method: impl Into<String>) -> Self {
        Self {
            condition_id,
            repetition,
            method: method.into(),
            status: MissingnessStatus::Valid,
            outputs: BTreeMap::new(),
            seed: None,
            runtime_ms: None,
            dgm_attempts: None,
            replaced_by: None,
            warning: None,
        }
    }

    pub fn with_status(mut self, status: MissingnessStatus) -> Self {
        self.status = status;
        self
    }

    pub fn with_output(mut self, name: impl Into<String>, value: f64) -> Self {
        self.outputs.insert(name.into(), value);
        self
    }

    pub fn key(&self) -> (usize, u64, &str) {
        (self.condition_id, self.repetition, self.method.as_str())
    }

    pub fn output(&self, name: &str) -> Option<f64> {
        self.outputs.get(name).copied()
    }

    pub fn is_valid(&self) -> bool {
        self.status.is_valid()
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RecordSetError {
    #[error("duplicate record for condition {condition_id}, repetition {repetition}, method '{method}'")]
    DuplicateKey {
        condition_id: usize,
        repetition: u64,
        method: String,
    },
    #[error("record references unknown condition {0}")]
    UnknownCondition(usize),
    #[error("record (condition {condition_id}, repetition {repetition}, method '{method}') is performance_missing for undeclared metric '{metric}'")]
    UndeclaredMetric {
        condition_id: usize,
        repetition: u64,
        method: String,
        metric: String,
    },
    #[error("valid record (condition {condition_id}, repetition {repetition}, method '{method}') lacks a finite '{output}'")]
    InvalidValidRecord {
        condition_id: usize,
        repetition: u64,
        method: String,
        output: String,
    },
    #[error("record (condition {condition_id}, repetition {repetition}, method '{method}') has ci_lower > ci_upper")]
    CiOrder {
        condition_id: usize,
        repetition: u64,
        method: String,
    },
}

/// A validated, canonically ordered collection of outcome records.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    design: StudyDesign,
    records: Vec<OutcomeRecord>,
    methods: Vec<String>,
    declared_metrics: Vec<String>,
    required_outputs: Vec<String>,
}

impl RecordSet {
    /// Validates and sorts records by (condition_id, repetition, method).
    /// Methods are the sorted distinct method names of the records.
    pub fn new(
        design: StudyDesign,
        mut records: Vec<OutcomeRecord>,
        declared_metrics: Vec<String>,
        required_outputs: Vec<String>,
    ) -> Result<Self, RecordSetError> {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        for pair in records.windows(2) {
            if pair[0].key() == pair[1].key() {
                let r = &pair[1];
                return Err(RecordSetError::DuplicateKey {
                    condition_id: r.condition_id,
                    repetition: r.repetition,
                    method: r.method.clone(),
                });
            }
        }
        for r in &records {
            if r.condition_id >= design.len() {
                return Err(RecordSetError::UnknownCondition(r.condition_id));
            }
            if let MissingnessStatus::PerformanceMissing { metric, .. } = &r.status {
                if !declared_metrics.contains(metric) {
                    return Err(RecordSetError::UndeclaredMetric {
                        condition_id: r.condition_id,
                        repetition: r.repetition,
                        method: r.method.clone(),
                        metric: metric.clone(),
                    });
                }
            }
            if r.is_valid() {
                for out in &required_outputs {
                    if !r.output(out).is_some_and(f64::is_finite) {
                        return Err(RecordSetError::InvalidValidRecord {
                            condition_id: r.condition_id,
                            repetition: r.repetition,
                            method: r.method.clone(),
                            output: out.clone(),
                        });
                    }
                }
            }
            if let (Some(lo), Some(hi)) = (r.output(outputs::CI_LOWER), r.output(outputs::CI_UPPER)) {
                if lo.is_finite() && hi.is_finite() && lo > hi {
                    return Err(RecordSetError::CiOrder {
                        condition_id: r.condition_id,
                        repetition: r.repetition,
                        method: r.method.clone(),
                    });
                }
            }
        }
        let methods: Vec<String> = records
            .iter()
            .map(|r| r.method.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            design,
            records,
            methods,
            declared_metrics,
            required_outputs,
        })
    }

    pub fn design(&self) -> &StudyDesign {
        &self.design
    }

    pub fn records(&self) -> &[OutcomeRecord] {
        &self.records
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn declared_metrics(&self) -> &[String] {
        &self.declared_metrics
    }

    pub fn required_outputs(&self) -> &[String] {
        &self.required_outputs
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct condition ids that have at least one record, ascending.
    pub fn condition_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.condition_id).collect();
        ids.dedup();
        ids
    }

    /// Records of one condition (a contiguous slice thanks to canonical order).
    pub fn condition_records(&self, condition_id: usize) -> &[OutcomeRecord] {
        let start = self.records.partition_point(|r| r.condition_id < condition_id);
        let end = self.records.partition_point(|r| r.condition_id <= condition_id);
        &self.records[start..end]
    }

    /// Records of one condition grouped by repetition, then keyed by method.
    pub fn repetitions(&self, condition_id: usize) -> BTreeMap<u64, BTreeMap<&str, &OutcomeRecord>> {
        let mut out: BTreeMap<u64, BTreeMap<&str, &OutcomeRecord>> = BTreeMap::new();
        for r in self.condition_records(condition_id) {
            out.entry(r.repetition).or_default().insert(&r.method, r);
        }
        out
    }

    pub fn has_missingness(&self) -> bool {
        self.records.iter().any(|r| !r.is_valid())
    }

    /// Copy with `runtime_ms` cleared, for determinism comparisons.
    pub fn without_runtime(&self) -> RecordSet {
        let mut copy = self.clone();
        for r in &mut copy.records {
            r.runtime_ms = None;
        }
        copy
    }

    pub fn into_parts(self) -> (StudyDesign, Vec<OutcomeRecord>) {
        (self.design, self.records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_three() -> StudyDesign {
        StudyDesign::full_factorial(vec![
            Factor::numeric("a", &[1.0, 2.0]),
            Factor::new(
                "b",
                vec![
                    Level::Text("x".into()),
                    Level::Text("y".into()),
                    Level::Text("z".into()),
                ],
            ),
        ])
        .unwrap()
    }

    #[test]
    fn full_factorial_ids_are_dense() {
        let d = two_by_three();
        assert_eq!(d.len(), 6);
        for (i, c) in d.conditions().iter().enumerate() {
            assert_eq!(c.id, i);
            assert_eq!(c.levels.len(), 2);
        }
        assert_eq!(d.level(5, 1), &Level::Text("z".into()));
        assert_eq!(d.condition_label(4), "a=2, b=y");
    }

    #[test]
    fn carter_sized_grid() {
        let d = StudyDesign::full_factorial(vec![
            Factor::numeric("delta", &[0.0, 0.2, 0.5, 0.8]),
            Factor::numeric("tau", &[0.0, 0.2, 0.4]),
            Factor::numeric("k", &[10.0, 30.0, 60.0, 100.0]),
            Factor::numeric("qrp", &[0.0, 1.0, 2.0]),
            Factor::numeric("bias", &[0.0, 1.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(d.len(), 432);
    }

    #[test]
    fn incomplete_and_duplicate_rows_rejected() {
        let f = vec![Factor::numeric("a", &[1.0, 2.0])];
        assert!(matches!(
            StudyDesign::from_condition_rows(f.clone(), vec![vec![0]]),
            Err(DesignError::IncompleteDesign { found: 1, expected: 2 })
        ));
        assert!(matches!(
            StudyDesign::from_condition_rows(f, vec![vec![0], vec![0]]),
            Err(DesignError::DuplicateCondition { row: 1, first: 0 })
        ));
    }

    #[test]
    fn truth_validation() {
        let mut d = two_by_three();
        assert!(d.set_truth(99, TruthSpec::new(0.0, 0.05, 0.95).unwrap()).is_err());
        assert!(TruthSpec::new(0.0, 1.0, 0.95).is_err());
        assert!(TruthSpec::new(f64::NAN, 0.05, 0.95).is_err());
        d.set_truth(0, TruthSpec::new(0.0, 0.05, 0.5).unwrap()).unwrap();
        assert_eq!(d.truth(0).unwrap().nominal_coverage, 0.5);
    }

    #[test]
    fn status_labels_round_trip() {
        let statuses = [
            MissingnessStatus::Valid,
            MissingnessStatus::DgmMissing(Failure::new("x", "")),
            MissingnessStatus::MethodMissing(Failure::new("x", "")),
            MissingnessStatus::PerformanceMissing {
                metric: "log_score".into(),
                failure: Failure::new("x", ""),
            },
        ];
        for s in statuses {
            let (kind, metric) = MissingnessStatus::parse_label(&s.label()).unwrap();
            assert_eq!(kind, s.kind());
            if let MissingnessStatus::PerformanceMissing { metric: m, .. } = &s {
                assert_eq!(metric.as_deref(), Some(m.as_str()));
            }
        }
        assert!(MissingnessStatus::parse_label("converged").is_none());
    }

    #[test]
    fn record_set_sorts_and_rejects_duplicates() {
        let d = two_by_three();
        let recs = vec![
            OutcomeRecord::new(1, 0, "B"),
            OutcomeRecord::new(0, 1, "A"),
            OutcomeRecord::new(0, 0, "B"),
            OutcomeRecord::new(0, 0, "A"),
        ];
        let set = RecordSet::new(d.clone(), recs, vec![], vec![]).unwrap();
        let keys: Vec<_> = set.records().iter().map(|r| r.key()).collect();
        assert_eq!(keys, vec![(0, 0, "A"), (0, 0, "B"), (0, 1, "A"), (1, 0, "B")]);
        assert_eq!(set.methods(), ["A", "B"]);
        assert_eq!(set.condition_records(0).len(), 3);
        assert_eq!(set.condition_records(3).len(), 0);

        let dup = vec![OutcomeRecord::new(0, 0, "A"), OutcomeRecord::new(0, 0, "A")];
        assert!(matches!(
            RecordSet::new(d, dup, vec![], vec![]),
            Err(RecordSetError::DuplicateKey { .. })
        ));
    }

    #[test]
    fn valid_records_need_finite_required_outputs() {
        let d = two_by_three();
        let recs = vec![OutcomeRecord::new(0, 0, "A").with_output("estimate", f64::INFINITY)];
        let err = RecordSet::new(d.clone(), recs, vec![], vec!["estimate".into()]).unwrap_err();
        assert!(matches!(err, RecordSetError::InvalidValidRecord { .. }));

        let recs = vec![OutcomeRecord::new(0, 0, "A")
            .with_status(MissingnessStatus::MethodMissing(Failure::new("e", "")))];
        assert!(RecordSet::new(d, recs, vec![], vec!["estimate".into()]).is_ok());
    }

    #[test]
    fn ci_order_checked_but_infinite_bounds_allowed() {
        let d = two_by_three();
        let bad = vec![OutcomeRecord::new(0, 0, "A")
            .with_output("ci_lower", 2.0)
            .with_output("ci_upper", 1.0)];
        assert!(RecordSet::new(d.clone(), bad, vec![], vec![]).is_err());
        let ok = vec![OutcomeRecord::new(0, 0, "A")
            .with_output("ci_lower", f64::NEG_INFINITY)
            .with_output("ci_upper", f64::INFINITY)];
        assert!(RecordSet::new(d, ok, vec![], vec![]).is_ok());
    }
}
