//! Missingness handling strategies: each turns a [`RecordSet`] into an
//! [`AnalysisSet`] that says, per (condition, method) cell, which repetitions
//! enter the performance estimate and where their values came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{outputs, OutcomeRecord, RecordSet};
use crate::metrics::{Measure, MeasureError};
use crate::stats;

pub const DEFAULT_NON_ANALYSIS_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationKind {
    WorstCaseLoss,
    WorstCaseCi,
    ConditionMean,
    ConditionMedian,
    ConditionMax,
}

impl ImputationKind {
    pub const ALL: [ImputationKind; 5] = [
        ImputationKind::WorstCaseLoss,
        ImputationKind::WorstCaseCi,
        ImputationKind::ConditionMean,
        ImputationKind::ConditionMedian,
        ImputationKind::ConditionMax,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ImputationKind::WorstCaseLoss => "worst_case_loss",
            ImputationKind::WorstCaseCi => "worst_case_ci",
            ImputationKind::ConditionMean => "condition_mean",
            ImputationKind::ConditionMedian => "condition_median",
            ImputationKind::ConditionMax => "condition_max",
        }
    }
}

impl FromStr for ImputationKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "worst_case_loss" => ImputationKind::WorstCaseLoss,
            "worst_case_ci" => ImputationKind::WorstCaseCi,
            "condition_mean" => ImputationKind::ConditionMean,
            "condition_median" => ImputationKind::ConditionMedian,
            "condition_max" => ImputationKind::ConditionMax,
            other => return Err(StrategyError::Parse(format!("unknown imputation kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HandlingStrategy {
    CaseWise,
    ListWise,
    Replacement { chain: Vec<String> },
    Imputation { kind: ImputationKind },
    /// No handling: missing records stay in, stripped of every output.
    Raw,
}

impl HandlingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            HandlingStrategy::CaseWise => "case_wise",
            HandlingStrategy::ListWise => "list_wise",
            HandlingStrategy::Replacement { .. } => "replacement",
            HandlingStrategy::Imputation { .. } => "imputation",
            HandlingStrategy::Raw => "raw",
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if let HandlingStrategy::Replacement { chain } = self {
            if chain.is_empty() {
                return Err(StrategyError::Config("replacement chain is empty".into()));
            }
            let mut seen = BTreeSet::new();
            for m in chain {
                if !seen.insert(m) {
                    return Err(StrategyError::Config(format!(
                        "replacement chain lists '{m}' twice"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Descriptor used in reports, e.g. `replacement[RE,PET]` or `imputation(worst_case_ci)`.
impl fmt::Display for HandlingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HandlingStrategy::Replacement { chain } => write!(f, "replacement[{}]", chain.join(",")),
            HandlingStrategy::Imputation { kind } => write!(f, "imputation({})", kind.as_str()),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `case_wise`, `list_wise`, `raw`, `replacement:RE,PET` and
/// `imputation:<kind>`.
impl FromStr for HandlingStrategy {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let strategy = match (head, arg) {
            ("case_wise", None) => HandlingStrategy::CaseWise,
            ("list_wise", None) => HandlingStrategy::ListWise,
            ("raw", None) => HandlingStrategy::Raw,
            ("replacement", Some(a)) => HandlingStrategy::Replacement {
                chain: a.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect(),
            },
            ("imputation", Some(a)) => HandlingStrategy::Imputation { kind: a.parse()? },
            _ => return Err(StrategyError::Parse(format!("cannot parse strategy '{s}'"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

fn default_threshold() -> f64 {
    DEFAULT_NON_ANALYSIS_THRESHOLD
}

/// Strategy block of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chain: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imputation_kind: Option<ImputationKind>,
    #[serde(default = "default_threshold")]
    pub non_analysis_threshold: f64,
}

impl StrategyConfig {
    pub fn new(strategy: &HandlingStrategy, threshold: f64) -> Self {
        let (chain, imputation_kind) = match strategy {
            HandlingStrategy::Replacement { chain } => (chain.clone(), None),
            HandlingStrategy::Imputation { kind } => (Vec::new(), Some(*kind)),
            _ => (Vec::new(), None),
        };
        Self {
            strategy: strategy.name().to_string(),
            chain,
            imputation_kind,
            non_analysis_threshold: threshold,
        }
    }

    pub fn to_strategy(&self) -> Result<HandlingStrategy, StrategyError> {
        let s = match self.strategy.as_str() {
            "case_wise" => HandlingStrategy::CaseWise,
            "list_wise" => HandlingStrategy::ListWise,
            "raw" => HandlingStrategy::Raw,
            "replacement" => HandlingStrategy::Replacement {
                chain: self.chain.clone(),
            },
            "imputation" => HandlingStrategy::Imputation {
                kind: self.imputation_kind.ok_or_else(|| {
                    StrategyError::Config("imputation strategy needs imputation_kind".into())
                })?,
            },
            other => return Err(StrategyError::Parse(format!("unknown strategy '{other}'"))),
        };
        s.validate()?;
        check_threshold(self.non_analysis_threshold)?;
        Ok(s)
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StrategyError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid strategy configuration: {0}")]
    Config(String),
    #[error("replacement chain method '{0}' has no records")]
    UnknownChainMethod(String),
    #[error("replacement chain exhausted for {} (condition, repetition, method) triple(s): {}", .0.len(), format_triples(.0))]
    ChainExhausted(Vec<(usize, u64, String)>),
    #[error("no valid record in condition {0} to impute from")]
    NothingToImpute(usize),
    #[error("measure '{0}' has no per-repetition loss and cannot be imputed")]
    NotImputable(Measure),
    #[error("imputation needs a measure context")]
    MissingLossContext,
    #[error("non-analysis threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn format_triples(t: &[(usize, u64, String)]) -> String {
    let mut s = t
        .iter()
        .take(10)
        .map(|(c, r, m)| format!("({c}, {r}, {m})"))
        .collect::<Vec<_>>()
        .join(", ");
    if t.len() > 10 {
        s.push_str(&format!(", ... and {} more", t.len() - 10));
    }
    s
}

fn check_threshold(t: f64) -> Result<(), StrategyError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(StrategyError::Threshold(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    ReplacedBy(String),
    Imputed(ImputationKind),
    /// Missing record kept by the raw strategy.
    Unhandled,
}

/// One repetition that enters a cell's estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Included {
    pub repetition: u64,
    /// Effective outputs: the method's own, a replacement's, or the imputed
    /// interval bounds.
    pub outputs: BTreeMap<String, f64>,
    /// Imputed per-repetition measure value (loss-based imputations only).
    pub imputed_value: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub condition_id: usize,
    pub method: String,
    pub n_attempted: usize,
    pub n_valid: usize,
    pub entries: Vec<Included>,
    pub not_analyzed: bool,
}

impl Cell {
    pub fn n_included(&self) -> usize {
        self.entries.len()
    }

    fn count(&self, pred: impl Fn(&Provenance) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.provenance)).count()
    }

    pub fn n_valid_included(&self) -> usize {
        self.count(|p| *p == Provenance::Original)
    }

    pub fn n_replaced(&self) -> usize {
        self.count(|p| matches!(p, Provenance::ReplacedBy(_)))
    }

    pub fn n_imputed(&self) -> usize {
        self.count(|p| matches!(p, Provenance::Imputed(_)))
    }

    pub fn n_unhandled(&self) -> usize {
        self.count(|p| *p == Provenance::Unhandled)
    }

    pub fn n_missing(&self) -> usize {
        self.n_attempted - self.n_valid
    }

    pub fn valid_rate(&self) -> f64 {
        self.n_valid as f64 / self.n_attempted as f64
    }

    pub fn missing_rate(&self) -> f64 {
        self.n_missing() as f64 / self.n_attempted as f64
    }

    pub fn included_repetitions(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.repetition).collect()
    }
}

/// Per-cell inclusion sets produced by a strategy, in (condition, method) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSet {
    pub strategy: HandlingStrategy,
    pub cells: Vec<Cell>,
    /// Measure whose per-repetition values were imputed, if any.
    pub imputed_for: Option<Measure>,
    pub non_analysis_threshold: Option<f64>,
}

impl AnalysisSet {
    pub fn cell(&self, condition_id: usize, method: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.condition_id == condition_id && c.method == method)
    }

    /// Strategy descriptor including the threshold, for provenance.
    pub fn descriptor(&self) -> String {
        match self.non_analysis_threshold {
            Some(t) => format!("{} (threshold {t})", self.strategy),
            None => self.strategy.to_string(),
        }
    }
}

/// Measure context for imputation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossContext {
    pub measure: Measure,
    /// Bounds of the parameter space used by the worst-case interval.
    pub parameter_space: (f64, f64),
    /// Parameter value under the tested null hypothesis.
    pub null_value: f64,
}

impl LossContext {
    pub fn new(measure: Measure) -> Self {
        Self {
            measure,
            parameter_space: (f64::NEG_INFINITY, f64::INFINITY),
            null_value: 0.0,
        }
    }
}

fn build<F>(set: &RecordSet, strategy: HandlingStrategy, mut fill: F) -> Result<AnalysisSet, StrategyError>
where
    F: FnMut(usize, &str, &BTreeMap<u64, BTreeMap<&str, &OutcomeRecord>>) -> Result<Vec<Included>, StrategyError>,
{
    let mut cells = Vec::new();
    for cid in set.condition_ids() {
        let reps = set.repetitions(cid);
        let methods: BTreeSet<&str> = set.condition_records(cid).iter().map(|r| r.method.as_str()).collect();
        for m in methods {
            let recs: Vec<&OutcomeRecord> = reps.values().filter_map(|by| by.get(m).copied()).collect();
            cells.push(Cell {
                condition_id: cid,
                method: m.to_string(),
                n_attempted: recs.len(),
                n_valid: recs.iter().filter(|r| r.is_valid()).count(),
                entries: fill(cid, m, &reps)?,
                not_analyzed: false,
            });
        }
    }
    Ok(AnalysisSet {
        strategy,
        cells,
        imputed_for: None,
        non_analysis_threshold: None,
    })
}

fn original(r: &OutcomeRecord) -> Included {
    Included {
        repetition: r.repetition,
        outputs: r.outputs.clone(),
        imputed_value: None,
        provenance: Provenance::Original,
    }
}

/// Keeps, per method, only the repetitions where that method is valid.
pub fn apply_case_wise(set: &RecordSet) -> AnalysisSet {
    build(set, HandlingStrategy::CaseWise, |_, m, reps| {
        Ok(reps
            .values()
            .filter_map(|by| by.get(m).filter(|r| r.is_valid()).map(|r| original(r)))
            .collect())
    })
    .expect("case-wise deletion cannot fail")
}

/// Keeps a repetition only if every method run in its condition is valid there.
pub fn apply_list_wise(set: &RecordSet) -> AnalysisSet {
    build(set, HandlingStrategy::ListWise, |cid, m, reps| {
        let methods: BTreeSet<&str> = set.condition_records(cid).iter().map(|r| r.method.as_str()).collect();
        Ok(reps
            .values()
            .filter(|by| methods.iter().all(|x| by.get(x).is_some_and(|r| r.is_valid())))
            .filter_map(|by| by.get(m).map(|r| original(r)))
            .collect())
    })
    .expect("list-wise deletion cannot fail")
}

/// Substitutes a missing output with the first valid method of `chain`
/// (skipping the method itself) in the same repetition.
pub fn apply_replacement(set: &RecordSet, chain: &[String]) -> Result<AnalysisSet, StrategyError> {
    let strategy = HandlingStrategy::Replacement {
        chain: chain.to_vec(),
    };
    strategy.validate()?;
    for c in chain {
        if !set.methods().contains(c) {
            return Err(StrategyError::UnknownChainMethod(c.clone()));
        }
    }
    let mut unresolved = Vec::new();
    let mut out = build(set, strategy, |cid, m, reps| {
        let mut entries = Vec::new();
        for (rep, by) in reps {
            let Some(r) = by.get(m) else { continue };
            if r.is_valid() {
                entries.push(original(r));
                continue;
            }
            let sub = chain
                .iter()
                .filter(|c| c.as_str() != m)
                .find_map(|c| by.get(c.as_str()).filter(|x| x.is_valid()));
            match sub {
                Some(s) => entries.push(Included {
                    repetition: *rep,
                    outputs: s.outputs.clone(),
                    imputed_value: None,
                    provenance: Provenance::ReplacedBy(s.method.clone()),
                }),
                None => unresolved.push((cid, *rep, m.to_string())),
            }
        }
        Ok(entries)
    })?;
    if !unresolved.is_empty() {
        return Err(StrategyError::ChainExhausted(unresolved));
    }
    out.cells.shrink_to_fit();
    Ok(out)
}

/// Fills missing records with an imputed per-repetition measure value (or,
/// for `worst_case_ci`, with the parameter space as the interval).
pub fn apply_imputation(set: &RecordSet, kind: ImputationKind, ctx: &LossContext) -> Result<AnalysisSet, StrategyError> {
    if kind == ImputationKind::WorstCaseCi {
        let (lo, hi) = ctx.parameter_space;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(StrategyError::Config(format!("parameter space [{lo}, {hi}] is not an interval")));
        }
        return build(set, HandlingStrategy::Imputation { kind }, |_, m, reps| {
            Ok(reps
                .values()
                .filter_map(|by| by.get(m))
                .map(|r| {
                    if r.is_valid() {
                        original(r)
                    } else {
                        Included {
                            repetition: r.repetition,
                            outputs: [(outputs::CI_LOWER.to_string(), lo), (outputs::CI_UPPER.to_string(), hi)]
                                .into_iter()
                                .collect(),
                            imputed_value: None,
                            provenance: Provenance::Imputed(kind),
                        }
                    }
                })
                .collect())
        });
    }

    let measure = ctx.measure;
    if !measure.is_imputable() {
        return Err(StrategyError::NotImputable(measure));
    }
    // Per-condition imputed value, computed once from all valid records.
    let mut fill_value: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    for cid in set.condition_ids() {
        let recs = set.condition_records(cid);
        if recs.iter().all(|r| r.is_valid()) {
            continue;
        }
        let truth = set
            .design()
            .truth(cid)
            .ok_or(MeasureError::MissingTruth { condition_id: cid })?;
        let mut values = Vec::new();
        for r in recs.iter().filter(|r| r.is_valid()) {
            let v = measure.repetition_value(&r.outputs, truth).map_err(|output| MeasureError::MissingOutput {
                condition_id: cid,
                method: r.method.clone(),
                repetition: r.repetition,
                output: output.to_string(),
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(StrategyError::NothingToImpute(cid));
        }
        let value = match kind {
            ImputationKind::WorstCaseLoss => values
                .iter()
                .copied()
                .max_by(|a, b| {
                    measure
                        .loss(*a, truth, ctx.null_value)
                        .total_cmp(&measure.loss(*b, truth, ctx.null_value))
                })
                .unwrap(),
            ImputationKind::ConditionMean => stats::mean(&values),
            ImputationKind::ConditionMedian => stats::median(&values),
            ImputationKind::ConditionMax => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ImputationKind::WorstCaseCi => unreachable!(),
        };
        fill_value.insert(cid, Some(value));
    }
    let mut out = build(set, HandlingStrategy::Imputation { kind }, |cid, m, reps| {
        Ok(reps
            .values()
            .filter_map(|by| by.get(m))
            .map(|r| {
                if r.is_valid() {
                    original(r)
                } else {
                    Included {
                        repetition: r.repetition,
                        outputs: BTreeMap::new(),
                        imputed_value: fill_value.get(&cid).copied().flatten(),
                        provenance: Provenance::Imputed(kind),
                    }
                }
            })
            .collect())
    })?;
    if !fill_value.is_empty() {
        out.imputed_for = Some(measure);
    }
    Ok(out)
}

/// Keeps every record; missing ones enter with no outputs at all.
pub fn apply_raw(set: &RecordSet) -> AnalysisSet {
    build(set, HandlingStrategy::Raw, |_, m, reps| {
        Ok(reps
            .values()
            .filter_map(|by| by.get(m))
            .map(|r| {
                if r.is_valid() {
                    original(r)
                } else {
                    Included {
                        repetition: r.repetition,
                        outputs: BTreeMap::new(),
                        imputed_value: None,
                        provenance: Provenance::Unhandled,
                    }
                }
            })
            .collect())
    })
    .expect("raw strategy cannot fail")
}

/// Marks cells whose valid rate is strictly below `threshold` as not analyzed.
pub fn filter_non_analysis(mut set: AnalysisSet, threshold: f64) -> Result<AnalysisSet, StrategyError> {
    check_threshold(threshold)?;
    for cell in &mut set.cells {
        cell.not_analyzed = cell.valid_rate() < threshold;
    }
    set.non_analysis_threshold = Some(threshold);
    Ok(set)
}

/// Applies a strategy; `ctx` is needed only for imputation.
pub fn apply_strategy(
    set: &RecordSet,
    strategy: &HandlingStrategy,
    ctx: Option<&LossContext>,
) -> Result<AnalysisSet, StrategyError> {
    strategy.validate()?;
    match strategy {
        HandlingStrategy::CaseWise => Ok(apply_case_wise(set)),
        HandlingStrategy::ListWise => Ok(apply_list_wise(set)),
        HandlingStrategy::Replacement { chain } => apply_replacement(set, chain),
        HandlingStrategy::Imputation { kind } => {
            let ctx = ctx.ok_or(StrategyError::MissingLossContext)?;
            apply_imputation(set, *kind, ctx)
        }
        HandlingStrategy::Raw => Ok(apply_raw(set)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Factor, Failure, MissingnessStatus, StudyDesign, TruthSpec};

    fn design(n: usize) -> StudyDesign {
        let levels: Vec<f64> = (0..n).map(|i| i as f64).collect();
        StudyDesign::full_factorial(vec![Factor::numeric("c", &levels)])
            .unwrap()
            .with_truths(|_, _| TruthSpec::new(0.0, 0.05, 0.95).unwrap())
            .unwrap()
    }

    fn rec(c: usize, rep: u64, m: &str, est: Option<f64>) -> OutcomeRecord {
        let r = OutcomeRecord::new(c, rep, m);
        match est {
            Some(e) => r.with_output("estimate", e),
            None => r.with_status(MissingnessStatus::MethodMissing(Failure::new("nonconvergence", ""))),
        }
    }

    /// Methods A, B over reps 1..=4 with the given missing (method, rep) pairs.
    fn fixture(missing: &[(&str, u64)]) -> RecordSet {
        let mut recs = Vec::new();
        for m in ["A", "B"] {
            for rep in 1..=4 {
                let est = (!missing.contains(&(m, rep))).then_some(rep as f64 + if m == "B" { 10.0 } else { 0.0 });
                recs.push(rec(0, rep, m, est));
            }
        }
        RecordSet::new(design(1), recs, vec![], vec!["estimate".into()]).unwrap()
    }

    #[test]
    fn case_wise_definition() {
        let a = apply_case_wise(&fixture(&[("A", 2)]));
        assert_eq!(a.cell(0, "A").unwrap().included_repetitions(), vec![1, 3, 4]);
        assert_eq!(a.cell(0, "B").unwrap().included_repetitions(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn case_wise_all_missing_is_empty_not_error() {
        let a = apply_case_wise(&fixture(&[("A", 1), ("A", 2), ("A", 3), ("A", 4)]));
        let c = a.cell(0, "A").unwrap();
        assert_eq!(c.n_included(), 0);
        assert_eq!(c.n_attempted, 4);
    }

    #[test]
    fn list_wise_definition() {
        let a = apply_list_wise(&fixture(&[("A", 2), ("B", 3)]));
        for m in ["A", "B"] {
            assert_eq!(a.cell(0, m).unwrap().included_repetitions(), vec![1, 4]);
        }
    }

    #[test]
    fn replacement_uses_chain_in_order() {
        let set = fixture(&[("A", 2)]);
        let a = apply_replacement(&set, &["B".into()]).unwrap();
        let cell = a.cell(0, "A").unwrap();
        assert_eq!(cell.n_included(), 4);
        assert_eq!(cell.n_replaced(), 1);
        let e = &cell.entries[1];
        assert_eq!(e.provenance, Provenance::ReplacedBy("B".into()));
        assert_eq!(e.outputs["estimate"], 12.0);

        // chain [C, B] with C also missing at rep 2
        let mut recs: Vec<OutcomeRecord> = set.records().to_vec();
        for rep in 1..=4 {
            recs.push(rec(0, rep, "C", (rep != 2).then_some(100.0)));
        }
        let set = RecordSet::new(design(1), recs, vec![], vec![]).unwrap();
        let a = apply_replacement(&set, &["C".into(), "B".into()]).unwrap();
        assert_eq!(a.cell(0, "A").unwrap().entries[1].provenance, Provenance::ReplacedBy("B".into()));
        // C's own missing rep 2 resolves to B as well (self is skipped)
        assert_eq!(a.cell(0, "C").unwrap().entries[1].provenance, Provenance::ReplacedBy("B".into()));
    }

    #[test]
    fn exhausted_chain_lists_triples() {
        let set = fixture(&[("A", 2), ("B", 2)]);
        match apply_replacement(&set, &["B".into()]) {
            Err(StrategyError::ChainExhausted(t)) => {
                assert_eq!(t, vec![(0, 2, "A".to_string()), (0, 2, "B".to_string())]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            apply_replacement(&set, &["Z".into()]),
            Err(StrategyError::UnknownChainMethod(_))
        ));
    }

    #[test]
    fn worst_case_loss_takes_max_squared_error() {
        // 3 methods, 2 reps; valid squared errors {0.1, 4.2, 0.3} in rep 1 (truth 0).
        let est = |se: f64| se.sqrt();
        let recs = vec![
            rec(0, 1, "A", Some(est(0.1))),
            rec(0, 1, "B", Some(est(4.2))),
            rec(0, 1, "C", Some(est(0.3))),
            rec(0, 2, "A", None),
            rec(0, 2, "B", None),
            rec(0, 2, "C", None),
        ];
        let set = RecordSet::new(design(1), recs, vec![], vec![]).unwrap();
        let a = apply_imputation(&set, ImputationKind::WorstCaseLoss, &LossContext::new(Measure::Mse)).unwrap();
        let e = &a.cell(0, "A").unwrap().entries[1];
        assert_eq!(e.provenance, Provenance::Imputed(ImputationKind::WorstCaseLoss));
        assert!((e.imputed_value.unwrap() - 4.2).abs() < 1e-12);
        assert_eq!(a.imputed_for, Some(Measure::Mse));
    }

    #[test]
    fn condition_mean_imputation() {
        let recs = vec![rec(0, 1, "A", Some(1.0)), rec(0, 1, "B", Some(3.0)), rec(0, 2, "A", None)];
        let set = RecordSet::new(design(1), recs, vec![], vec![]).unwrap();
        let a = apply_imputation(&set, ImputationKind::ConditionMean, &LossContext::new(Measure::Bias)).unwrap();
        assert_eq!(a.cell(0, "A").unwrap().entries[1].imputed_value, Some(2.0));
    }

    #[test]
    fn worst_case_ci_spans_parameter_space() {
        let set = fixture(&[("A", 2)]);
        let mut ctx = LossContext::new(Measure::Coverage);
        ctx.parameter_space = (0.0, 1.0);
        let a = apply_imputation(&set, ImputationKind::WorstCaseCi, &ctx).unwrap();
        let e = &a.cell(0, "A").unwrap().entries[1];
        assert_eq!(e.outputs["ci_lower"], 0.0);
        assert_eq!(e.outputs["ci_upper"], 1.0);
    }

    #[test]
    fn imputation_without_donors_fails() {
        let set = fixture(&[("A", 1), ("A", 2), ("A", 3), ("A", 4), ("B", 1), ("B", 2), ("B", 3), ("B", 4)]);
        assert_eq!(
            apply_imputation(&set, ImputationKind::ConditionMean, &LossContext::new(Measure::Bias)).unwrap_err(),
            StrategyError::NothingToImpute(0)
        );
        assert!(matches!(
            apply_imputation(&fixture(&[("A", 1)]), ImputationKind::ConditionMean, &LossContext::new(Measure::EmpiricalSe)),
            Err(StrategyError::NotImputable(_))
        ));
    }

    #[test]
    fn non_analysis_threshold_is_strict() {
        let set = fixture(&[("A", 1), ("A", 2), ("A", 3)]);
        let a = filter_non_analysis(apply_case_wise(&set), 0.25).unwrap();
        assert!(!a.cell(0, "A").unwrap().not_analyzed, "rate 0.25 equals threshold");
        let a = filter_non_analysis(apply_case_wise(&set), 0.26).unwrap();
        assert!(a.cell(0, "A").unwrap().not_analyzed);
        let a = filter_non_analysis(apply_case_wise(&set), 0.0).unwrap();
        assert!(a.cells.iter().all(|c| !c.not_analyzed));
        assert!(filter_non_analysis(apply_case_wise(&set), 1.5).is_err());
    }

    #[test]
    fn strategy_strings() {
        assert_eq!("case_wise".parse::<HandlingStrategy>().unwrap(), HandlingStrategy::CaseWise);
        let r: HandlingStrategy = "replacement:RE,PET".parse().unwrap();
        assert_eq!(r.to_string(), "replacement[RE,PET]");
        assert!("replacement:RE,RE".parse::<HandlingStrategy>().is_err());
        assert!("replacement:".parse::<HandlingStrategy>().is_err());
        let i: HandlingStrategy = "imputation:worst_case_ci".parse().unwrap();
        assert_eq!(i.to_string(), "imputation(worst_case_ci)");
        assert!("imputation:mice".parse::<HandlingStrategy>().is_err());
    }

    #[test]
    fn config_block() {
        let c: StrategyConfig = serde_json::from_str(r#"{"strategy": "replacement", "chain": ["RE"]}"#).unwrap();
        assert_eq!(c.non_analysis_threshold, 0.15);
        assert_eq!(c.to_strategy().unwrap(), HandlingStrategy::Replacement { chain: vec!["RE".into()] });
        let c: StrategyConfig = serde_json::from_str(r#"{"strategy": "imputation"}"#).unwrap();
        assert!(c.to_strategy().is_err());
        let c: StrategyConfig =
            serde_json::from_str(r#"{"strategy": "imputation", "imputation_kind": "condition_median", "non_analysis_threshold": 0}"#).unwrap();
        assert_eq!(c.to_strategy().unwrap(), HandlingStrategy::Imputation { kind: ImputationKind::ConditionMedian });
        assert_eq!(StrategyConfig::new(&c.to_strategy().unwrap(), 0.0), c);
    }
}
