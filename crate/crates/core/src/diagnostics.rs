//! Missingness counts, condition-wise rates, marginal summaries per factor
//! level, and the logistic meta-model of missingness.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{OutcomeRecord, RecordSet, StatusKind};
use crate::logistic::{Binomial, LogisticError, LogisticOptions};
use crate::stats;

pub const DEFAULT_HIGHLIGHT_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    PerMethod,
    PerCondition,
    PerMethodCondition,
    PerFactorMarginal,
}

impl Grouping {
    pub const ALL: [Grouping; 5] = [
        Grouping::Overall,
        Grouping::PerMethod,
        Grouping::PerCondition,
        Grouping::PerMethodCondition,
        Grouping::PerFactorMarginal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Grouping::Overall => "overall",
            Grouping::PerMethod => "per_method",
            Grouping::PerCondition => "per_condition",
            Grouping::PerMethodCondition => "per_method_condition",
            Grouping::PerFactorMarginal => "per_factor_marginal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
pub struct GroupKey {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_id: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

/// Counts in `StatusKind::ALL` order: valid, dgm, method, performance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub key: GroupKey,
    pub n_attempted: usize,
    pub counts: [usize; 4],
    /// Records whose output came from a fallback method at run time.
    pub n_replaced: usize,
}

impl TableRow {
    pub fn count(&self, kind: StatusKind) -> usize {
        self.counts[StatusKind::ALL.iter().position(|k| *k == kind).unwrap()]
    }

    pub fn rate(&self, kind: StatusKind) -> f64 {
        self.count(kind) as f64 / self.n_attempted as f64
    }

    pub fn n_missing(&self) -> usize {
        self.n_attempted - self.count(StatusKind::Valid)
    }

    pub fn missing_rate(&self) -> f64 {
        self.n_missing() as f64 / self.n_attempted as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessTable {
    pub grouping: Grouping,
    pub rows: Vec<TableRow>,
    pub zero_missingness: bool,
}

fn tally<'a>(records: impl Iterator<Item = &'a OutcomeRecord>, key_of: impl Fn(&OutcomeRecord) -> Vec<GroupKey>) -> Vec<TableRow> {
    let mut groups: BTreeMap<GroupKey, ([usize; 4], usize)> = BTreeMap::new();
    for r in records {
        let k = StatusKind::ALL.iter().position(|s| *s == r.status.kind()).unwrap();
        for key in key_of(r) {
            let g = groups.entry(key).or_default();
            g.0[k] += 1;
            g.1 += usize::from(r.replaced_by.is_some());
        }
    }
    groups
        .into_iter()
        .map(|(key, (counts, n_replaced))| TableRow {
            key,
            n_attempted: counts.iter().sum(),
            counts,
            n_replaced,
        })
        .collect()
}

pub fn missingness_table(set: &RecordSet, grouping: Grouping) -> MissingnessTable {
    let design = set.design();
    let rows = tally(set.records().iter(), |r| match grouping {
        Grouping::Overall => vec![GroupKey::default()],
        Grouping::PerMethod => vec![GroupKey {
            method: Some(r.method.clone()),
            ..Default::default()
        }],
        Grouping::PerCondition => vec![GroupKey {
            condition_id: Some(r.condition_id),
            ..Default::default()
        }],
        Grouping::PerMethodCondition => vec![GroupKey {
            condition_id: Some(r.condition_id),
            method: Some(r.method.clone()),
            ..Default::default()
        }],
        Grouping::PerFactorMarginal => design
            .factors()
            .iter()
            .enumerate()
            .map(|(f, factor)| GroupKey {
                factor: Some(factor.name.clone()),
                level: Some(design.level(r.condition_id, f).to_string()),
                method: Some(r.method.clone()),
                ..Default::default()
            })
            .collect(),
    });
    // Marginal rows keep the design's level order rather than string order.
    let rows = if grouping == Grouping::PerFactorMarginal {
        let order = |k: &GroupKey| {
            let f = design.factor_index(k.factor.as_deref().unwrap()).unwrap();
            let l = design.factors()[f]
                .levels
                .iter()
                .position(|l| Some(l.to_string()) == k.level)
                .unwrap();
            (f, l, k.method.clone())
        };
        let mut rows = rows;
        rows.sort_by_key(|r| order(&r.key));
        rows
    } else {
        rows
    };
    MissingnessTable {
        grouping,
        // Output rescued by a fallback method is not "valid output of all methods".
        zero_missingness: !set.has_missingness() && set.records().iter().all(|r| r.replaced_by.is_none()),
        rows,
    }
}

/// Missingness rate of one (method, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRate {
    pub method: String,
    pub condition_id: usize,
    pub rate: f64,
}

/// Condition-wise missingness rates per method, ordered by method then condition.
pub fn condition_rates(set: &RecordSet) -> Vec<ConditionRate> {
    let mut rows: Vec<ConditionRate> = missingness_table(set, Grouping::PerMethodCondition)
        .rows
        .into_iter()
        .map(|r| ConditionRate {
            method: r.key.method.clone().unwrap(),
            condition_id: r.key.condition_id.unwrap(),
            rate: r.missing_rate(),
        })
        .collect();
    rows.sort_by(|a, b| (&a.method, a.condition_id).cmp(&(&b.method, b.condition_id)));
    rows
}

/// Distribution of condition-wise rates for one method at one factor level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSummary {
    pub method: String,
    pub factor: String,
    pub level: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub highlight: bool,
}

pub const OVERALL_FACTOR: &str = "overall";
pub const OVERALL_LEVEL: &str = "all";

fn summary(method: &str, factor: &str, level: String, rates: &[f64], threshold: f64) -> MarginalSummary {
    let s = stats::sorted(rates);
    let mean = stats::mean(&s);
    MarginalSummary {
        method: method.to_string(),
        factor: factor.to_string(),
        level,
        min: s[0],
        q1: stats::quantile_sorted(&s, 0.25),
        median: stats::quantile_sorted(&s, 0.5),
        q3: stats::quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
        mean,
        highlight: mean > threshold,
    }
}

/// Per method: one `overall` row across all conditions, then one row per
/// factor level (design order) summarizing the rates of the conditions at
/// that level. Highlight marks a mean rate above `highlight_threshold`.
pub fn marginal_factor_rates(set: &RecordSet, highlight_threshold: f64) -> Vec<MarginalSummary> {
    let design = set.design();
    let rates = condition_rates(set);
    let mut out = Vec::new();
    for method in set.methods() {
        let mine: Vec<&ConditionRate> = rates.iter().filter(|r| &r.method == method).collect();
        if mine.is_empty() {
            continue;
        }
        let all: Vec<f64> = mine.iter().map(|r| r.rate).collect();
        out.push(summary(method, OVERALL_FACTOR, OVERALL_LEVEL.into(), &all, highlight_threshold));
        for (f, factor) in design.factors().iter().enumerate() {
            for (li, level) in factor.levels.iter().enumerate() {
                let at: Vec<f64> = mine
                    .iter()
                    .filter(|r| design.conditions()[r.condition_id].levels[f] == li)
                    .map(|r| r.rate)
                    .collect();
                if !at.is_empty() {
                    out.push(summary(method, &factor.name, level.to_string(), &at, highlight_threshold));
                }
            }
        }
    }
    out
}

/// Which records count as events in the meta-model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    AnyMissing,
    Status(StatusKind),
    ErrorClass(String),
}

impl Outcome {
    pub fn event(&self, r: &OutcomeRecord) -> bool {
        match self {
            Outcome::AnyMissing => !r.is_valid(),
            Outcome::Status(k) => r.status.kind() == *k,
            Outcome::ErrorClass(c) => r.status.failure().is_some_and(|f| &f.class == c),
        }
    }
}

/// A meta-model term: the method indicator, a design factor, or a pairwise
/// interaction of two of those (by name; `method` names the method term).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Method,
    Factor(String),
    Interaction(String, String),
}

pub const METHOD_TERM: &str = "method";
pub const INTERCEPT: &str = "(Intercept)";

impl Term {
    /// `method`, a factor name, or `a:b` for an interaction.
    pub fn parse(s: &str) -> Term {
        match s.split_once(':') {
            Some((a, b)) => Term::Interaction(a.trim().into(), b.trim().into()),
            None if s.trim() == METHOD_TERM => Term::Method,
            None => Term::Factor(s.trim().into()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Method => f.write_str(METHOD_TERM),
            Term::Factor(n) => f.write_str(n),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetaModelError {
    #[error("unknown meta-model term '{0}'")]
    UnknownTerm(String),
    #[error("the outcome does not vary: {events} events in {records} records")]
    NoVariation { events: usize, records: usize },
    #[error(transparent)]
    Fit(#[from] LogisticError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaModelOptions {
    pub logistic: LogisticOptions,
    /// Coefficients beyond this magnitude signal separation.
    pub separation_bound: f64,
    /// Ridge penalty of the automatic refit.
    pub penalty: f64,
}

impl Default for MetaModelOptions {
    fn default() -> Self {
        Self {
            logistic: LogisticOptions::default(),
            separation_bound: 10.0,
            penalty: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaModelFit {
    pub coefficients: Vec<Coefficient>,
    pub converged: bool,
    pub iterations: usize,
    pub separation_flags: Vec<String>,
    pub deviance: f64,
    pub penalized: bool,
    pub penalty: f64,
    pub n_records: usize,
    pub n_events: usize,
}

impl MetaModelFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.term == term).map(|c| c.estimate)
    }
}

/// Dummy columns of one main-effect term: (name, indicator per (condition, method)).
type Indicator = Rc<dyn Fn(usize, &str) -> f64>;
type Column = (String, Indicator);

fn main_effect_columns(set: &RecordSet, name: &str) -> Result<Vec<Column>, MetaModelError> {
    if name == METHOD_TERM {
        return Ok(set
            .methods()
            .iter()
            .skip(1)
            .map(|m| {
                let m2 = m.clone();
                let col: Indicator = Rc::new(move |_, x| f64::from(u8::from(x == m2)));
                (format!("{METHOD_TERM}[{m}]"), col)
            })
            .collect());
    }
    let design = set.design();
    let f = design.factor_index(name).ok_or_else(|| MetaModelError::UnknownTerm(name.to_string()))?;
    let levels: Vec<usize> = design.conditions().iter().map(|c| c.levels[f]).collect();
    Ok(design.factors()[f]
        .levels
        .iter()
        .enumerate()
        .skip(1)
        .map(|(li, level)| {
            let levels = levels.clone();
            let col: Indicator = Rc::new(move |cid, _| f64::from(u8::from(levels[cid] == li)));
            (format!("{name}[{level}]"), col)
        })
        .collect())
}

/// Grouped binomial data for the meta-model: one row per (condition, method)
/// cell, which gives the same likelihood as one row per record.
pub fn metamodel_data(set: &RecordSet, outcome: &Outcome, terms: &[Term]) -> Result<Binomial, MetaModelError> {
    let mut columns: Vec<Column> = vec![(INTERCEPT.to_string(), Rc::new(|_, _| 1.0))];
    for t in terms {
        match t {
            Term::Method => columns.extend(main_effect_columns(set, METHOD_TERM)?),
            Term::Factor(n) => columns.extend(main_effect_columns(set, n)?),
            Term::Interaction(a, b) => {
                let right = main_effect_columns(set, b)?;
                for (na, fa) in main_effect_columns(set, a)? {
                    for (nb, fb) in &right {
                        let (fa, fb) = (fa.clone(), fb.clone());
                        columns.push((format!("{na}:{nb}"), Rc::new(move |c, m| fa(c, m) * fb(c, m))));
                    }
                }
            }
        }
    }
    let mut cells: BTreeMap<(usize, &str), (f64, f64)> = BTreeMap::new();
    for r in set.records() {
        let e = cells.entry((r.condition_id, r.method.as_str())).or_default();
        e.1 += 1.0;
        if outcome.event(r) {
            e.0 += 1.0;
        }
    }
    let mut x = DMatrix::zeros(cells.len(), columns.len());
    let (mut ys, mut ns) = (Vec::new(), Vec::new());
    for (i, ((cid, m), (y, n))) in cells.iter().enumerate() {
        for (j, (_, col)) in columns.iter().enumerate() {
            x[(i, j)] = col(*cid, m);
        }
        ys.push(*y);
        ns.push(*n);
    }
    let names = columns.into_iter().map(|(n, _)| n).collect();
    Ok(Binomial::new(x, ys, ns, names)?)
}

/// Logistic meta-model of missingness. A fit with a coefficient beyond the
/// separation bound (or without convergence) is flagged and refit with a
/// small ridge penalty on all non-intercept terms.
pub fn fit_metamodel(set: &RecordSet, outcome: &Outcome, terms: &[Term], opts: &MetaModelOptions) -> Result<MetaModelFit, MetaModelError> {
    let data = metamodel_data(set, outcome, terms)?;
    let events = data.successes.iter().sum::<f64>() as usize;
    if events == 0 || events == set.len() {
        return Err(MetaModelError::NoVariation {
            events,
            records: set.len(),
        });
    }
    let mut fit = data.fit(0.0, &opts.logistic)?;
    let mut flags: Vec<String> = data
        .names
        .iter()
        .zip(&fit.coefficients)
        .filter(|(_, b)| b.abs() > opts.separation_bound)
        .map(|(n, _)| n.clone())
        .collect();
    if flags.is_empty() && !fit.converged {
        let worst = fit
            .coefficients
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        flags.push(data.names[worst].clone());
    }
    let penalized = !flags.is_empty();
    if penalized {
        fit = data.fit(opts.penalty, &opts.logistic)?;
    }
    Ok(MetaModelFit {
        coefficients: data
            .names
            .iter()
            .zip(fit.coefficients.iter().zip(&fit.std_errors))
            .map(|(t, (b, se))| Coefficient {
                term: t.clone(),
                estimate: *b,
                std_error: *se,
            })
            .collect(),
        converged: fit.converged,
        iterations: fit.iterations,
        separation_flags: flags,
        deviance: fit.deviance,
        penalized,
        penalty: fit.penalty,
        n_records: set.len(),
        n_events: events,
    })
}
