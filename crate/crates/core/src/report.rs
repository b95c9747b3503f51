//! Report assembly and rendering to markdown, CSV and JSON.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::diagnostics::{missingness_table, Grouping, MetaModelFit, MissingnessTable, TableRow};
use crate::domain::{RecordSet, StatusKind, StudyDesign};
use crate::metrics::{EstimateValue, NotAnalyzedReason, PerformanceEstimate, SensitivityRow};

pub const ZERO_MISSINGNESS_SENTENCE: &str = "No missingness occurred: all data sets were valid, all methods produced valid output, and all performance measures could be computed.";

pub const TOOL_VERSION: &str = concat!("simmiss ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

#[derive(Error, Debug, Clone, PartialEq)]
#[error("unknown report format '{0}' (expected markdown, csv or json)")]
pub struct UnknownFormat(pub String);

impl FromStr for Format {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

/// Formats like C's `%g` with 6 significant digits.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{x:.*}", (5 - exp) as usize))
    }
}

/// Rounds to the 6 significant digits shown in text output.
fn rounded(x: f64) -> Value {
    if x.is_finite() {
        json!(format_number(x).parse::<f64>().unwrap())
    } else {
        Value::Null
    }
}

fn percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

/// Text of a value cell: the number, or the not-analyzed marker.
pub fn render_value(v: &EstimateValue) -> String {
    match v {
        EstimateValue::Value(x) => format_number(*x),
        EstimateValue::NotAnalyzed(NotAnalyzedReason::Threshold { missing_rate }) => {
            format!("not analyzed (missingness {})", percent(*missing_rate))
        }
        EstimateValue::NotAnalyzed(NotAnalyzedReason::TooFew { n_used, minimum }) => {
            format!("not analyzed (n_used {n_used} < {minimum})")
        }
    }
}

fn opt_number(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_else(|| "NA".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSection {
    pub overall: MissingnessTable,
    pub per_method: MissingnessTable,
    pub per_method_condition: MissingnessTable,
}

impl MissingnessSection {
    pub fn from_records(set: &RecordSet) -> Self {
        Self {
            overall: missingness_table(set, Grouping::Overall),
            per_method: missingness_table(set, Grouping::PerMethod),
            per_method_condition: missingness_table(set, Grouping::PerMethodCondition),
        }
    }

    pub fn zero_missingness(&self) -> bool {
        self.overall.zero_missingness
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSection {
    /// Strategy descriptor with its parameters.
    pub strategy: String,
    pub estimates: Vec<PerformanceEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModelSection {
    pub outcome: String,
    pub terms: Vec<String>,
    pub fit: MetaModelFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    /// Condition labels, indexed by condition id.
    pub condition_labels: Vec<String>,
    pub missingness: Option<MissingnessSection>,
    pub performance: Vec<PerformanceSection>,
    pub sensitivity: Option<Vec<SensitivityRow>>,
    pub metamodel: Option<MetaModelSection>,
    /// Ordered key/value provenance entries; the tool version is always added.
    pub provenance: Vec<(String, String)>,
}

impl Report {
    pub fn new(title: impl Into<String>, design: &StudyDesign) -> Self {
        Self {
            title: title.into(),
            condition_labels: (0..design.len()).map(|c| design.condition_label(c)).collect(),
            missingness: None,
            performance: Vec::new(),
            sensitivity: None,
            metamodel: None,
            provenance: Vec::new(),
        }
    }

    pub fn provenance(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.provenance.push((key.into(), value.into()));
        self
    }

    fn label(&self, cid: usize) -> &str {
        self.condition_labels.get(cid).map_or("", String::as_str)
    }

    pub fn render(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Markdown => self.markdown().into_bytes(),
            Format::Csv => self.csv(),
            Format::Json => {
                let mut v = serde_json::to_vec_pretty(&self.json()).expect("report json");
                v.push(b'\n');
                v
            }
        }
    }

    fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}\n", self.title);
        if let Some(m) = &self.missingness {
            s.push_str("## Missingness\n\n");
            if m.zero_missingness() {
                let _ = writeln!(s, "{ZERO_MISSINGNESS_SENTENCE}\n");
            } else if let Some(o) = m.overall.rows.first() {
                let _ = writeln!(
                    s,
                    "{} of {} records are missing ({}): {} dgm_missing, {} method_missing, {} performance_missing.\n",
                    o.n_missing(),
                    o.n_attempted,
                    percent(o.missing_rate()),
                    o.count(StatusKind::DgmMissing),
                    o.count(StatusKind::MethodMissing),
                    o.count(StatusKind::PerformanceMissing),
                );
                if o.n_replaced > 0 {
                    let _ = writeln!(
                        s,
                        "{} records count as valid only because a fallback method replaced the failed one.\n",
                        o.n_replaced
                    );
                }
            }
            s.push_str("### By method\n\n");
            s.push_str("| method | attempted | valid | dgm_missing | method_missing | performance_missing | missing rate | replaced by fallback |\n");
            s.push_str("|---|---|---|---|---|---|---|---|\n");
            for r in &m.per_method.rows {
                let _ = writeln!(s, "| {} | {} |", r.key.method.as_deref().unwrap_or(""), counts_md(r));
            }
            s.push_str("\n### By method and condition\n\n");
            s.push_str("| condition_id | condition | method | attempted | valid | dgm_missing | method_missing | performance_missing | missing rate | replaced by fallback |\n");
            s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
            for r in &m.per_method_condition.rows {
                let cid = r.key.condition_id.unwrap_or(0);
                let _ = writeln!(
                    s,
                    "| {cid} | {} | {} | {} |",
                    self.label(cid),
                    r.key.method.as_deref().unwrap_or(""),
                    counts_md(r)
                );
            }
            s.push('\n');
        }
        for p in &self.performance {
            let _ = writeln!(s, "## Performance ({})\n", p.strategy);
            s.push_str("| condition_id | condition | method | measure | value | MCSE | n_used | missing rate |\n");
            s.push_str("|---|---|---|---|---|---|---|---|\n");
            for e in &p.estimates {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} |",
                    e.condition_id,
                    self.label(e.condition_id),
                    e.method,
                    e.measure,
                    render_value(&e.value),
                    opt_number(e.mcse),
                    e.n_used,
                    format_number(e.missing_rate)
                );
            }
            s.push('\n');
        }
        if let Some(rows) = &self.sensitivity {
            s.push_str("## Sensitivity\n\n");
            s.push_str("| condition_id | condition | method | measure | strategy | value | MCSE | n_used | missing rate |\n");
            s.push_str("|---|---|---|---|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    r.condition_id,
                    self.label(r.condition_id),
                    r.method,
                    r.measure,
                    r.strategy,
                    render_value(&r.value),
                    opt_number(r.mcse),
                    r.n_used,
                    format_number(r.missing_rate)
                );
            }
            s.push('\n');
        }
        if let Some(m) = &self.metamodel {
            let f = &m.fit;
            s.push_str("## Missingness meta-model\n\n");
            let _ = writeln!(s, "Logistic regression of `{}` on: {}.", m.outcome, m.terms.join(", "));
            let _ = writeln!(
                s,
                "Records: {}, events: {}, converged: {}, iterations: {}, deviance: {}.",
                f.n_records,
                f.n_events,
                f.converged,
                f.iterations,
                format_number(f.deviance)
            );
            if f.penalized {
                let _ = writeln!(
                    s,
                    "Separation suspected for {}; refit with ridge penalty {} on non-intercept terms (penalized).",
                    f.separation_flags.join(", "),
                    format_number(f.penalty)
                );
            }
            s.push_str("The model is additive on the log-odds scale apart from listed interactions; nonlinear patterns are not captured.\n\n");
            s.push_str("| term | estimate | std. error |\n|---|---|---|\n");
            for c in &f.coefficients {
                let _ = writeln!(s, "| {} | {} | {} |", c.term, format_number(c.estimate), format_number(c.std_error));
            }
            s.push('\n');
        }
        s.push_str("## Provenance\n\n");
        let _ = writeln!(s, "- tool version: {TOOL_VERSION}");
        for (k, v) in &self.provenance {
            let _ = writeln!(s, "- {k}: {v}");
        }
        s
    }

    fn csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "section", "condition_id", "condition", "method", "measure", "strategy", "value", "mcse", "n_used", "missing_rate", "note",
        ];
        w.write_record(header).expect("in-memory write");
        let mut row = |fields: [String; 11]| w.write_record(&fields).expect("in-memory write");
        let e = String::new;
        if let Some(m) = &self.missingness {
            if m.zero_missingness() {
                row(["missingness".into(), e(), e(), e(), e(), e(), e(), e(), e(), "0".into(), ZERO_MISSINGNESS_SENTENCE.into()]);
            }
            for r in &m.per_method_condition.rows {
                let cid = r.key.condition_id.unwrap_or(0);
                row([
                    "missingness".into(),
                    cid.to_string(),
                    self.label(cid).into(),
                    r.key.method.clone().unwrap_or_default(),
                    e(),
                    e(),
                    e(),
                    e(),
                    r.n_attempted.to_string(),
                    format_number(r.missing_rate()),
                    counts_note(r),
                ]);
            }
        }
        for p in &self.performance {
            for est in &p.estimates {
                row([
                    "performance".into(),
                    est.condition_id.to_string(),
                    self.label(est.condition_id).into(),
                    est.method.clone(),
                    est.measure.to_string(),
                    p.strategy.clone(),
                    render_value(&est.value),
                    opt_number(est.mcse),
                    est.n_used.to_string(),
                    format_number(est.missing_rate),
                    e(),
                ]);
            }
        }
        for r in self.sensitivity.iter().flatten() {
            row([
                "sensitivity".into(),
                r.condition_id.to_string(),
                self.label(r.condition_id).into(),
                r.method.clone(),
                r.measure.to_string(),
                r.strategy.clone(),
                render_value(&r.value),
                opt_number(r.mcse),
                r.n_used.to_string(),
                format_number(r.missing_rate),
                e(),
            ]);
        }
        if let Some(m) = &self.metamodel {
            for c in &m.fit.coefficients {
                row([
                    "metamodel".into(),
                    e(),
                    e(),
                    e(),
                    c.term.clone(),
                    if m.fit.penalized { "penalized".into() } else { e() },
                    format_number(c.estimate),
                    format_number(c.std_error),
                    m.fit.n_records.to_string(),
                    e(),
                    format!("outcome={}; mcse column holds the coefficient standard error", m.outcome),
                ]);
            }
        }
        row(["provenance".into(), e(), e(), e(), e(), e(), e(), e(), e(), e(), format!("tool version={TOOL_VERSION}")]);
        for (k, v) in &self.provenance {
            row(["provenance".into(), e(), e(), e(), e(), e(), e(), e(), e(), e(), format!("{k}={v}")]);
        }
        w.into_inner().expect("in-memory flush")
    }

    fn json(&self) -> Value {
        let mut root = Map::new();
        root.insert("title".into(), json!(self.title));
        root.insert("tool_version".into(), json!(TOOL_VERSION));
        let value_json = |v: &EstimateValue| match v {
            EstimateValue::Value(x) => rounded(*x),
            EstimateValue::NotAnalyzed(r) => json!({ "not_analyzed": r, "text": render_value(v) }),
        };
        if let Some(m) = &self.missingness {
            let cells: Vec<Value> = m
                .per_method_condition
                .rows
                .iter()
                .map(|r| {
                    let mut o = Map::new();
                    o.insert("condition_id".into(), json!(r.key.condition_id));
                    o.insert("condition".into(), json!(self.label(r.key.condition_id.unwrap_or(0))));
                    o.insert("method".into(), json!(r.key.method));
                    o.insert("n_attempted".into(), json!(r.n_attempted));
                    for k in StatusKind::ALL {
                        o.insert(k.as_str().into(), json!(r.count(k)));
                    }
                    o.insert("missing_rate".into(), rounded(r.missing_rate()));
                    o.insert("replaced".into(), json!(r.n_replaced));
                    Value::Object(o)
                })
                .collect();
            let mut o = json!({
                "zero_missingness": m.zero_missingness(),
                "cells": cells,
            });
            if m.zero_missingness() {
                o["statement"] = json!(ZERO_MISSINGNESS_SENTENCE);
            }
            root.insert("missingness".into(), o);
        }
        let perf: Vec<Value> = self
            .performance
            .iter()
            .map(|p| {
                let cells: Vec<Value> = p
                    .estimates
                    .iter()
                    .map(|e| {
                        json!({
                            "condition_id": e.condition_id,
                            "condition": self.label(e.condition_id),
                            "method": e.method,
                            "measure": e.measure,
                            "value": value_json(&e.value),
                            "mcse": e.mcse.map_or(Value::Null, rounded),
                            "n_used": e.n_used,
                            "n_missing": e.n_missing,
                            "missing_rate": rounded(e.missing_rate),
                            "strategy": e.strategy,
                        })
                    })
                    .collect();
                json!({ "strategy": p.strategy, "estimates": cells })
            })
            .collect();
        root.insert("performance".into(), Value::Array(perf));
        if let Some(rows) = &self.sensitivity {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "condition_id": r.condition_id,
                        "condition": self.label(r.condition_id),
                        "method": r.method,
                        "measure": r.measure,
                        "strategy": r.strategy,
                        "value": value_json(&r.value),
                        "mcse": r.mcse.map_or(Value::Null, rounded),
                        "n_used": r.n_used,
                        "missing_rate": rounded(r.missing_rate),
                    })
                })
                .collect();
            root.insert("sensitivity".into(), Value::Array(rows));
        }
        if let Some(m) = &self.metamodel {
            let f = &m.fit;
            let coefs: Vec<Value> = f
                .coefficients
                .iter()
                .map(|c| json!({ "term": c.term, "estimate": rounded(c.estimate), "std_error": rounded(c.std_error) }))
                .collect();
            root.insert(
                "metamodel".into(),
                json!({
                    "outcome": m.outcome,
                    "terms": m.terms,
                    "coefficients": coefs,
                    "converged": f.converged,
                    "iterations": f.iterations,
                    "separation_flags": f.separation_flags,
                    "deviance": rounded(f.deviance),
                    "penalized": f.penalized,
                    "penalty": f.penalty,
                    "n_records": f.n_records,
                    "n_events": f.n_events,
                }),
            );
        }
        let prov: Vec<Value> = self.provenance.iter().map(|(k, v)| json!({ "key": k, "value": v })).collect();
        root.insert("provenance".into(), Value::Array(prov));
        Value::Object(root)
    }
}

fn counts_md(r: &TableRow) -> String {
    let c = |k| r.count(k).to_string();
    format!(
        "{} | {} | {} | {} | {} | {} | {}",
        r.n_attempted,
        c(StatusKind::Valid),
        c(StatusKind::DgmMissing),
        c(StatusKind::MethodMissing),
        c(StatusKind::PerformanceMissing),
        format_number(r.missing_rate()),
        r.n_replaced
    )
}

fn counts_note(r: &TableRow) -> String {
    StatusKind::ALL
        .iter()
        .map(|k| format!("{}={}", k.as_str(), r.count(*k)))
        .chain(std::iter::once(format!("replaced={}", r.n_replaced)))
        .collect::<Vec<_>>()
        .join("; ")
}
