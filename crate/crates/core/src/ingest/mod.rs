//! Loading designs, truths and long-format per-repetition records from CSV,
//! and writing them back out in canonical form.

mod mapping;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub use mapping::{ColumnMapping, Predicate, StatusRule, RECORD_COLUMNS};

use crate::classify::{self, parse_real, ClassifyOptions};
use crate::domain::{
    outputs, DesignError, Factor, Level, MissingnessStatus, OutcomeRecord, RecordSet,
    RecordSetError, StatusKind, StudyDesign, TruthSpec,
};

/// A rejected data row; `row` counts data rows from 1 (the header is not counted).
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

fn summarize(rows: &[RowError]) -> String {
    const SHOWN: usize = 20;
    let mut s = rows
        .iter()
        .take(SHOWN)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ");
    if rows.len() > SHOWN {
        s.push_str(&format!("; ... and {} more", rows.len() - SHOWN));
    }
    s
}

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("mapping file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid mapping: {0}")]
    Mapping(String),
    #[error("mapping refers to columns not in the header: {}", missing.join(", "))]
    MappingMismatch { missing: Vec<String> },
    #[error("source schema changed; expected columns not found: {}", missing.join(", "))]
    SchemaDrift { missing: Vec<String> },
    #[error("missing required column(s): {}", missing.join(", "))]
    Schema { missing: Vec<String> },
    #[error("design: {0}")]
    Design(#[from] DesignError),
    #[error("design row {row}: condition_id {found} breaks dense row order (expected {expected})")]
    NonDenseConditionId { row: usize, found: String, expected: usize },
    #[error("design row {row} duplicates the factor levels of row {first}")]
    DuplicateCondition { row: usize, first: usize },
    #[error("truths row {row}: unknown condition_id {condition_id}")]
    UnknownTruthCondition { row: usize, condition_id: String },
    #[error("truths row {row}: condition {condition_id} already has a truth")]
    DuplicateTruth { row: usize, condition_id: usize },
    #[error("{file} row {row}: column '{column}' has non-numeric value '{value}'")]
    BadNumber {
        file: &'static str,
        row: usize,
        column: String,
        value: String,
    },
    #[error("truths row {row}: {reason}")]
    InvalidTruth { row: usize, reason: String },
    #[error("{} rejected row(s): {}", .0.len(), summarize(.0))]
    Rows(Vec<RowError>),
    #[error("record set: {0}")]
    RecordSet(#[from] RecordSetError),
}

fn header_of<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>, IngestError> {
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source)
}

/// Reads the design (one row per condition, one column per factor, optional
/// `condition_id`) and the truths table keyed by `condition_id`.
pub fn load_design<D: Read, T: Read>(design_source: D, truths_source: T) -> Result<StudyDesign, IngestError> {
    let mut rdr = reader(design_source);
    let header = header_of(&mut rdr)?;
    let id_col = header.iter().position(|h| h == "condition_id");
    let factor_cols: Vec<usize> = (0..header.len()).filter(|&i| Some(i) != id_col).collect();
    let mut factors: Vec<Factor> = factor_cols
        .iter()
        .map(|&i| Factor::new(header[i].clone(), Vec::new()))
        .collect();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut first_seen: HashMap<Vec<usize>, usize> = HashMap::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if let Some(c) = id_col {
            let tok = rec.get(c).unwrap_or("").trim();
            if tok.parse::<usize>().ok() != Some(i) {
                return Err(IngestError::NonDenseConditionId {
                    row,
                    found: tok.to_string(),
                    expected: i,
                });
            }
        }
        let mut idx = Vec::with_capacity(factor_cols.len());
        for (f, &c) in factors.iter_mut().zip(&factor_cols) {
            let level = Level::parse(rec.get(c).unwrap_or(""));
            let li = match f.level_index(&level) {
                Some(li) => li,
                None => {
                    f.levels.push(level);
                    f.levels.len() - 1
                }
            };
            idx.push(li);
        }
        if let Some(&first) = first_seen.get(&idx) {
            return Err(IngestError::DuplicateCondition { row, first });
        }
        first_seen.insert(idx.clone(), row);
        rows.push(idx);
    }
    let mut design = StudyDesign::from_condition_rows(factors, rows)?;

    let mut rdr = reader(truths_source);
    let header = header_of(&mut rdr)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let needed = ["condition_id", "true_value", "nominal_alpha", "nominal_coverage"];
    let missing: Vec<String> = needed
        .iter()
        .filter(|n| col(n).is_none())
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::Schema { missing });
    }
    let [c_id, c_true, c_alpha, c_cov] = needed.map(|n| col(n).unwrap());
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id_tok = rec.get(c_id).unwrap_or("").trim();
        let id = match id_tok.parse::<usize>() {
            Ok(id) if id < design.len() => id,
            _ => {
                return Err(IngestError::UnknownTruthCondition {
                    row,
                    condition_id: id_tok.to_string(),
                })
            }
        };
        let num = |c: usize, name: &str| -> Result<f64, IngestError> {
            let tok = rec.get(c).unwrap_or("").trim();
            tok.parse::<f64>().map_err(|_| IngestError::BadNumber {
                file: "truths",
                row,
                column: name.to_string(),
                value: tok.to_string(),
            })
        };
        let truth = TruthSpec::new(
            num(c_true, "true_value")?,
            num(c_alpha, "nominal_alpha")?,
            num(c_cov, "nominal_coverage")?,
        )
        .map_err(|reason| IngestError::InvalidTruth { row, reason })?;
        if !seen.insert(id) {
            return Err(IngestError::DuplicateTruth { row, condition_id: id });
        }
        design.set_truth(id, truth)?;
    }
    Ok(design)
}

pub fn load_design_files(design: &Path, truths: &Path) -> Result<StudyDesign, IngestError> {
    load_design(open(design)?, open(truths)?)
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Parses a long-format records table into a validated [`RecordSet`].
/// Any rejected row aborts the load; all rejections are reported together.
pub fn load_records<R: Read>(
    source: R,
    mapping: &ColumnMapping,
    design: &StudyDesign,
) -> Result<RecordSet, IngestError> {
    let mut rdr = reader(source);
    let header = header_of(&mut rdr)?;
    let canonical = mapping.resolve_header(&header)?;
    let pos: HashMap<&str, usize> = canonical
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_deref().map(|c| (c, i)))
        .collect();

    let by_id = pos.contains_key("condition_id");
    let factor_cols: Vec<(usize, usize)> = if by_id {
        Vec::new()
    } else {
        let mut v = Vec::new();
        for name in &mapping.factor_columns {
            let f = design.factor_index(name).ok_or_else(|| {
                IngestError::Mapping(format!("factor column '{name}' is not a design factor"))
            })?;
            v.push((pos[name.as_str()], f));
        }
        if v.len() != design.factors().len() {
            return Err(IngestError::Mapping(format!(
                "factor_columns name {} of the design's {} factors",
                v.len(),
                design.factors().len()
            )));
        }
        v
    };
    let cell_index: HashMap<Vec<usize>, usize> = design
        .conditions()
        .iter()
        .map(|c| {
            let key: Vec<usize> = factor_cols.iter().map(|&(_, f)| c.levels[f]).collect();
            (key, c.id)
        })
        .collect();
    let mut level_cache: Vec<HashMap<String, Option<usize>>> = vec![HashMap::new(); factor_cols.len()];

    let factor_names: BTreeSet<&str> = mapping.factor_columns.iter().map(String::as_str).collect();
    let mut rule_cols = Vec::new();
    for r in &mapping.status_rules {
        r.when.columns(&mut rule_cols);
    }
    let output_cols: Vec<(usize, &str)> = canonical
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let c = c.as_deref()?;
            let bookkeeping = mapping::RESERVED.contains(&c)
                || factor_names.contains(c)
                || (rule_cols.contains(&header[i].as_str())
                    && !outputs::STANDARD.contains(&c)
                    && !mapping.required_outputs.iter().any(|o| o == c));
            (!bookkeeping).then_some((i, c))
        })
        .collect();

    let classify_opts = ClassifyOptions {
        treat_warnings_as_missing: mapping.treat_warnings_as_missing,
        missing_tokens: mapping.missing_tokens.clone(),
    };

    let mut errors: Vec<RowError> = Vec::new();
    let mut records: Vec<OutcomeRecord> = Vec::new();
    let mut keys: HashMap<(usize, u64, String), usize> = HashMap::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw_field = |idx: usize| -> Option<&str> {
            rec.get(idx).map(str::trim).filter(|v| !mapping.is_missing(v))
        };
        let canonical_value = |name: &str| -> Option<String> {
            let v = raw_field(*pos.get(name)?)?;
            let renamed = mapping
                .value_renames
                .get(name)
                .and_then(|m| m.get(v))
                .map(String::as_str)
                .unwrap_or(v);
            Some(renamed.to_string())
        };
        let source_field = |col: &str| -> Option<&str> {
            header.iter().position(|h| h == col).and_then(raw_field)
        };

        let mut row_err = |message: String| errors.push(RowError { row, message });

        // condition
        let condition_id = if by_id {
            match canonical_value("condition_id").and_then(|t| t.parse::<usize>().ok()) {
                Some(id) if id < design.len() => id,
                _ => {
                    row_err(format!(
                        "unknown condition_id '{}'",
                        canonical_value("condition_id").unwrap_or_default()
                    ));
                    continue;
                }
            }
        } else {
            let mut key = Vec::with_capacity(factor_cols.len());
            let mut bad = None;
            for (j, &(col, f)) in factor_cols.iter().enumerate() {
                let name = canonical[col].as_deref().unwrap_or_default();
                let tok = canonical_value(name).unwrap_or_default();
                let li = *level_cache[j].entry(tok.clone()).or_insert_with(|| {
                    design.factors()[f].level_index(&Level::parse(&tok))
                });
                match li {
                    Some(li) => key.push(li),
                    None => {
                        bad = Some(format!(
                            "level '{tok}' is not in factor '{}'",
                            design.factors()[f].name
                        ));
                        break;
                    }
                }
            }
            if let Some(msg) = bad {
                row_err(msg);
                continue;
            }
            match cell_index.get(&key) {
                Some(&id) => id,
                None => {
                    row_err("factor levels match no design condition".into());
                    continue;
                }
            }
        };

        let repetition = match canonical_value("repetition").and_then(|t| t.parse::<u64>().ok()) {
            Some(r) => r,
            None => {
                row_err(format!(
                    "repetition '{}' is not a non-negative integer",
                    canonical_value("repetition").unwrap_or_default()
                ));
                continue;
            }
        };
        let Some(method) = canonical_value("method") else {
            row_err("method is missing".into());
            continue;
        };
        if let Some(allowed) = &mapping.methods {
            if !allowed.contains(&method) {
                row_err(format!("method '{method}' is not in the configured whitelist"));
                continue;
            }
        }

        // status: mapping rules first, then the classifier re-check
        let mut raw: Vec<(String, String)> = Vec::new();
        let row_class = canonical_value("error_class");
        let row_message = canonical_value("error_message");
        let rule = mapping
            .status_rules
            .iter()
            .find(|r| r.when.eval(&|c| source_field(c)));
        match rule {
            Some(rule) => {
                let label = match (&rule.status, &rule.metric) {
                    (StatusKind::PerformanceMissing, Some(m)) => format!("performance_missing:{m}"),
                    (k, _) => k.as_str().to_string(),
                };
                raw.push(("status".into(), label));
                if let Some(c) = rule.error_class.clone().or(row_class) {
                    raw.push(("error_class".into(), c));
                }
                if let Some(m) = rule.error_message.clone().or(row_message) {
                    raw.push(("error_message".into(), m));
                }
            }
            None => {
                if let Some(s) = canonical_value("status") {
                    raw.push(("status".into(), s));
                }
                if let Some(c) = row_class {
                    raw.push(("error_class".into(), c));
                }
                if let Some(m) = row_message {
                    raw.push(("error_message".into(), m));
                }
            }
        }
        if let Some(w) = canonical_value("warning") {
            raw.push(("warning".into(), w));
        }
        for out in &mapping.required_outputs {
            if let Some(v) = canonical_value(out) {
                raw.push((out.clone(), v));
            }
        }
        let classification = match classify::classify(raw, &mapping.required_outputs, &classify_opts) {
            Ok(c) => c,
            Err(e) => {
                row_err(e.to_string());
                continue;
            }
        };

        let mut outputs_map = BTreeMap::new();
        let mut bad_output = None;
        for &(col, name) in &output_cols {
            if let Some(tok) = raw_field(col) {
                match parse_real(tok) {
                    Some(v) => {
                        outputs_map.insert(name.to_string(), v);
                    }
                    None => {
                        bad_output = Some(format!("column '{name}' has non-numeric value '{tok}'"));
                        break;
                    }
                }
            }
        }
        if let Some(msg) = bad_output {
            row_err(msg);
            continue;
        }

        let seed = match canonical_value("seed").map(|t| t.parse::<u64>()) {
            None => None,
            Some(Ok(s)) => Some(s),
            Some(Err(_)) => {
                row_err("seed is not an unsigned 64-bit integer".into());
                continue;
            }
        };
        let runtime_ms = match canonical_value("runtime_ms").map(|t| t.parse::<f64>()) {
            None => None,
            Some(Ok(v)) if v >= 0.0 => Some(v),
            Some(_) => {
                row_err("runtime_ms is not a non-negative number".into());
                continue;
            }
        };
        let dgm_attempts = match canonical_value("dgm_attempts").map(|t| t.parse::<u32>()) {
            None => None,
            Some(Ok(v)) if v >= 1 => Some(v),
            Some(_) => {
                row_err("dgm_attempts is not a positive integer".into());
                continue;
            }
        };

        let key = (condition_id, repetition, method.clone());
        if let Some(first) = keys.get(&key) {
            row_err(format!(
                "duplicate key (condition {condition_id}, repetition {repetition}, method '{method}') first seen in row {first}"
            ));
            continue;
        }
        keys.insert(key, row);

        records.push(OutcomeRecord {
            condition_id,
            repetition,
            method,
            status: classification.status,
            outputs: outputs_map,
            seed,
            runtime_ms,
            dgm_attempts,
            replaced_by: canonical_value("replaced_by"),
            warning: classification.warning,
        });
    }

    if !errors.is_empty() {
        return Err(IngestError::Rows(errors));
    }
    let declared = match &mapping.declared_metrics {
        Some(m) => m.clone(),
        None => records
            .iter()
            .filter_map(|r| match &r.status {
                MissingnessStatus::PerformanceMissing { metric, .. } => Some(metric.clone()),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    Ok(RecordSet::new(
        design.clone(),
        records,
        declared,
        mapping.required_outputs.clone(),
    )?)
}

pub fn load_records_file(path: &Path, mapping: &ColumnMapping, design: &StudyDesign) -> Result<RecordSet, IngestError> {
    load_records(open(path)?, mapping, design)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the canonical records file: the fixed columns followed by any
/// extra outputs in name order.
pub fn write_records<W: Write>(set: &RecordSet, sink: W) -> Result<(), IngestError> {
    let extras: Vec<String> = set
        .records()
        .iter()
        .flat_map(|r| r.outputs.keys())
        .filter(|k| !outputs::STANDARD.contains(&k.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = RECORD_COLUMNS.to_vec();
    header.extend(extras.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in set.records() {
        let note = r.status.failure().or(r.warning.as_ref());
        let mut row: Vec<String> = vec![
            r.condition_id.to_string(),
            r.repetition.to_string(),
            r.method.clone(),
            r.status.label(),
        ];
        row.extend(outputs::STANDARD.iter().map(|o| fmt_opt(r.output(o))));
        row.push(note.map(|f| f.class.clone()).unwrap_or_default());
        row.push(note.map(|f| f.message.clone()).unwrap_or_default());
        row.push(r.seed.map(|s| s.to_string()).unwrap_or_default());
        row.push(fmt_opt(r.runtime_ms));
        row.push(r.dgm_attempts.map(|a| a.to_string()).unwrap_or_default());
        row.push(r.replaced_by.clone().unwrap_or_default());
        row.extend(extras.iter().map(|e| fmt_opt(r.output(e))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<records>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_design<W: Write>(design: &StudyDesign, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["condition_id".to_string()];
    header.extend(design.factors().iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for c in design.conditions() {
        let mut row = vec![c.id.to_string()];
        row.extend((0..design.factors().len()).map(|f| design.level(c.id, f).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<design>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_truths<W: Write>(design: &StudyDesign, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["condition_id", "true_value", "nominal_alpha", "nominal_coverage"])?;
    for (id, t) in design.truths() {
        w.write_record([
            id.to_string(),
            t.true_value.to_string(),
            t.nominal_alpha.to_string(),
            t.nominal_coverage.to_string(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Io {
        path: "<truths>".into(),
        source: e,
    })?;
    Ok(())
}
