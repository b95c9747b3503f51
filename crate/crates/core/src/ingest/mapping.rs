use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::domain::StatusKind;

/// Canonical columns of the records file, in export order.
pub const RECORD_COLUMNS: [&str; 15] = [
    "condition_id",
    "repetition",
    "method",
    "status",
    "estimate",
    "std_error",
    "ci_lower",
    "ci_upper",
    "p_value",
    "error_class",
    "error_message",
    "seed",
    "runtime_ms",
    "dgm_attempts",
    "replaced_by",
];

/// Canonical columns that are bookkeeping rather than method outputs.
pub(crate) const RESERVED: [&str; 11] = [
    "condition_id",
    "repetition",
    "method",
    "status",
    "error_class",
    "error_message",
    "seed",
    "runtime_ms",
    "dgm_attempts",
    "replaced_by",
    "warning",
];

/// Condition on the source fields of a row. Column names refer to the
/// source header (before renames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Always,
    /// The column holds a missing-value token (or is absent).
    Missing(String),
    /// The column parses as a number that is infinite or NaN.
    NonFinite(String),
    Equals { column: String, value: String },
    OneOf { column: String, values: Vec<String> },
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub(crate) fn eval<'v>(&self, field: &dyn Fn(&str) -> Option<&'v str>) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Missing(c) => field(c).is_none(),
            Predicate::NonFinite(c) => field(c)
                .and_then(crate::classify::parse_real)
                .is_some_and(|v| !v.is_finite()),
            Predicate::Equals { column, value } => field(column) == Some(value.as_str()),
            Predicate::OneOf { column, values } => {
                field(column).is_some_and(|v| values.iter().any(|x| x == v))
            }
            Predicate::All(ps) => ps.iter().all(|p| p.eval(field)),
            Predicate::Any(ps) => ps.iter().any(|p| p.eval(field)),
            Predicate::Not(p) => !p.eval(field),
        }
    }

    pub(crate) fn columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::Always => {}
            Predicate::Missing(c) | Predicate::NonFinite(c) => out.push(c),
            Predicate::Equals { column, .. } | Predicate::OneOf { column, .. } => out.push(column),
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.columns(out)),
            Predicate::Not(p) => p.columns(out),
        }
    }
}

/// Assigns a status to rows matching `when`. `error_class` and
/// `error_message` fall back to the row's own columns when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRule {
    pub when: Predicate,
    pub status: StatusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

/// How a long-format results table maps onto canonical record columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    /// Source column name -> canonical column name.
    #[serde(default)]
    pub renames: BTreeMap<String, String>,
    /// Canonical column -> (source value -> replacement value).
    #[serde(default)]
    pub value_renames: BTreeMap<String, BTreeMap<String, String>>,
    /// Canonical names of the factor columns identifying the condition, used
    /// when the source has no `condition_id` column.
    #[serde(default)]
    pub factor_columns: Vec<String>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    /// Evaluated in order; the first match wins. When empty, the `status`
    /// column (if any) is used and re-checked.
    #[serde(default)]
    pub status_rules: Vec<StatusRule>,
    /// Outputs every valid record must carry as finite numbers.
    #[serde(default)]
    pub required_outputs: Vec<String>,
    /// Metrics that may appear in `performance_missing`; inferred when unset.
    #[serde(default)]
    pub declared_metrics: Option<Vec<String>>,
    /// Method whitelist (canonical names, after value renames).
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    /// Source columns that must be present; guards against schema drift.
    #[serde(default)]
    pub expected_columns: Vec<String>,
    /// Source columns dropped without inspection.
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    #[serde(default)]
    pub treat_warnings_as_missing: bool,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColumnMapping {
    /// Reads records files written by this crate unchanged.
    pub fn identity() -> Self {
        Self {
            renames: BTreeMap::new(),
            value_renames: BTreeMap::new(),
            factor_columns: Vec::new(),
            missing_tokens: default_missing_tokens(),
            status_rules: Vec::new(),
            required_outputs: Vec::new(),
            declared_metrics: None,
            methods: None,
            expected_columns: Vec::new(),
            ignore_columns: Vec::new(),
            treat_warnings_as_missing: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let m: ColumnMapping = serde_json::from_str(text)?;
        m.check_rules()?;
        Ok(m)
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn is_missing(&self, token: &str) -> bool {
        self.missing_tokens.iter().any(|t| t == token)
    }

    fn check_rules(&self) -> Result<(), IngestError> {
        if let Some(last) = self.status_rules.last() {
            if last.when != Predicate::Always {
                return Err(IngestError::Mapping(
                    "the last status rule must use the `always` predicate".into(),
                ));
            }
        }
        for (i, r) in self.status_rules.iter().enumerate() {
            if r.status == StatusKind::PerformanceMissing && r.metric.is_none() {
                return Err(IngestError::Mapping(format!(
                    "status rule {i} assigns performance_missing without a metric"
                )));
            }
        }
        Ok(())
    }

    /// Resolves the source header against the mapping: canonical name per
    /// source column (`None` for ignored columns).
    pub(crate) fn resolve_header(&self, header: &[String]) -> Result<Vec<Option<String>>, IngestError> {
        self.check_rules()?;
        let present: BTreeSet<&str> = header.iter().map(String::as_str).collect();

        let mut missing: Vec<String> = self
            .expected_columns
            .iter()
            .filter(|c| !present.contains(c.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::SchemaDrift { missing });
        }
        for src in self.renames.keys() {
            if !present.contains(src.as_str()) {
                missing.push(src.clone());
            }
        }
        let mut rule_cols = Vec::new();
        for r in &self.status_rules {
            r.when.columns(&mut rule_cols);
        }
        for c in rule_cols {
            if !present.contains(c) && !missing.iter().any(|m| m == c) {
                missing.push(c.to_string());
            }
        }
        if !missing.is_empty() {
            return Err(IngestError::MappingMismatch { missing });
        }

        let mut canonical = Vec::with_capacity(header.len());
        let mut seen: BTreeMap<String, &str> = BTreeMap::new();
        for src in header {
            if self.ignore_columns.contains(src) {
                canonical.push(None);
                continue;
            }
            let name = self.renames.get(src).unwrap_or(src).clone();
            if let Some(prev) = seen.insert(name.clone(), src) {
                return Err(IngestError::Mapping(format!(
                    "columns '{prev}' and '{src}' both map to '{name}'"
                )));
            }
            canonical.push(Some(name));
        }

        let have = |c: &str| seen.contains_key(c);
        let mut absent: Vec<String> = ["repetition", "method"]
            .into_iter()
            .filter(|c| !have(c))
            .map(String::from)
            .collect();
        if !have("condition_id") {
            if self.factor_columns.is_empty() {
                absent.push("condition_id".into());
            } else {
                absent.extend(self.factor_columns.iter().filter(|c| !have(c)).cloned());
            }
        }
        if !absent.is_empty() {
            return Err(IngestError::Schema { missing: absent });
        }
        Ok(canonical)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_json_round_trip() {
        let text = r#"{
            "renames": {"b0_estimate": "estimate"},
            "factor_columns": ["delta"],
            "status_rules": [
                {"when": {"missing": "b0_estimate"}, "status": "method_missing", "error_class": "nonconvergence"},
                {"when": "always", "status": "valid"}
            ],
            "required_outputs": ["estimate"]
        }"#;
        let m = ColumnMapping::from_json(text).unwrap();
        assert_eq!(m.missing_tokens, vec!["", "NA"]);
        assert_eq!(m.status_rules.len(), 2);
        let back = ColumnMapping::from_json(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn last_rule_must_be_default() {
        let text = r#"{"status_rules": [{"when": {"missing": "x"}, "status": "method_missing"}]}"#;
        assert!(matches!(ColumnMapping::from_json(text), Err(IngestError::Mapping(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ColumnMapping::from_json(r#"{"rename": {}}"#).is_err());
    }

    #[test]
    fn predicates_evaluate_on_source_fields() {
        let row: BTreeMap<&str, &str> = [("a", "1"), ("b", "Inf")].into_iter().collect();
        let f = |c: &str| row.get(c).copied();
        assert!(Predicate::NonFinite("b".into()).eval(&f));
        assert!(Predicate::Missing("c".into()).eval(&f));
        assert!(Predicate::All(vec![
            Predicate::Equals { column: "a".into(), value: "1".into() },
            Predicate::Not(Box::new(Predicate::Missing("a".into()))),
        ])
        .eval(&f));
        assert!(!Predicate::OneOf { column: "a".into(), values: vec!["2".into()] }.eval(&f));
    }

    #[test]
    fn header_resolution_reports_missing_columns() {
        let m = ColumnMapping::identity();
        let header: Vec<String> = ["repetition", "method", "estimate"].map(String::from).to_vec();
        match m.resolve_header(&header) {
            Err(IngestError::Schema { missing }) => assert_eq!(missing, vec!["condition_id"]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
