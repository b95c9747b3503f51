//! Maps raw per-record fields onto the three-stage missingness taxonomy.
//!
//! Recognised keys:
//!
//! * `stage`: the stage that failed, one of `dgm`, `method`, `performance`, `none`
//! * `status`: a pre-assigned status label (see [`MissingnessStatus::label`])
//! * `error_class`, `error_message`, `warning`
//! * `metric`: name of the metric that failed at the performance stage
//! * every declared output name, holding its value as text
//! * `metric.<name>`: an evaluated metric value
//!
//! Stage and status markers must agree. Output values are re-checked: a record
//! marked valid whose required outputs are absent or non-finite becomes
//! `method_missing`, and a non-finite metric value makes it `performance_missing`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{Failure, MissingnessStatus, StatusKind};

pub const STAGE: &str = "stage";
pub const STATUS: &str = "status";
pub const ERROR_CLASS: &str = "error_class";
pub const ERROR_MESSAGE: &str = "error_message";
pub const WARNING: &str = "warning";
pub const METRIC: &str = "metric";
pub const METRIC_PREFIX: &str = "metric.";

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("conflicting fields {fields:?}: {reason}")]
    Conflict { fields: Vec<String>, reason: String },
    #[error("field '{field}' holds unparseable value '{value}'")]
    BadValue { field: String, value: String },
    #[error("unknown {field} marker '{value}'")]
    UnknownMarker { field: String, value: String },
    #[error("performance stage failure without a metric name")]
    MissingMetricName,
    #[error("nothing to classify: no stage marker, status or output values")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOptions {
    /// Treat a warning on an otherwise valid record as method missingness.
    pub treat_warnings_as_missing: bool,
    /// Tokens that mean "no value".
    pub missing_tokens: Vec<String>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            treat_warnings_as_missing: false,
            missing_tokens: vec![String::new(), "NA".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub status: MissingnessStatus,
    /// Set for valid records that carried a warning or error text.
    pub warning: Option<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    None,
    Dgm,
    Method,
    Performance,
}

impl Stage {
    fn from_kind(kind: StatusKind) -> Stage {
        match kind {
            StatusKind::Valid => Stage::None,
            StatusKind::DgmMissing => Stage::Dgm,
            StatusKind::MethodMissing => Stage::Method,
            StatusKind::PerformanceMissing => Stage::Performance,
        }
    }
}

/// Parses a numeric token, accepting the usual spellings of infinity and NaN.
pub fn parse_real(token: &str) -> Option<f64> {
    let t = token.trim();
    match t {
        "Inf" | "+Inf" | "inf" | "+inf" | "Infinity" | "infinity" => Some(f64::INFINITY),
        "-Inf" | "-inf" | "-Infinity" | "-infinity" => Some(f64::NEG_INFINITY),
        "NaN" | "nan" => Some(f64::NAN),
        _ => t.parse::<f64>().ok(),
    }
}

/// Classifies with default options; see [`classify`].
pub fn classify_status<I, K, V>(
    raw: I,
    declared_outputs: &[String],
) -> Result<MissingnessStatus, ClassifyError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    classify(raw, declared_outputs, &ClassifyOptions::default()).map(|c| c.status)
}

pub fn classify<I, K, V>(
    raw: I,
    declared_outputs: &[String],
    opts: &ClassifyOptions,
) -> Result<Classification, ClassifyError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in raw {
        let (k, v) = (k.as_ref(), v.as_ref());
        if opts.missing_tokens.iter().any(|t| t == v) {
            continue;
        }
        if let Some(prev) = fields.get(k) {
            if prev != v {
                return Err(ClassifyError::Conflict {
                    fields: vec![k.to_string()],
                    reason: format!("'{prev}' vs '{v}'"),
                });
            }
        }
        fields.insert(k.to_string(), v.to_string());
    }

    let stage_marker = match fields.get(STAGE).map(String::as_str) {
        None => None,
        Some("none") => Some(Stage::None),
        Some("dgm") => Some(Stage::Dgm),
        Some("method") => Some(Stage::Method),
        Some("performance") => Some(Stage::Performance),
        Some(other) => {
            return Err(ClassifyError::UnknownMarker {
                field: STAGE.into(),
                value: other.into(),
            })
        }
    };
    let (status_stage, status_metric) = match fields.get(STATUS) {
        None => (None, None),
        Some(label) => match MissingnessStatus::parse_label(label) {
            Some((kind, metric)) => (Some(Stage::from_kind(kind)), metric),
            None => {
                return Err(ClassifyError::UnknownMarker {
                    field: STATUS.into(),
                    value: label.clone(),
                })
            }
        },
    };
    let stage = match (stage_marker, status_stage) {
        (Some(a), Some(b)) if a != b => {
            return Err(ClassifyError::Conflict {
                fields: vec![STAGE.into(), STATUS.into()],
                reason: format!("stage marker says {a:?} but status says {b:?}"),
            })
        }
        (a, b) => a.or(b),
    };

    let mut metric_name = fields.get(METRIC).cloned();
    if let (Some(a), Some(b)) = (&metric_name, &status_metric) {
        if a != b {
            return Err(ClassifyError::Conflict {
                fields: vec![METRIC.into(), STATUS.into()],
                reason: format!("metric '{a}' vs status metric '{b}'"),
            });
        }
    }
    if metric_name.is_none() {
        metric_name = status_metric;
    }

    let mut metric_values: Vec<(String, f64)> = Vec::new();
    for (k, v) in &fields {
        if let Some(name) = k.strip_prefix(METRIC_PREFIX) {
            let value = parse_real(v).ok_or_else(|| ClassifyError::BadValue {
                field: k.clone(),
                value: v.clone(),
            })?;
            metric_values.push((name.to_string(), value));
        }
    }

    let given_failure = |default_class: &str| {
        Failure::new(
            fields
                .get(ERROR_CLASS)
                .cloned()
                .unwrap_or_else(|| default_class.to_string()),
            fields.get(ERROR_MESSAGE).cloned().unwrap_or_default(),
        )
    };

    if stage.is_none() && declared_outputs.is_empty() && metric_values.is_empty() {
        return Err(ClassifyError::Empty);
    }

    match stage {
        Some(Stage::Dgm) => return Ok(missing(MissingnessStatus::DgmMissing(given_failure("dgm_error")))),
        Some(Stage::Method) => {
            return Ok(missing(MissingnessStatus::MethodMissing(given_failure("method_error"))))
        }
        _ => {}
    }

    // Output re-check: every declared output must be present and finite.
    let mut bad_output: Option<(String, String)> = None;
    for out in declared_outputs {
        match fields.get(out) {
            None => {
                bad_output.get_or_insert((out.clone(), format!("required output '{out}' is absent")));
            }
            Some(tok) => {
                let v = parse_real(tok).ok_or_else(|| ClassifyError::BadValue {
                    field: out.clone(),
                    value: tok.clone(),
                })?;
                if !v.is_finite() {
                    bad_output.get_or_insert((
                        out.clone(),
                        format!("required output '{out}' is not finite ({v})"),
                    ));
                }
            }
        }
    }
    if let Some((field, message)) = bad_output {
        if stage == Some(Stage::Performance) {
            return Err(ClassifyError::Conflict {
                fields: vec![STAGE.into(), field],
                reason: "performance-stage failure but a method output is invalid".into(),
            });
        }
        let failure = match fields.get(ERROR_CLASS) {
            Some(class) => Failure::new(
                class.clone(),
                fields.get(ERROR_MESSAGE).cloned().unwrap_or(message),
            ),
            None => Failure::new("invalid_output", message),
        };
        return Ok(missing(MissingnessStatus::MethodMissing(failure)));
    }

    if stage == Some(Stage::Performance) {
        let metric = metric_name
            .or_else(|| {
                metric_values
                    .iter()
                    .find(|(_, v)| !v.is_finite())
                    .map(|(n, _)| n.clone())
            })
            .ok_or(ClassifyError::MissingMetricName)?;
        return Ok(missing(MissingnessStatus::PerformanceMissing {
            metric,
            failure: given_failure("performance_error"),
        }));
    }

    if let Some((metric, value)) = metric_values.iter().find(|(_, v)| !v.is_finite()) {
        let failure = Failure::new(
            fields
                .get(ERROR_CLASS)
                .cloned()
                .unwrap_or_else(|| "non_finite_metric".to_string()),
            fields
                .get(ERROR_MESSAGE)
                .cloned()
                .unwrap_or_else(|| format!("metric '{metric}' evaluated to {value}")),
        );
        return Ok(missing(MissingnessStatus::PerformanceMissing {
            metric: metric.clone(),
            failure,
        }));
    }

    let warning = match (fields.get(WARNING), fields.get(ERROR_CLASS), fields.get(ERROR_MESSAGE)) {
        (None, None, None) => None,
        (w, class, msg) => Some(Failure::new(
            class.cloned().unwrap_or_else(|| "warning".to_string()),
            msg.or(w).cloned().unwrap_or_default(),
        )),
    };
    match warning {
        Some(w) if opts.treat_warnings_as_missing => {
            Ok(missing(MissingnessStatus::MethodMissing(w)))
        }
        warning => Ok(Classification {
            status: MissingnessStatus::Valid,
            warning,
        }),
    }
}

fn missing(status: MissingnessStatus) -> Classification {
    Classification {
        status,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est() -> Vec<String> {
        vec!["estimate".to_string()]
    }

    #[test]
    fn method_stage_error_without_outputs() {
        let s = classify_status(
            [("stage", "method"), ("error_message", "optimizer failed to converge")],
            &est(),
        )
        .unwrap();
        assert_eq!(
            s,
            MissingnessStatus::MethodMissing(Failure::new("method_error", "optimizer failed to converge"))
        );
    }

    #[test]
    fn clean_outputs_are_valid() {
        let s = classify_status([("estimate", "0.31"), ("p_value", "0.2")], &est()).unwrap();
        assert_eq!(s, MissingnessStatus::Valid);
    }

    #[test]
    fn infinite_metric_is_performance_missing() {
        let s = classify_status([("estimate", "0.5"), ("metric.log_score", "Inf")], &est()).unwrap();
        match s {
            MissingnessStatus::PerformanceMissing { metric, .. } => assert_eq!(metric, "log_score"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn na_estimate_with_error_class_is_method_missing() {
        let s = classify_status([("estimate", "NA"), ("error_class", "nonconvergence")], &est()).unwrap();
        assert_eq!(s.kind(), StatusKind::MethodMissing);
        assert_eq!(s.failure().unwrap().class, "nonconvergence");
    }

    #[test]
    fn non_finite_outputs_all_detected() {
        for tok in ["Inf", "-Inf", "NaN", "inf", "nan"] {
            let s = classify_status([("estimate", tok)], &est()).unwrap();
            assert_eq!(s.kind(), StatusKind::MethodMissing, "token {tok}");
        }
    }

    #[test]
    fn dgm_stage_wins() {
        let s = classify_status([("stage", "dgm"), ("error_class", "not_psd")], &est()).unwrap();
        assert_eq!(s, MissingnessStatus::DgmMissing(Failure::new("not_psd", "")));
    }

    #[test]
    fn contradictory_markers_name_fields() {
        let err = classify_status([("stage", "dgm"), ("status", "valid"), ("estimate", "1")], &est())
            .unwrap_err();
        match err {
            ClassifyError::Conflict { fields, .. } => assert_eq!(fields, vec!["stage", "status"]),
            other => panic!("unexpected {other:?}"),
        }
        let err = classify_status([("stage", "performance"), ("metric", "m")], &est()).unwrap_err();
        assert!(matches!(err, ClassifyError::Conflict { .. }));
    }

    #[test]
    fn duplicate_keys_with_different_values_conflict() {
        let err = classify_status([("estimate", "1"), ("estimate", "2")], &est()).unwrap_err();
        assert!(matches!(err, ClassifyError::Conflict { .. }));
    }

    #[test]
    fn status_valid_is_rechecked_against_outputs() {
        let s = classify_status([("status", "valid"), ("estimate", "NA")], &est()).unwrap();
        assert_eq!(s.kind(), StatusKind::MethodMissing);
    }

    #[test]
    fn performance_status_label_carries_metric() {
        let s = classify_status([("status", "performance_missing:calib"), ("estimate", "1")], &est())
            .unwrap();
        assert!(matches!(s, MissingnessStatus::PerformanceMissing { ref metric, .. } if metric == "calib"));
        assert_eq!(
            classify_status([("stage", "performance"), ("estimate", "1")], &est()).unwrap_err(),
            ClassifyError::MissingMetricName
        );
    }

    #[test]
    fn warnings_are_valid_unless_configured() {
        let raw = [("estimate", "1.0"), ("warning", "step size reduced")];
        let c = classify(raw, &est(), &ClassifyOptions::default()).unwrap();
        assert_eq!(c.status, MissingnessStatus::Valid);
        assert_eq!(c.warning, Some(Failure::new("warning", "step size reduced")));
        let strict = ClassifyOptions {
            treat_warnings_as_missing: true,
            ..Default::default()
        };
        let c = classify(raw, &est(), &strict).unwrap();
        assert_eq!(c.status.kind(), StatusKind::MethodMissing);
    }

    #[test]
    fn empty_input_is_rejected() {
        let none: [(&str, &str); 0] = [];
        assert_eq!(classify_status(none, &[]).unwrap_err(), ClassifyError::Empty);
        assert!(matches!(
            classify_status([("estimate", "abc")], &est()),
            Err(ClassifyError::BadValue { .. })
        ));
    }

    fn field_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
        let key = prop_oneof![
            Just("stage".to_string()),
            Just("status".to_string()),
            Just("estimate".to_string()),
            Just("p_value".to_string()),
            Just("error_class".to_string()),
            Just("metric.m".to_string()),
            Just("warning".to_string()),
        ];
        let value = prop_oneof![
            Just("none".to_string()),
            Just("method".to_string()),
            Just("valid".to_string()),
            Just("NA".to_string()),
            Just("Inf".to_string()),
            Just("0.5".to_string()),
            Just("boom".to_string()),
        ];
        proptest::collection::btree_map(key, value, 0..6)
            .prop_map(|m| m.into_iter().collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn classification_ignores_key_order(fields in field_strategy(), seed in any::<u64>()) {
            let mut shuffled = fields.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = classify(fields.clone(), &est(), &ClassifyOptions::default());
            let b = classify(shuffled, &est(), &ClassifyOptions::default());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn valid_implies_finite_declared_outputs(fields in field_strategy()) {
            if let Ok(c) = classify(fields.clone(), &est(), &ClassifyOptions::default()) {
                if c.status.is_valid() {
                    let v = fields.iter().find(|(k, _)| k == "estimate").map(|(_, v)| v.clone());
                    prop_assert!(v.and_then(|t| parse_real(&t)).is_some_and(f64::is_finite));
                }
            }
        }
    }
}
