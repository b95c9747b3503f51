#![allow(dead_code)]

use std::path::{Path, PathBuf};

use simmiss_core::diagnostics::condition_rates;
use simmiss_core::ingest::{self, ColumnMapping};
use simmiss_core::metrics::{analysis_for, estimate_measure, MeasureOptions, SensitivityOptions};
use simmiss_core::{HandlingStrategy, Level, Measure, RecordSet};

pub const CARTER_ENV: &str = "SIMMISS_CARTER_RECORDS";

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn carter_dir() -> PathBuf {
    workspace_root().join("data/carter2019")
}

/// The exported case-study records, if present.
pub fn carter_records_path() -> Option<PathBuf> {
    let p = std::env::var_os(CARTER_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| carter_dir().join("records.csv"));
    p.exists().then_some(p)
}

pub fn load_carter(records: &Path) -> Result<RecordSet, String> {
    let dir = carter_dir();
    let design = ingest::load_design_files(&dir.join("design.csv"), &dir.join("truths.csv")).map_err(|e| e.to_string())?;
    let mapping = ColumnMapping::from_path(&dir.join("mapping.json")).map_err(|e| e.to_string())?;
    ingest::load_records_file(records, &mapping, &design).map_err(|e| e.to_string())
}

pub struct Check {
    pub label: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(label: &'static str, observed: f64, target: f64, tol: f64) -> Check {
    Check {
        label,
        pass: (observed - target).abs() <= tol,
        detail: format!("{:.4} (target {target} +/- {tol})", observed),
    }
}

/// Condition ids of the no-effect, no-heterogeneity, k = 10, no-bias trio,
/// ordered none, med, high QRP.
pub fn focal_conditions(set: &RecordSet) -> Result<Vec<usize>, String> {
    let d = set.design();
    let base = [
        ("delta", Level::Number(0.0)),
        ("tau", Level::Number(0.0)),
        ("k", Level::Number(10.0)),
        ("censor", Level::Text("none".into())),
    ];
    let ids = d.select(&base);
    let order = ["none", "med", "high"];
    let mut out = Vec::new();
    for q in order {
        let id = ids
            .iter()
            .copied()
            .find(|&c| d.level_by_name(c, "qrpEnv") == Some(&Level::Text(q.into())))
            .ok_or_else(|| format!("no focal condition with qrpEnv={q}"))?;
        out.push(id);
    }
    Ok(out)
}

fn rejection(set: &RecordSet, strategy: &HandlingStrategy, cid: usize, method: &str) -> Result<f64, String> {
    let opts = SensitivityOptions::default();
    let a = analysis_for(set, strategy, Measure::RejectionRate, &opts).map_err(|e| e.to_string())?;
    let est = estimate_measure(&a, set.design(), Measure::RejectionRate, &MeasureOptions::default()).map_err(|e| e.to_string())?;
    est.iter()
        .find(|e| e.condition_id == cid && e.method == method)
        .and_then(|e| e.value.value())
        .ok_or_else(|| format!("no rejection rate for {method} in condition {cid}"))
}

/// The five case-study checks. Strategy-based checks run on the focal trio
/// only.
pub fn carter_checks(set: &RecordSet) -> Result<Vec<Check>, String> {
    let rates = condition_rates(set);
    let rate_of = |m: &str| -> Vec<(usize, f64)> {
        rates.iter().filter(|r| r.method == m).map(|r| (r.condition_id, r.rate)).collect()
    };
    let pcurve = rate_of("p-curve");
    let puniform = rate_of("p-uniform");
    if pcurve.is_empty() {
        return Err("no p-curve records".into());
    }
    let max_pcurve = pcurve.iter().map(|r| r.1).fold(0.0, f64::max);

    let focal = focal_conditions(set)?;
    let (design, records) = set.clone().into_parts();
    let subset: Vec<_> = records.into_iter().filter(|r| focal.contains(&r.condition_id)).collect();
    let sub = RecordSet::new(design, subset, set.declared_metrics().to_vec(), Vec::new()).map_err(|e| e.to_string())?;
    let none = focal[0];

    let reps = sub.repetitions(none);
    let discarded = reps.values().filter(|by_m| by_m.values().any(|r| !r.is_valid())).count() as f64 / reps.len().max(1) as f64;

    let replacement = HandlingStrategy::Replacement { chain: vec!["RE".into()] };
    Ok(vec![
        check("(a) max p-curve non-convergence", max_pcurve, 0.77, 0.01),
        check("(b) list-wise discard fraction", discarded, 0.79, 0.01),
        check("(c) RE type I error, case-wise", rejection(&sub, &HandlingStrategy::CaseWise, none, "RE")?, 0.02, 0.015),
        check("(c) RE type I error, list-wise", rejection(&sub, &HandlingStrategy::ListWise, none, "RE")?, 0.07, 0.015),
        check("(d) p-curve type I error, case-wise", rejection(&sub, &HandlingStrategy::CaseWise, none, "p-curve")?, 0.06, 0.015),
        check("(d) p-curve type I error, replacement[RE]", rejection(&sub, &replacement, none, "p-curve")?, 0.02, 0.015),
        Check {
            label: "(e) p-curve and p-uniform rates coincide",
            pass: pcurve == puniform,
            detail: format!("{} conditions compared", pcurve.len()),
        },
    ])
}
