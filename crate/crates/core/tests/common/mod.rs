#![allow(dead_code)]

use proptest::prelude::*;
use simmiss_core::{Factor, Failure, MissingnessStatus, OutcomeRecord, RecordSet, StudyDesign, TruthSpec};

pub const METRIC: &str = "squared_error";

/// Per-record draw: estimate, half-width, p-value and a status code
/// (0-5 valid, 6 method_missing, 7 performance_missing).
pub type Draw = (f64, f64, f64, u8);

pub fn draw(missing: bool) -> impl Strategy<Value = Draw> {
    let status = if missing { (0u8..8).boxed() } else { Just(0u8).boxed() };
    (
        -2.0f64..2.0,
        0.0f64..1.5,
        prop_oneof![4 => 0.0f64..1.0, 1 => Just(0.05)],
        status,
    )
}

pub fn design(n_cond: usize, truths: &[f64]) -> StudyDesign {
    let levels: Vec<f64> = (0..n_cond).map(|i| i as f64).collect();
    StudyDesign::full_factorial(vec![Factor::numeric("c", &levels)])
        .unwrap()
        .with_truths(|_, c| TruthSpec::new(truths[c.id % truths.len()], 0.05, 0.95).unwrap())
        .unwrap()
}

pub fn record(c: usize, rep: u64, m: &str, d: Draw) -> OutcomeRecord {
    let (est, w, p, code) = d;
    let r = OutcomeRecord::new(c, rep, m);
    match code {
        6 => r.with_status(MissingnessStatus::MethodMissing(Failure::new("nonconvergence", "did not converge"))),
        7 => r
            .with_output("estimate", est)
            .with_output("ci_lower", est - w)
            .with_output("ci_upper", est + w)
            .with_output("p_value", p)
            .with_status(MissingnessStatus::PerformanceMissing {
                metric: METRIC.into(),
                failure: Failure::new("non_finite_metric", "NaN"),
            }),
        _ => r
            .with_output("estimate", est)
            .with_output("ci_lower", est - w)
            .with_output("ci_upper", est + w)
            .with_output("p_value", p),
    }
}

pub const METHODS: [&str; 3] = ["A", "B", "C"];

/// Balanced record set: every method in every (condition, repetition).
pub fn arb_record_set(max_methods: usize, max_reps: u64, max_conds: usize, missing: bool) -> impl Strategy<Value = RecordSet> {
    (1..=max_methods, 1..=max_reps, 1..=max_conds, prop::sample::select(vec![0.0, 0.5, -1.0]))
        .prop_flat_map(move |(nm, nr, nc, truth)| {
            let n = nm * nr as usize * nc;
            (Just((nm, nr, nc, truth)), prop::collection::vec(draw(missing), n))
        })
        .prop_map(|((nm, nr, nc, truth), draws)| {
            let mut recs = Vec::new();
            let mut it = draws.into_iter();
            for c in 0..nc {
                for rep in 1..=nr {
                    for m in &METHODS[..nm] {
                        recs.push(record(c, rep, m, it.next().unwrap()));
                    }
                }
            }
            RecordSet::new(design(nc, &[truth, 0.0]), recs, vec![METRIC.into()], vec![]).unwrap()
        })
}
