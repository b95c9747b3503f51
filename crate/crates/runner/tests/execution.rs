use std::collections::BTreeSet;
use std::thread::sleep;
use std::time::Duration;

use rand::Rng;
use simmiss_core::domain::outputs;
use simmiss_core::ingest::write_records;
use simmiss_core::{Factor, Failure, MissingnessStatus, RecordSet, StatusKind, StudyDesign, TruthSpec};
use simmiss_runner::demos::{self, Demo};
use simmiss_runner::{
    execute_repetition, run_study_with_workers, ExecutionPolicy, GenContext, MethodOutput, PluggableStudy, TopUp,
    Validity,
};

fn grid(n: usize) -> StudyDesign {
    let levels: Vec<f64> = (0..n).map(|i| i as f64).collect();
    StudyDesign::full_factorial(vec![Factor::numeric("c", &levels)])
        .unwrap()
        .with_truths(|_, _| TruthSpec::new(0.0, 0.05, 0.95).unwrap())
        .unwrap()
}

fn bytes(set: &RecordSet) -> Vec<u8> {
    let mut out = Vec::new();
    write_records(&set.without_runtime(), &mut out).unwrap();
    out
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    condition: usize,
    repetition: u64,
    u: f64,
}

fn draw_study() -> PluggableStudy<Draw> {
    PluggableStudy::new("draws", |ctx: &GenContext, rng| {
        Ok(Draw {
            condition: ctx.condition_id,
            repetition: ctx.repetition,
            u: rng.random::<f64>(),
        })
    })
    .method("a", |d: &Draw, _| Ok(MethodOutput::new().with(outputs::ESTIMATE, d.u)))
    .method("b", |d: &Draw, _| Ok(MethodOutput::new().with(outputs::ESTIMATE, 1.0 - d.u)))
    .metric("squared_error", |o, t| Ok((o[outputs::ESTIMATE] - t.true_value).powi(2)))
}

#[test]
fn demos_are_deterministic_and_schedule_independent() {
    for demo in Demo::ALL {
        let design = demo.default_design().unwrap();
        let policy = ExecutionPolicy::new(30, 7);
        let run = |workers| match demo {
            Demo::NormalMean => run_study_with_workers(&demos::normal_mean(), &design, &policy, workers),
            Demo::LogisticSeparation => run_study_with_workers(&demos::logistic_separation(), &design, &policy, workers),
            Demo::RejectionDgm => run_study_with_workers(&demos::rejection_dgm(), &design, &policy, workers),
        }
        .unwrap();
        let (serial, parallel, again) = (run(1), run(4), run(4));
        assert_eq!(bytes(&serial.records), bytes(&parallel.records), "{}", demo.name());
        assert_eq!(bytes(&parallel.records), bytes(&again.records), "{}", demo.name());
        assert_eq!(serial.summary, parallel.summary);
    }
}

#[test]
fn seed_changes_records() {
    let design = grid(2);
    let a = run_study_with_workers(&draw_study(), &design, &ExecutionPolicy::new(5, 1), 2).unwrap();
    let b = run_study_with_workers(&draw_study(), &design, &ExecutionPolicy::new(5, 2), 2).unwrap();
    assert_ne!(bytes(&a.records), bytes(&b.records));
    assert_eq!(a.records.len(), 2 * 5 * 2);
}

#[test]
fn injected_failures_stay_isolated() {
    let design = grid(3);
    let policy = ExecutionPolicy::new(10, 99);
    let targets: BTreeSet<(usize, u64)> = [(0, 3), (2, 7), (1, 1)].into();
    let t = targets.clone();
    let faulty = PluggableStudy::new("draws", |ctx: &GenContext, rng| {
        Ok(Draw {
            condition: ctx.condition_id,
            repetition: ctx.repetition,
            u: rng.random::<f64>(),
        })
    })
    .method("a", move |d: &Draw, _| {
        if t.contains(&(d.condition, d.repetition)) {
            panic!("injected fault");
        }
        Ok(MethodOutput::new().with(outputs::ESTIMATE, d.u))
    })
    .method("b", |d: &Draw, _| Ok(MethodOutput::new().with(outputs::ESTIMATE, 1.0 - d.u)))
    .metric("squared_error", |o, t| Ok((o[outputs::ESTIMATE] - t.true_value).powi(2)));

    let clean = run_study_with_workers(&draw_study(), &design, &policy, 3).unwrap().records.without_runtime();
    let hurt = run_study_with_workers(&faulty, &design, &policy, 3).unwrap().records.without_runtime();
    assert_eq!(clean.len(), hurt.len());
    for (c, h) in clean.records().iter().zip(hurt.records()) {
        if h.method == "a" && targets.contains(&(h.condition_id, h.repetition)) {
            let f = h.status.failure().unwrap();
            assert_eq!(h.status.kind(), StatusKind::MethodMissing);
            assert_eq!(f.class, "panic");
            assert!(f.message.contains("injected fault"));
        } else {
            assert_eq!(c, h);
        }
    }
}

#[test]
fn timeouts_retry_with_longer_limits() {
    let design = grid(1);
    let study = PluggableStudy::new("slow", |ctx: &GenContext, _rng| Ok(ctx.repetition))
        .method("slow", |rep: &u64, cancel| {
            // rep 1 needs about 150 ms, rep 2 never finishes in time
            let ms = if *rep == 1 { 150 } else { 5_000 };
            for _ in 0..ms / 10 {
                if cancel.is_cancelled() {
                    return Err(Failure::new("cancelled", "stopped"));
                }
                sleep(Duration::from_millis(10));
            }
            Ok(MethodOutput::new().with(outputs::ESTIMATE, 0.0))
        });
    let mut policy = ExecutionPolicy::new(2, 5);
    policy.method_timeout_ms = Some(60);
    let out = run_study_with_workers(&study, &design, &policy, 2).unwrap();
    let recs = out.records.records();
    assert!(recs[0].is_valid(), "{:?}", recs[0].status);
    assert_eq!(recs[1].status.kind(), StatusKind::MethodMissing);
    assert_eq!(recs[1].status.failure().unwrap().class, "timeout");
    // rep 1: 60 ms and 120 ms time out, 240 ms succeeds; rep 2 exhausts both retries
    assert_eq!(out.summary.counters.retries, 4);
    assert_eq!(out.summary.counters.invocations, 6);
}

#[test]
fn fallback_chain_sets_replaced_by_and_counts() {
    let design = grid(2);
    let study = PluggableStudy::new("fb", |_: &GenContext, rng| Ok(rng.random::<f64>()))
        .method("knots5", |u: &f64, _| {
            if *u < 0.5 {
                Err(Failure::new("non_convergence", "too many knots"))
            } else {
                Ok(MethodOutput::new().with(outputs::ESTIMATE, *u))
            }
        })
        .method("other", |u: &f64, _| Ok(MethodOutput::new().with(outputs::ESTIMATE, *u)))
        .alternative("knots4", |u: &f64, _| {
            if *u < 0.25 {
                Err(Failure::new("non_convergence", "still too many"))
            } else {
                Ok(MethodOutput::new().with(outputs::ESTIMATE, -*u))
            }
        })
        .alternative("knots3", |u: &f64, _| Ok(MethodOutput::new().with(outputs::ESTIMATE, 2.0 * u)));
    let mut policy = ExecutionPolicy::new(200, 3);
    policy.fallback_chain.insert("knots5".into(), vec!["knots4".into(), "knots3".into()]);
    let out = run_study_with_workers(&study, &design, &policy, 4).unwrap();
    let mut expected_fallbacks = 0;
    for r in out.records.records().iter().filter(|r| r.method == "knots5") {
        assert!(r.is_valid());
        let est = r.output(outputs::ESTIMATE).unwrap();
        match r.replaced_by.as_deref() {
            None => assert!(est >= 0.5),
            Some("knots4") => {
                assert!(est <= -0.25 && est > -0.5);
                expected_fallbacks += 1;
            }
            Some("knots3") => {
                assert!(est < 0.5);
                expected_fallbacks += 2;
            }
            Some(other) => panic!("unexpected replacement {other}"),
        }
    }
    let c = out.summary.counters;
    assert_eq!(c.fallback_invocations, expected_fallbacks);
    assert_eq!(c.invocations, out.records.len() as u64 + c.retries + c.fallback_invocations);
}

#[test]
fn unknown_fallback_or_cycle_rejected() {
    let mut policy = ExecutionPolicy::new(2, 3);
    policy.fallback_chain.insert("a".into(), vec!["zzz".into()]);
    assert!(run_study_with_workers(&draw_study(), &grid(1), &policy, 1).is_err());
    policy.fallback_chain.insert("a".into(), vec!["b".into()]);
    policy.fallback_chain.insert("b".into(), vec!["a".into()]);
    assert!(run_study_with_workers(&draw_study(), &grid(1), &policy, 1).is_err());
}

fn flaky_study(p_fail: f64) -> PluggableStudy<f64> {
    PluggableStudy::new("flaky", |_: &GenContext, rng| Ok(rng.random::<f64>())).method("m", move |u: &f64, _| {
        if *u < p_fail {
            Err(Failure::new("injected", "planned failure"))
        } else {
            Ok(MethodOutput::new().with(outputs::ESTIMATE, *u))
        }
    })
}

#[test]
fn top_up_hits_the_target_exactly() {
    let design = grid(3);
    let mut policy = ExecutionPolicy::new(100, 11);
    policy.top_up = Some(TopUp {
        enabled: true,
        target_valid: 100,
        attempt_cap: 1000,
        validity: Validity::AllMethodsValid,
    });
    let out = run_study_with_workers(&flaky_study(0.1), &design, &policy, 4).unwrap();
    for t in &out.summary.top_up {
        assert!(t.reached);
        assert_eq!(t.valid, 100);
        assert!(t.attempted > 100);
        let recs = out.records.condition_records(t.condition_id);
        assert_eq!(recs.len() as u64, t.attempted);
        assert_eq!(recs.iter().filter(|r| r.is_valid()).count(), 100);
        let reps: BTreeSet<u64> = recs.iter().map(|r| r.repetition).collect();
        assert_eq!(reps, (1..=t.attempted).collect());
    }
}

#[test]
fn top_up_reports_cap_exhaustion() {
    let mut policy = ExecutionPolicy::new(20, 4);
    policy.top_up = Some(TopUp {
        enabled: true,
        target_valid: 20,
        attempt_cap: 25,
        validity: Validity::PerMethodValid,
    });
    let out = run_study_with_workers(&flaky_study(0.5), &grid(2), &policy, 2).unwrap();
    for t in &out.summary.top_up {
        assert!(!t.reached);
        assert_eq!(t.attempted, 25);
        assert!(t.valid < 20);
    }
}

#[test]
fn top_up_disabled_runs_exactly_the_repetitions() {
    let out = run_study_with_workers(&flaky_study(0.5), &grid(2), &ExecutionPolicy::new(17, 4), 2).unwrap();
    assert_eq!(out.records.len(), 34);
    assert!(out.summary.top_up.is_empty());
}

#[test]
fn exhausted_generator_marks_every_method() {
    let study = PluggableStudy::<f64>::new("never", |_: &GenContext, _| Err(Failure::new("bad_matrix", "not positive definite")))
        .method("a", |_, _| Ok(MethodOutput::new()))
        .method("b", |_, _| Ok(MethodOutput::new()));
    let mut policy = ExecutionPolicy::new(1, 0);
    policy.dgm_regeneration_cap = 7;
    let res = execute_repetition(&study, &grid(1), 0, 1, &policy).unwrap();
    assert_eq!(res.records.len(), 2);
    for r in &res.records {
        assert_eq!(r.dgm_attempts, Some(7));
        match &r.status {
            MissingnessStatus::DgmMissing(f) => {
                assert_eq!(f.class, "bad_matrix");
                assert!(f.message.contains("7 attempt"));
            }
            s => panic!("unexpected {s:?}"),
        }
    }
    assert_eq!(res.counters.invocations, 0);
}

#[test]
fn non_finite_output_and_metric_are_classified_by_stage() {
    let study = PluggableStudy::new("stages", |ctx: &GenContext, _| Ok(ctx.repetition))
        .method("m", |rep: &u64, _| {
            let v = if *rep == 1 { f64::NAN } else { 0.0 };
            Ok(MethodOutput::new().with(outputs::ESTIMATE, v))
        })
        .metric("log_score", |_, _| Ok(f64::INFINITY));
    let policy = ExecutionPolicy::new(2, 0);
    let a = execute_repetition(&study, &grid(1), 0, 1, &policy).unwrap();
    assert_eq!(a.records[0].status.kind(), StatusKind::MethodMissing);
    let b = execute_repetition(&study, &grid(1), 0, 2, &policy).unwrap();
    assert_eq!(b.records[0].status.label(), MissingnessStatus::PerformanceMissing {
        metric: "log_score".into(),
        failure: Failure::new("x", "y"),
    }.label());
    assert_eq!(b.records[0].output(outputs::ESTIMATE), Some(0.0));
}

#[test]
fn rejection_demo_matches_geometric_oracle() {
    let design = Demo::RejectionDgm.default_design().unwrap();
    let out = run_study_with_workers(&demos::rejection_dgm(), &design, &ExecutionPolicy::new(1000, 2024), 0).unwrap();
    // one value per repetition, not per method
    let attempts: Vec<f64> = out
        .records
        .records()
        .iter()
        .filter(|r| r.method == "pearson")
        .map(|r| r.dgm_attempts.unwrap() as f64)
        .collect();
    let n = attempts.len() as f64;
    let m = attempts.iter().sum::<f64>() / n;
    // geometric with p = 1/2: mean 2, variance 2
    let mcse = (2.0f64 / n).sqrt();
    assert!((m - 2.0).abs() < 3.0 * mcse, "mean attempts {m}");
    assert!(out.records.records().iter().all(|r| r.dgm_attempts >= Some(1)));
}

#[test]
fn separation_demo_loses_plain_fits() {
    let design = Demo::LogisticSeparation.default_design().unwrap();
    let out = run_study_with_workers(&demos::logistic_separation(), &design, &ExecutionPolicy::new(100, 5), 0).unwrap();
    let recs = out.records.records();
    let glm: Vec<_> = recs.iter().filter(|r| r.method == "glm").collect();
    let failed = glm
        .iter()
        .filter(|r| r.status.failure().is_some_and(|f| f.class == demos::SEPARATION_CLASS))
        .count();
    assert!(failed > 0);
    assert!(recs.iter().filter(|r| r.method == "ridge").all(|r| r.status.kind() != StatusKind::MethodMissing));
    assert!(recs.iter().any(|r| r.method == "glm_unchecked" && r.warning.is_some()));
    let c = out.summary.counters;
    assert_eq!(c.invocations, recs.len() as u64 + c.retries + c.fallback_invocations);
}
