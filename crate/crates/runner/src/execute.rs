//! Stage pipeline per repetition and the study loop with top-up.

use std::any::Any;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use simmiss_core::domain::outputs;
use simmiss_core::{Failure, MissingnessStatus, OutcomeRecord, RecordSet, StudyDesign};

use crate::policy::{ExecutionPolicy, Validity};
use crate::seed::derive_seed;
use crate::study::{Cancel, GenContext, MethodFn, MethodOutput, PluggableStudy};
use crate::RunError;

pub const WORKERS_ENV: &str = "SIMMISS_WORKERS";

/// Method invocation counts. `invocations` equals the number of records
/// that reached the method stage plus `retries` plus `fallback_invocations`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub invocations: u64,
    pub retries: u64,
    pub fallback_invocations: u64,
}

impl Counters {
    fn add(&mut self, o: &Counters) {
        self.invocations += o.invocations;
        self.retries += o.retries;
        self.fallback_invocations += o.fallback_invocations;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopUpOutcome {
    pub condition_id: usize,
    pub attempted: u64,
    pub valid: u64,
    pub target_valid: u64,
    /// False when the attempt cap stopped the top-up first.
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub study: String,
    pub base_seed: u64,
    pub n_records: usize,
    pub counters: Counters,
    pub top_up: Vec<TopUpOutcome>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: RecordSet,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionResult {
    pub records: Vec<OutcomeRecord>,
    pub counters: Counters,
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".into()
    }
}

fn guarded<T>(f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(Failure::new("panic", panic_message(p))))
}

enum Attempt {
    Done(Result<MethodOutput, Failure>),
    TimedOut,
}

/// Runs the method inline, or on a worker thread when a timeout applies. A
/// timed-out worker is told to cancel and then abandoned.
fn invoke<D: Send + Sync + 'static>(f: &MethodFn<D>, data: &Arc<D>, timeout: Option<Duration>) -> Result<Attempt, RunError> {
    let Some(t) = timeout else {
        return Ok(Attempt::Done(guarded(|| f(data, &Cancel::default()))));
    };
    let (tx, rx) = mpsc::channel();
    let cancel = Cancel::default();
    let (f2, d2, c2) = (f.clone(), data.clone(), cancel.clone());
    thread::Builder::new()
        .name("simmiss-method".into())
        .spawn(move || {
            let _ = tx.send(guarded(|| f2(&d2, &c2)));
        })
        .map_err(|e| RunError::Harness(format!("cannot start method worker: {e}")))?;
    match rx.recv_timeout(t) {
        Ok(r) => Ok(Attempt::Done(r)),
        Err(mpsc::RecvTimeoutError::Timeout) => {
            cancel.cancel();
            Ok(Attempt::TimedOut)
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(RunError::Harness("method worker exited without a result".into())),
    }
}

fn check_output(out: &MethodOutput) -> Result<(), Failure> {
    if let Some((k, v)) = out.outputs.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Failure::new("invalid_output", format!("output '{k}' is {v}")));
    }
    if let (Some(lo), Some(hi)) = (out.outputs.get(outputs::CI_LOWER), out.outputs.get(outputs::CI_UPPER)) {
        if lo > hi {
            return Err(Failure::new("invalid_output", format!("ci_lower {lo} exceeds ci_upper {hi}")));
        }
    }
    Ok(())
}

/// One method configuration under the timeout policy, retrying timeouts
/// with a growing limit.
fn run_with_retries<D: Send + Sync + 'static>(
    f: &MethodFn<D>,
    data: &Arc<D>,
    policy: &ExecutionPolicy,
    counters: &mut Counters,
) -> Result<Result<MethodOutput, Failure>, RunError> {
    let mut limit = policy.method_timeout_ms.map(|ms| ms as f64);
    let mut attempt = 0;
    loop {
        counters.invocations += 1;
        let timeout = limit.map(|ms| Duration::from_secs_f64(ms / 1000.0));
        match invoke(f, data, timeout)? {
            Attempt::Done(r) => return Ok(r.and_then(|o| check_output(&o).map(|_| o))),
            Attempt::TimedOut if attempt < policy.timeout_retry.max_retries => {
                attempt += 1;
                counters.retries += 1;
                limit = limit.map(|ms| ms * policy.timeout_retry.multiplier);
            }
            Attempt::TimedOut => {
                return Ok(Err(Failure::new(
                    "timeout",
                    format!("no result within {:.0} ms after {} attempt(s)", limit.unwrap_or(0.0), attempt + 1),
                )))
            }
        }
    }
}

/// Generates the data set (regenerating on failure), runs every method with
/// timeouts, retries and fallbacks, and evaluates the metrics. Failures of
/// the study's procedures are captured in the records; only harness faults
/// are returned as errors.
pub fn execute_repetition<D: Send + Sync + 'static>(
    study: &PluggableStudy<D>,
    design: &StudyDesign,
    condition_id: usize,
    repetition: u64,
    policy: &ExecutionPolicy,
) -> Result<RepetitionResult, RunError> {
    let truth = design.truth(condition_id).ok_or(RunError::MissingTruth(condition_id))?;
    let seed = derive_seed(policy.base_seed, condition_id, repetition);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counters = Counters::default();

    let mut data = None;
    let mut last_failure = None;
    let mut attempts = 0;
    while attempts < policy.dgm_regeneration_cap {
        attempts += 1;
        let ctx = GenContext {
            design,
            condition_id,
            repetition,
            attempt: attempts,
        };
        match guarded(|| (study.generator)(&ctx, &mut rng)) {
            Ok(d) => {
                data = Some(Arc::new(d));
                break;
            }
            Err(f) => last_failure = Some(f),
        }
    }
    let base = |method: &str| {
        let mut r = OutcomeRecord::new(condition_id, repetition, method);
        r.seed = Some(seed);
        r.dgm_attempts = Some(attempts);
        r
    };
    let Some(data) = data else {
        let last = last_failure.expect("cap is positive");
        let failure = Failure::new(
            last.class,
            format!("no valid data set after {attempts} attempt(s); last: {}", last.message),
        );
        let records = study
            .methods
            .iter()
            .map(|(name, _)| base(name).with_status(MissingnessStatus::DgmMissing(failure.clone())))
            .collect();
        return Ok(RepetitionResult { records, counters });
    };

    let mut records = Vec::with_capacity(study.methods.len());
    for (name, f) in &study.methods {
        let started = Instant::now();
        let mut rec = base(name);
        let mut result = run_with_retries(f, &data, policy, &mut counters)?;
        if result.is_err() {
            for alt in policy.fallback_chain.get(name).into_iter().flatten() {
                let g = study.find(alt).ok_or_else(|| RunError::InvalidStudy(format!("unknown fallback '{alt}'")))?;
                counters.fallback_invocations += 1;
                counters.invocations -= 1;
                let r = run_with_retries(g, &data, policy, &mut counters)?;
                counters.invocations += 1;
                if r.is_ok() {
                    rec.replaced_by = Some(alt.clone());
                    result = r;
                    break;
                }
            }
        }
        match result {
            Err(failure) => rec.status = MissingnessStatus::MethodMissing(failure),
            Ok(out) => {
                rec.outputs = out.outputs;
                rec.warning = out.warning;
                let mut perf: Option<MissingnessStatus> = None;
                let mut values = BTreeMap::new();
                for (metric, m) in &study.metrics {
                    match guarded(|| m(&rec.outputs, truth)) {
                        Ok(v) if v.is_finite() => {
                            values.insert(metric.clone(), v);
                        }
                        r => {
                            let failure = r
                                .err()
                                .unwrap_or_else(|| Failure::new("non_finite_metric", format!("{metric} is not finite")));
                            perf.get_or_insert(MissingnessStatus::PerformanceMissing {
                                metric: metric.clone(),
                                failure,
                            });
                        }
                    }
                }
                rec.outputs.extend(values);
                if let Some(s) = perf {
                    rec.status = s;
                }
            }
        }
        rec.runtime_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
        records.push(rec);
    }
    Ok(RepetitionResult { records, counters })
}

fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

fn check_study<D>(study: &PluggableStudy<D>, design: &StudyDesign, policy: &ExecutionPolicy) -> Result<(), RunError> {
    policy.validate()?;
    if study.methods.is_empty() {
        return Err(RunError::InvalidStudy("no methods registered".into()));
    }
    let mut names: Vec<&str> = study.methods.iter().chain(&study.alternatives).map(|(n, _)| n.as_str()).collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(RunError::InvalidStudy(format!("method name '{}' registered twice", w[0])));
    }
    for (m, chain) in &policy.fallback_chain {
        for n in std::iter::once(m).chain(chain) {
            if study.find(n).is_none() {
                return Err(RunError::InvalidPolicy(format!("fallback chain names unknown method '{n}'")));
            }
        }
    }
    if let Some(c) = (0..design.len()).find(|c| design.truth(*c).is_none()) {
        return Err(RunError::MissingTruth(c));
    }
    Ok(())
}

/// Valid repetitions of one condition under the top-up predicate.
fn valid_count(records: &[OutcomeRecord], methods: &[&str], validity: Validity) -> u64 {
    let mut by_rep: BTreeMap<u64, Vec<&OutcomeRecord>> = BTreeMap::new();
    for r in records {
        by_rep.entry(r.repetition).or_default().push(r);
    }
    match validity {
        Validity::AllMethodsValid => by_rep.values().filter(|rs| rs.iter().all(|r| r.is_valid())).count() as u64,
        Validity::PerMethodValid => methods
            .iter()
            .map(|m| records.iter().filter(|r| r.method == *m && r.is_valid()).count() as u64)
            .min()
            .unwrap_or(0),
    }
}

/// Runs every (condition, repetition) cell, then tops up conditions that
/// lack valid repetitions. The worker count comes from `SIMMISS_WORKERS`
/// (all cores when unset) and never changes the output.
pub fn run_study<D: Send + Sync + 'static>(
    study: &PluggableStudy<D>,
    design: &StudyDesign,
    policy: &ExecutionPolicy,
) -> Result<RunOutput, RunError> {
    run_study_with_workers(study, design, policy, workers())
}

/// As [`run_study`] with an explicit worker count; 0 means all cores.
pub fn run_study_with_workers<D: Send + Sync + 'static>(
    study: &PluggableStudy<D>,
    design: &StudyDesign,
    policy: &ExecutionPolicy,
    workers: usize,
) -> Result<RunOutput, RunError> {
    check_study(study, design, policy)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Harness(format!("cannot build worker pool: {e}")))?;
    let run_batch = |tasks: &[(usize, u64)]| -> Result<Vec<RepetitionResult>, RunError> {
        pool.install(|| {
            tasks
                .par_iter()
                .map(|&(c, r)| execute_repetition(study, design, c, r, policy))
                .collect()
        })
    };

    let n_cond = design.len();
    let mut per_condition: Vec<Vec<OutcomeRecord>> = vec![Vec::new(); n_cond];
    let mut counters = Counters::default();
    let mut absorb = |results: Vec<RepetitionResult>, per_condition: &mut Vec<Vec<OutcomeRecord>>| {
        for r in results {
            counters.add(&r.counters);
            for rec in r.records {
                per_condition[rec.condition_id].push(rec);
            }
        }
    };

    let initial: Vec<(usize, u64)> = (0..n_cond)
        .flat_map(|c| (1..=policy.repetitions).map(move |r| (c, r)))
        .collect();
    absorb(run_batch(&initial)?, &mut per_condition);

    let mut outcomes = Vec::new();
    if let Some(top) = policy.top_up.filter(|t| t.enabled) {
        let methods = study.method_names();
        let mut attempted = vec![policy.repetitions; n_cond];
        loop {
            let mut tasks = Vec::new();
            for c in 0..n_cond {
                let valid = valid_count(&per_condition[c], &methods, top.validity);
                let deficit = top.target_valid.saturating_sub(valid);
                let room = top.attempt_cap - attempted[c];
                let n = deficit.min(room);
                tasks.extend((attempted[c] + 1..=attempted[c] + n).map(|r| (c, r)));
                attempted[c] += n;
            }
            if tasks.is_empty() {
                break;
            }
            absorb(run_batch(&tasks)?, &mut per_condition);
        }
        for c in 0..n_cond {
            let valid = valid_count(&per_condition[c], &methods, top.validity);
            outcomes.push(TopUpOutcome {
                condition_id: c,
                attempted: attempted[c],
                valid,
                target_valid: top.target_valid,
                reached: valid >= top.target_valid,
            });
        }
    }

    let records: Vec<OutcomeRecord> = per_condition.into_iter().flatten().collect();
    let n_records = records.len();
    let set = RecordSet::new(design.clone(), records, study.metric_names(), Vec::new())?;
    Ok(RunOutput {
        records: set,
        summary: RunSummary {
            study: study.name.clone(),
            base_seed: policy.base_seed,
            n_records,
            counters,
            top_up: outcomes,
        },
    })
}
