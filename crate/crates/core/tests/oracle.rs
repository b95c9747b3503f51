//! The engine against a direct evaluation of the definitions: inclusion sets
//! are enumerated from the raw records and the measures computed by plain
//! loops.

mod common;

use common::arb_record_set;
use proptest::prelude::*;
use simmiss_core::metrics::{estimate_measure, EstimateValue, Measure, MeasureOptions};
use simmiss_core::strategy::{apply_case_wise, apply_list_wise, apply_replacement};
use simmiss_core::{OutcomeRecord, RecordSet};

enum Rule<'a> {
    Case,
    List,
    Replace(&'a [String]),
}

fn find<'a>(set: &'a RecordSet, c: usize, rep: u64, m: &str) -> Option<&'a OutcomeRecord> {
    set.records().iter().find(|r| r.condition_id == c && r.repetition == rep && r.method == m)
}

/// Effective outputs per included repetition, or None if the chain is exhausted.
fn reference_inclusion(set: &RecordSet, c: usize, m: &str, rule: &Rule) -> Option<Vec<OutcomeRecord>> {
    let mut reps: Vec<u64> = set.records().iter().filter(|r| r.condition_id == c).map(|r| r.repetition).collect();
    reps.sort();
    reps.dedup();
    let mut out = Vec::new();
    for rep in reps {
        let own = find(set, c, rep, m).unwrap();
        match rule {
            Rule::Case => {
                if own.is_valid() {
                    out.push(own.clone());
                }
            }
            Rule::List => {
                let all_valid = set.methods().iter().all(|x| find(set, c, rep, x).unwrap().is_valid());
                if all_valid {
                    out.push(own.clone());
                }
            }
            Rule::Replace(chain) => {
                if own.is_valid() {
                    out.push(own.clone());
                } else {
                    let sub = chain
                        .iter()
                        .filter(|x| x.as_str() != m)
                        .map(|x| find(set, c, rep, x).unwrap())
                        .find(|r| r.is_valid())?;
                    out.push(sub.clone());
                }
            }
        }
    }
    Some(out)
}

/// (value, mcse) by direct formula, None below the minimum n.
fn reference_measure(recs: &[OutcomeRecord], m: Measure, truth: f64, alpha: f64) -> Option<(f64, f64)> {
    let n = recs.len() as f64;
    let get = |r: &OutcomeRecord, k: &str| r.outputs[k];
    match m {
        Measure::RejectionRate | Measure::Coverage => {
            if recs.is_empty() {
                return None;
            }
            let hits = recs
                .iter()
                .filter(|r| {
                    if m == Measure::RejectionRate {
                        get(r, "p_value") < alpha
                    } else {
                        get(r, "ci_lower") <= truth && truth <= get(r, "ci_upper")
                    }
                })
                .count() as f64;
            let p = hits / n;
            Some((p, (p * (1.0 - p) / n).sqrt()))
        }
        Measure::Bias => {
            if recs.len() < 2 {
                return None;
            }
            let mut sum = 0.0;
            for r in recs {
                sum += get(r, "estimate");
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for r in recs {
                ss += (get(r, "estimate") - mean).powi(2);
            }
            Some((mean - truth, (ss / (n - 1.0)).sqrt() / n.sqrt()))
        }
        _ => unreachable!(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn check(set: &RecordSet, rule: Rule) -> Result<(), TestCaseError> {
    let analysis = match &rule {
        Rule::Case => apply_case_wise(set),
        Rule::List => apply_list_wise(set),
        Rule::Replace(chain) => match apply_replacement(set, chain) {
            Ok(a) => a,
            Err(_) => {
                let exhausted = set.condition_ids().iter().any(|&c| {
                    set.methods().iter().any(|m| reference_inclusion(set, c, m, &rule).is_none())
                });
                prop_assert!(exhausted, "engine reported exhaustion the reference does not see");
                return Ok(());
            }
        },
    };
    for m in [Measure::RejectionRate, Measure::Bias, Measure::Coverage] {
        for e in estimate_measure(&analysis, set.design(), m, &MeasureOptions::default()).unwrap() {
            let truth = set.design().truth(e.condition_id).unwrap();
            let incl = reference_inclusion(set, e.condition_id, &e.method, &rule).unwrap();
            prop_assert_eq!(e.n_used, incl.len());
            match (reference_measure(&incl, m, truth.true_value, truth.nominal_alpha), e.value) {
                (None, EstimateValue::NotAnalyzed(_)) => {}
                (Some((v, se)), EstimateValue::Value(x)) => {
                    prop_assert!(close(v, x), "{m} value {x} vs reference {v}");
                    prop_assert!(close(se, e.mcse.unwrap()), "{m} mcse {:?} vs reference {se}", e.mcse);
                }
                (r, x) => prop_assert!(false, "{m}: reference {r:?} vs engine {x:?}"),
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn engine_matches_brute_force(set in arb_record_set(3, 6, 2, true)) {
        check(&set, Rule::Case)?;
        check(&set, Rule::List)?;
        let chain: Vec<String> = set.methods().iter().rev().cloned().collect();
        check(&set, Rule::Replace(&chain))?;
    }
}
