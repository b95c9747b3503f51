use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeoutRetry {
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_multiplier() -> f64 {
    2.0
}

fn default_max_retries() -> u32 {
    2
}

impl Default for TimeoutRetry {
    fn default() -> Self {
        Self {
            multiplier: default_multiplier(),
            max_retries: default_max_retries(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    /// A repetition counts when every method is valid in it.
    AllMethodsValid,
    /// Each method counts its own valid repetitions; all must reach the target.
    PerMethodValid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopUp {
    #[serde(default)]
    pub enabled: bool,
    pub target_valid: u64,
    /// Maximum total repetitions per condition, initial pass included.
    pub attempt_cap: u64,
    #[serde(default = "default_validity")]
    pub validity: Validity,
}

fn default_validity() -> Validity {
    Validity::AllMethodsValid
}

fn default_dgm_cap() -> u32 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionPolicy {
    pub repetitions: u64,
    pub base_seed: u64,
    #[serde(default = "default_dgm_cap")]
    pub dgm_regeneration_cap: u32,
    /// Wall-clock limit per method invocation; unlimited when absent.
    #[serde(default)]
    pub method_timeout_ms: Option<u64>,
    #[serde(default)]
    pub timeout_retry: TimeoutRetry,
    /// Method -> alternative method configurations tried in order after a
    /// persistent failure.
    #[serde(default)]
    pub fallback_chain: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub top_up: Option<TopUp>,
}

impl ExecutionPolicy {
    pub fn new(repetitions: u64, base_seed: u64) -> Self {
        Self {
            repetitions,
            base_seed,
            dgm_regeneration_cap: default_dgm_cap(),
            method_timeout_ms: None,
            timeout_retry: TimeoutRetry::default(),
            fallback_chain: BTreeMap::new(),
            top_up: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::InvalidPolicy(m));
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if self.dgm_regeneration_cap == 0 {
            return bad("dgm_regeneration_cap must be positive".into());
        }
        if self.method_timeout_ms == Some(0) {
            return bad("method_timeout_ms must be positive".into());
        }
        if !(self.timeout_retry.multiplier > 1.0 && self.timeout_retry.multiplier.is_finite()) {
            return bad(format!("timeout multiplier {} must exceed 1", self.timeout_retry.multiplier));
        }
        if let Some(t) = &self.top_up {
            if t.enabled {
                if t.target_valid == 0 {
                    return bad("top_up.target_valid must be positive".into());
                }
                if t.attempt_cap < self.repetitions {
                    return bad(format!(
                        "top_up.attempt_cap {} is below the initial {} repetitions",
                        t.attempt_cap, self.repetitions
                    ));
                }
            }
        }
        if let Some(cycle) = self.fallback_cycle() {
            return bad(format!("fallback chain is cyclic: {}", cycle.join(" -> ")));
        }
        Ok(())
    }

    /// A method reachable from itself through the fallback chains, if any.
    fn fallback_cycle(&self) -> Option<Vec<String>> {
        fn visit<'a>(
            node: &'a str,
            graph: &'a BTreeMap<String, Vec<String>>,
            path: &mut Vec<&'a str>,
            done: &mut BTreeSet<&'a str>,
        ) -> Option<Vec<String>> {
            if let Some(i) = path.iter().position(|p| *p == node) {
                let mut c: Vec<String> = path[i..].iter().map(|s| s.to_string()).collect();
                c.push(node.to_string());
                return Some(c);
            }
            if !done.insert(node) {
                return None;
            }
            path.push(node);
            for next in graph.get(node).into_iter().flatten() {
                if let Some(c) = visit(next, graph, path, done) {
                    return Some(c);
                }
            }
            path.pop();
            None
        }
        let mut done = BTreeSet::new();
        for start in self.fallback_chain.keys() {
            if let Some(c) = visit(start, &self.fallback_chain, &mut Vec::new(), &mut done) {
                return Some(c);
            }
        }
        None
    }
}
