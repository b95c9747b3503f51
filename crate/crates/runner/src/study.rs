//! A study as three pluggable stages: data generation, methods, metrics.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use simmiss_core::{Failure, StudyDesign, TruthSpec};

/// Where a data set is generated.
#[derive(Debug, Clone, Copy)]
pub struct GenContext<'a> {
    pub design: &'a StudyDesign,
    pub condition_id: usize,
    pub repetition: u64,
    /// 1-based attempt number within the repetition.
    pub attempt: u32,
}

/// Cooperative cancellation flag set when an invocation times out. Long
/// running methods should poll it and return early.
#[derive(Debug, Clone, Default)]
pub struct Cancel(Arc<AtomicBool>);

impl Cancel {
    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }

    pub(crate) fn cancel(&self) {
        self.0.store(true, Ordering::Relaxed);
    }
}

/// Named outputs of one method invocation, plus a non-fatal warning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodOutput {
    pub outputs: BTreeMap<String, f64>,
    pub warning: Option<Failure>,
}

impl MethodOutput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.outputs.insert(name.to_string(), value);
        self
    }

    pub fn warn(mut self, warning: Failure) -> Self {
        self.warning = Some(warning);
        self
    }
}

pub type Generator<D> = Arc<dyn Fn(&GenContext, &mut ChaCha8Rng) -> Result<D, Failure> + Send + Sync>;
pub type MethodFn<D> = Arc<dyn Fn(&D, &Cancel) -> Result<MethodOutput, Failure> + Send + Sync>;
pub type MetricFn = Arc<dyn Fn(&BTreeMap<String, f64>, &TruthSpec) -> Result<f64, Failure> + Send + Sync>;

pub struct PluggableStudy<D> {
    pub name: String,
    pub(crate) generator: Generator<D>,
    /// Methods that produce records, in registration order.
    pub(crate) methods: Vec<(String, MethodFn<D>)>,
    /// Configurations reachable only through fallback chains.
    pub(crate) alternatives: Vec<(String, MethodFn<D>)>,
    pub(crate) metrics: Vec<(String, MetricFn)>,
}

impl<D> PluggableStudy<D> {
    pub fn new<G>(name: impl Into<String>, generator: G) -> Self
    where
        G: Fn(&GenContext, &mut ChaCha8Rng) -> Result<D, Failure> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            generator: Arc::new(generator),
            methods: Vec::new(),
            alternatives: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn method<F>(mut self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&D, &Cancel) -> Result<MethodOutput, Failure> + Send + Sync + 'static,
    {
        self.methods.push((name.into(), Arc::new(f)));
        self
    }

    pub fn alternative<F>(mut self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&D, &Cancel) -> Result<MethodOutput, Failure> + Send + Sync + 'static,
    {
        self.alternatives.push((name.into(), Arc::new(f)));
        self
    }

    pub fn metric<F>(mut self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&BTreeMap<String, f64>, &TruthSpec) -> Result<f64, Failure> + Send + Sync + 'static,
    {
        self.metrics.push((name.into(), Arc::new(f)));
        self
    }

    pub fn method_names(&self) -> Vec<&str> {
        self.methods.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(|(n, _)| n.clone()).collect()
    }

    pub(crate) fn find(&self, name: &str) -> Option<&MethodFn<D>> {
        self.methods
            .iter()
            .chain(&self.alternatives)
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
    }
}
