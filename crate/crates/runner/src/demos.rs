//! Shipped demo studies, one per missingness type.
//!
//! * `normal_mean`: sample mean and median of N(mu, 1) data. Nothing fails.
//! * `logistic_separation`: logistic regression on a rare outcome with five
//!   binary covariates. Complete separation makes the plain fit fail.
//! * `rejection_dgm`: correlation data sets are redrawn until the sample
//!   correlation is non-negative, so the generator fails half the time.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use simmiss_core::domain::outputs;
use simmiss_core::logistic::{Binomial, LogisticError, LogisticOptions};
use simmiss_core::stats::{mean, median, sample_sd};
use simmiss_core::{Factor, Failure, StudyDesign, TruthSpec};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::execute::{run_study, RunOutput};
use crate::policy::ExecutionPolicy;
use crate::study::{GenContext, MethodOutput, PluggableStudy};
use crate::RunError;

const ALPHA: f64 = 0.05;
/// True slope of every covariate in the logistic demo.
pub const LOGISTIC_SLOPE: f64 = 0.5;
pub const LOGISTIC_COVARIATES: usize = 5;
/// Coefficients beyond this magnitude are taken as a sign of separation.
pub const SEPARATION_BOUND: f64 = 10.0;
pub const SEPARATION_CLASS: &str = "separation/non-convergence";
pub const RIDGE_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    NormalMean,
    LogisticSeparation,
    RejectionDgm,
}

impl FromStr for Demo {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "normal_mean" => Ok(Demo::NormalMean),
            "logistic_separation" => Ok(Demo::LogisticSeparation),
            "rejection_dgm" => Ok(Demo::RejectionDgm),
            _ => Err(RunError::UnknownDemo(s.to_string())),
        }
    }
}

impl Demo {
    pub const ALL: [Demo; 3] = [Demo::NormalMean, Demo::LogisticSeparation, Demo::RejectionDgm];

    pub fn name(&self) -> &'static str {
        match self {
            Demo::NormalMean => "normal_mean",
            Demo::LogisticSeparation => "logistic_separation",
            Demo::RejectionDgm => "rejection_dgm",
        }
    }

    /// Factors the demo reads, with their default levels.
    fn parameters(&self) -> &'static [(&'static str, &'static [f64])] {
        match self {
            Demo::NormalMean => &[("n", &[10.0]), ("mu", &[0.0])],
            Demo::LogisticSeparation => &[("intercept", &[-4.0, -2.0]), ("n", &[50.0])],
            Demo::RejectionDgm => &[("n", &[10.0, 30.0]), ("rho", &[0.0])],
        }
    }

    pub fn default_design(&self) -> Result<StudyDesign, RunError> {
        let factors = self
            .parameters()
            .iter()
            .filter(|(_, levels)| levels.len() > 1)
            .map(|(name, levels)| Factor::numeric(*name, levels))
            .collect::<Vec<_>>();
        let factors = if factors.is_empty() {
            let (name, levels) = self.parameters()[0];
            vec![Factor::numeric(name, levels)]
        } else {
            factors
        };
        self.design(factors)
    }

    /// Full factorial over `factors` with the demo's truths attached. Every
    /// factor must be one the demo reads, with numeric levels.
    pub fn design(&self, factors: Vec<Factor>) -> Result<StudyDesign, RunError> {
        for f in &factors {
            if !self.parameters().iter().any(|(n, _)| *n == f.name) {
                let known: Vec<&str> = self.parameters().iter().map(|(n, _)| *n).collect();
                return Err(RunError::Config(format!(
                    "demo {} has no factor '{}' (known: {})",
                    self.name(),
                    f.name,
                    known.join(", ")
                )));
            }
            if let Some(l) = f.levels.iter().find(|l| l.as_number().is_none()) {
                return Err(RunError::Config(format!("factor '{}' level '{l}' is not numeric", f.name)));
            }
            if f.name == "n" && f.levels.iter().any(|l| l.as_number().is_some_and(|v| v < 4.0 || v.fract() != 0.0)) {
                return Err(RunError::Config("sample sizes must be integers of at least 4".into()));
            }
            if f.name == "rho" && f.levels.iter().any(|l| l.as_number().is_some_and(|v| v.abs() >= 1.0)) {
                return Err(RunError::Config("rho must lie in (-1, 1)".into()));
            }
        }
        let demo = *self;
        let design = StudyDesign::full_factorial(factors)?;
        let truth = move |d: &StudyDesign, c: &simmiss_core::Condition| {
            let value = match demo {
                Demo::NormalMean => param(d, c.id, "mu", 0.0),
                Demo::LogisticSeparation => LOGISTIC_SLOPE,
                Demo::RejectionDgm => param(d, c.id, "rho", 0.0),
            };
            TruthSpec::new(value, ALPHA, 1.0 - ALPHA).expect("finite truth")
        };
        Ok(design.with_truths(truth)?)
    }

    pub fn run(&self, design: &StudyDesign, policy: &ExecutionPolicy) -> Result<RunOutput, RunError> {
        match self {
            Demo::NormalMean => run_study(&normal_mean(), design, policy),
            Demo::LogisticSeparation => run_study(&logistic_separation(), design, policy),
            Demo::RejectionDgm => run_study(&rejection_dgm(), design, policy),
        }
    }
}

fn param(design: &StudyDesign, condition_id: usize, name: &str, default: f64) -> f64 {
    design
        .level_by_name(condition_id, name)
        .and_then(|l| l.as_number())
        .unwrap_or(default)
}

fn ctx_param(ctx: &GenContext, name: &str, default: f64) -> f64 {
    param(ctx.design, ctx.condition_id, name, default)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

fn z_crit() -> f64 {
    std_normal().inverse_cdf(1.0 - ALPHA / 2.0)
}

fn two_sided_p(z: f64) -> f64 {
    2.0 * std_normal().cdf(-z.abs())
}

fn output(outs: &std::collections::BTreeMap<String, f64>, name: &str) -> Result<f64, Failure> {
    outs.get(name)
        .copied()
        .ok_or_else(|| Failure::new("missing_output", format!("output '{name}' absent")))
}

fn squared_error(outs: &std::collections::BTreeMap<String, f64>, truth: &TruthSpec) -> Result<f64, Failure> {
    Ok((output(outs, outputs::ESTIMATE)? - truth.true_value).powi(2))
}

fn interval(estimate: f64, se: f64, crit: f64, p: f64) -> MethodOutput {
    MethodOutput::new()
        .with(outputs::ESTIMATE, estimate)
        .with(outputs::STD_ERROR, se)
        .with(outputs::CI_LOWER, estimate - crit * se)
        .with(outputs::CI_UPPER, estimate + crit * se)
        .with(outputs::P_VALUE, p)
}

pub fn normal_mean() -> PluggableStudy<Vec<f64>> {
    PluggableStudy::new("normal_mean", |ctx: &GenContext, rng: &mut ChaCha8Rng| {
        let n = ctx_param(ctx, "n", 10.0) as usize;
        let mu = ctx_param(ctx, "mu", 0.0);
        Ok((0..n).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).collect())
    })
    .method("mean", |xs: &Vec<f64>, _| {
        let n = xs.len() as f64;
        let m = mean(xs);
        let se = sample_sd(xs) / n.sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Failure::new("bad_input", e.to_string()))?;
        let p = 2.0 * t.cdf(-(m / se).abs());
        Ok(interval(m, se, t.inverse_cdf(1.0 - ALPHA / 2.0), p))
    })
    .method("median", |xs: &Vec<f64>, _| {
        // Large-sample SE of the median under normality.
        let se = (PI / 2.0).sqrt() * sample_sd(xs) / (xs.len() as f64).sqrt();
        let m = median(xs);
        Ok(interval(m, se, z_crit(), two_sided_p(m / se)))
    })
    .metric("squared_error", squared_error)
}

#[derive(Debug, Clone)]
pub struct LogisticData {
    /// Intercept column first.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub holdout_x: Vec<f64>,
    pub holdout_y: f64,
}

fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn draw_row(rng: &mut ChaCha8Rng, intercept: f64) -> (Vec<f64>, f64) {
    let mut row = vec![1.0];
    row.extend((0..LOGISTIC_COVARIATES).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }));
    let eta = intercept + LOGISTIC_SLOPE * row[1..].iter().sum::<f64>();
    let y = if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 };
    (row, y)
}

enum Fit {
    Checked,
    Unchecked,
    Ridge,
}

fn fit_logistic(d: &LogisticData, how: Fit) -> Result<MethodOutput, Failure> {
    let mut names = vec!["(Intercept)".to_string()];
    names.extend((1..=LOGISTIC_COVARIATES).map(|j| format!("x{j}")));
    let model = Binomial::new(d.x.clone(), d.y.clone(), vec![1.0; d.y.len()], names)
        .map_err(|e| Failure::new("bad_input", e.to_string()))?;
    let penalty = if matches!(how, Fit::Ridge) { RIDGE_PENALTY } else { 0.0 };
    let fit = model.fit(penalty, &LogisticOptions::default()).map_err(|e| match e {
        LogisticError::RankDeficient(_) => Failure::new("rank_deficient", e.to_string()),
        _ => Failure::new("numerical", e.to_string()),
    })?;
    let largest = fit.coefficients.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let separated = !fit.converged || largest > SEPARATION_BOUND;
    let (b, se) = (fit.coefficients[1], fit.std_errors[1]);
    let eta: f64 = d.holdout_x.iter().zip(&fit.coefficients).map(|(x, c)| x * c).sum();
    let mut out = interval(b, se, z_crit(), two_sided_p(b / se))
        .with("holdout_p", sigmoid(eta))
        .with("holdout_y", d.holdout_y);
    if separated {
        let msg = format!(
            "converged={} after {} iterations, largest |coefficient| {largest:.3}",
            fit.converged, fit.iterations
        );
        match how {
            Fit::Checked => return Err(Failure::new(SEPARATION_CLASS, msg)),
            Fit::Unchecked => out = out.warn(Failure::new(SEPARATION_CLASS, msg)),
            Fit::Ridge => {}
        }
    }
    Ok(out)
}

pub fn logistic_separation() -> PluggableStudy<LogisticData> {
    PluggableStudy::new("logistic_separation", |ctx: &GenContext, rng: &mut ChaCha8Rng| {
        let n = ctx_param(ctx, "n", 50.0) as usize;
        let intercept = ctx_param(ctx, "intercept", -4.0);
        let mut x = DMatrix::zeros(n, LOGISTIC_COVARIATES + 1);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let (row, yi) = draw_row(rng, intercept);
            for (j, v) in row.into_iter().enumerate() {
                x[(i, j)] = v;
            }
            y.push(yi);
        }
        let (holdout_x, holdout_y) = draw_row(rng, intercept);
        Ok(LogisticData { x, y, holdout_x, holdout_y })
    })
    .method("glm", |d: &LogisticData, _| fit_logistic(d, Fit::Checked))
    .method("glm_unchecked", |d: &LogisticData, _| fit_logistic(d, Fit::Unchecked))
    .method("ridge", |d: &LogisticData, _| fit_logistic(d, Fit::Ridge))
    .metric("squared_error", squared_error)
    // Infinite when the predicted probability of the observed holdout
    // outcome rounds to zero.
    .metric("log_score", |outs, _| {
        let p = output(outs, "holdout_p")?;
        let y = output(outs, "holdout_y")?;
        Ok(-(if y > 0.5 { p.ln() } else { (1.0 - p).ln() }))
    })
}

#[derive(Debug, Clone)]
pub struct Pairs {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks with ties averaged, starting at 1.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Correlation with a Fisher z interval; `var_factor` inflates the z-scale
/// variance (1.06 for Spearman).
fn correlation_output(r: f64, n: usize, var_factor: f64) -> Result<MethodOutput, Failure> {
    if !r.is_finite() || r.abs() >= 1.0 {
        return Err(Failure::new("degenerate_correlation", format!("r = {r}")));
    }
    let se_z = (var_factor / (n as f64 - 3.0)).sqrt();
    let z = r.atanh();
    let c = z_crit();
    Ok(MethodOutput::new()
        .with(outputs::ESTIMATE, r)
        .with(outputs::STD_ERROR, (1.0 - r * r) * se_z)
        .with(outputs::CI_LOWER, (z - c * se_z).tanh())
        .with(outputs::CI_UPPER, (z + c * se_z).tanh())
        .with(outputs::P_VALUE, two_sided_p(z / se_z)))
}

pub fn rejection_dgm() -> PluggableStudy<Pairs> {
    PluggableStudy::new("rejection_dgm", |ctx: &GenContext, rng: &mut ChaCha8Rng| {
        let n = ctx_param(ctx, "n", 10.0) as usize;
        let rho = ctx_param(ctx, "rho", 0.0);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| rho * xi + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = pearson(&x, &y);
        if r < 0.0 {
            return Err(Failure::new("rejected_sample", format!("sample correlation {r:.4} is negative")));
        }
        Ok(Pairs { x, y })
    })
    .method("pearson", |d: &Pairs, _| correlation_output(pearson(&d.x, &d.y), d.x.len(), 1.0))
    .method("spearman", |d: &Pairs, _| {
        correlation_output(pearson(&ranks(&d.x), &ranks(&d.y)), d.x.len(), 1.06)
    })
    .metric("squared_error", squared_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn default_designs_carry_truths() {
        for d in Demo::ALL {
            let design = d.default_design().unwrap();
            assert!(!design.is_empty());
            assert!((0..design.len()).all(|c| design.truth(c).is_some()));
            assert_eq!(d.name().parse::<Demo>().unwrap(), d);
        }
        assert_eq!(Demo::LogisticSeparation.default_design().unwrap().len(), 2);
    }

    #[test]
    fn unknown_factor_rejected() {
        let err = Demo::NormalMean.design(vec![Factor::numeric("k", &[1.0])]).unwrap_err();
        assert!(err.to_string().contains("no factor 'k'"));
    }

    #[test]
    fn fisher_interval_contains_estimate() {
        let o = correlation_output(0.3, 30, 1.0).unwrap();
        assert!(o.outputs[outputs::CI_LOWER] < 0.3 && 0.3 < o.outputs[outputs::CI_UPPER]);
        assert!(correlation_output(1.0, 30, 1.0).is_err());
    }
}
