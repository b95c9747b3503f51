//! Binomial logistic regression by iteratively reweighted least squares
//! (Newton's method with step halving), on grouped counts.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LogisticError {
    #[error("no observations to fit")]
    Empty,
    #[error("design matrix is rank deficient: {} collinear with earlier terms", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("information matrix is not positive definite")]
    Singular,
    #[error("invalid data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iterations: usize,
    pub score_tolerance: f64,
    pub deviance_tolerance: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            score_tolerance: 1e-8,
            deviance_tolerance: 1e-10,
        }
    }
}

/// Grouped binomial data: row `i` of `x` observed `trials[i]` times with
/// `successes[i]` events.
#[derive(Debug, Clone, PartialEq)]
pub struct Binomial {
    pub x: DMatrix<f64>,
    pub successes: Vec<f64>,
    pub trials: Vec<f64>,
    /// Column names, used in diagnostics.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Ridge penalty applied to every column but the first.
    pub penalty: f64,
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

impl Binomial {
    pub fn new(x: DMatrix<f64>, successes: Vec<f64>, trials: Vec<f64>, names: Vec<String>) -> Result<Self, LogisticError> {
        if x.nrows() != successes.len() || x.nrows() != trials.len() || x.ncols() != names.len() {
            return Err(LogisticError::Data("dimension mismatch".into()));
        }
        for (&y, &n) in successes.iter().zip(&trials) {
            if !(n >= 0.0 && y >= 0.0 && y <= n) {
                return Err(LogisticError::Data(format!("{y} events out of {n} trials")));
            }
        }
        if trials.iter().sum::<f64>() <= 0.0 {
            return Err(LogisticError::Empty);
        }
        Ok(Self {
            x,
            successes,
            trials,
            names,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    /// Log-likelihood (up to the binomial coefficients).
    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.x * beta;
        eta.iter()
            .zip(self.successes.iter().zip(&self.trials))
            .map(|(&e, (&y, &n))| y * e - n * log1pexp(e))
            .sum()
    }

    /// Gradient of the log-likelihood.
    pub fn score(&self, beta: &DVector<f64>) -> DVector<f64> {
        let eta = &self.x * beta;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter()
                .zip(self.successes.iter().zip(&self.trials))
                .map(|(&e, (&y, &n))| y - n * sigmoid(e)),
        );
        self.x.transpose() * resid
    }

    /// Fisher information X'WX.
    pub fn information(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = &self.x * beta;
        let mut xw = self.x.clone();
        for (i, &e) in eta.iter().enumerate() {
            let p = sigmoid(e);
            let w = self.trials[i] * p * (1.0 - p);
            xw.row_mut(i).scale_mut(w);
        }
        self.x.transpose() * xw
    }

    /// Residual deviance against the saturated model.
    pub fn deviance(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.x * beta;
        let xlogy = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
        2.0 * eta
            .iter()
            .zip(self.successes.iter().zip(&self.trials))
            .map(|(&e, (&y, &n))| {
                let mu = n * sigmoid(e);
                xlogy(y, mu) + xlogy(n - y, n - mu)
            })
            .sum::<f64>()
    }

    /// Names of columns lying in the span of earlier columns (over rows with
    /// at least one trial), by modified Gram-Schmidt.
    pub fn collinear_columns(&self) -> Vec<String> {
        let rows: Vec<usize> = (0..self.x.nrows()).filter(|&i| self.trials[i] > 0.0).collect();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut bad = Vec::new();
        for j in 0..self.x.ncols() {
            let mut v = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.x[(i, j)]));
            let norm0 = v.norm();
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= 1e-9 * norm0 {
                bad.push(self.names[j].clone());
            } else {
                basis.push(v / norm);
            }
        }
        bad
    }

    fn penalized_ll(&self, beta: &DVector<f64>, penalty: f64) -> f64 {
        let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        self.log_likelihood(beta) - 0.5 * penalty * pen
    }

    /// Maximizes the (optionally ridge-penalized) log-likelihood.
    pub fn fit(&self, penalty: f64, opts: &LogisticOptions) -> Result<LogisticFit, LogisticError> {
        let bad = self.collinear_columns();
        if !bad.is_empty() && penalty == 0.0 {
            return Err(LogisticError::RankDeficient(bad));
        }
        let p = self.n_coef();
        let mut beta = DVector::zeros(p);
        // Start the intercept at the smoothed overall logit.
        let (ys, ns) = (self.successes.iter().sum::<f64>(), self.trials.iter().sum::<f64>());
        let rate = (ys + 0.5) / (ns + 1.0);
        if p > 0 && self.x.column(0).iter().all(|&v| v == 1.0) {
            beta[0] = (rate / (1.0 - rate)).ln();
        }
        let penalty_diag = DVector::from_iterator(p, (0..p).map(|j| if j == 0 { 0.0 } else { penalty }));

        let mut ll = self.penalized_ll(&beta, penalty);
        let mut dev = self.deviance(&beta);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iterations {
            let grad = self.score(&beta) - penalty_diag.component_mul(&beta);
            if grad.amax() < opts.score_tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let mut info = self.information(&beta);
            for j in 0..p {
                info[(j, j)] += penalty_diag[j];
            }
            let step = Cholesky::new(info).ok_or(LogisticError::Singular)?.solve(&grad);
            let mut t = 1.0;
            let mut next = &beta + &step;
            let mut next_ll = self.penalized_ll(&next, penalty);
            let mut halvings = 0;
            while (next_ll.is_nan() || next_ll < ll) && halvings < 30 {
                t *= 0.5;
                next = &beta + &step * t;
                next_ll = self.penalized_ll(&next, penalty);
                halvings += 1;
            }
            if next_ll.is_nan() || next_ll < ll {
                break;
            }
            beta = next;
            ll = next_ll;
            let new_dev = self.deviance(&beta);
            let rel = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
            dev = new_dev;
            if rel < opts.deviance_tolerance {
                converged = true;
                break;
            }
        }
        let mut info = self.information(&beta);
        for j in 0..p {
            info[(j, j)] += penalty_diag[j];
        }
        let std_errors = match Cholesky::new(info) {
            Some(c) => c.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
            None => vec![f64::NAN; p],
        };
        Ok(LogisticFit {
            coefficients: beta.iter().copied().collect(),
            std_errors,
            converged,
            iterations,
            deviance: dev,
            penalty,
        })
    }

    /// Fitted probability per row.
    pub fn fitted(&self, coefficients: &[f64]) -> Vec<f64> {
        let beta = DVector::from_column_slice(coefficients);
        (&self.x * beta).iter().map(|&e| sigmoid(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn intercept_only_reaches_logit_of_rate() {
        let b = Binomial::new(DMatrix::from_element(1, 1, 1.0), vec![3.0], vec![10.0], vec!["(Intercept)".into()]).unwrap();
        let f = b.fit(0.0, &LogisticOptions::default()).unwrap();
        assert!(f.converged);
        assert!((f.coefficients[0] - logit(0.3)).abs() < 1e-9);
        assert!((f.coefficients[0] + 0.8473).abs() < 1e-4);
    }

    #[test]
    fn binary_factor_slope() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let b = Binomial::new(x, vec![20.0, 40.0], vec![100.0, 100.0], vec!["(Intercept)".into(), "f".into()]).unwrap();
        let f = b.fit(0.0, &LogisticOptions::default()).unwrap();
        assert!((f.coefficients[1] - (logit(0.4) - logit(0.2))).abs() < 1e-9);
        assert!((f.coefficients[1] - 0.9808).abs() < 1e-4);
        assert!(b.score(&DVector::from_vec(f.coefficients.clone())).amax() < 1e-6);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let b = Binomial::new(x, vec![1.0, 1.0], vec![4.0, 4.0], vec!["(Intercept)".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(
            b.fit(0.0, &LogisticOptions::default()).unwrap_err(),
            LogisticError::RankDeficient(vec!["b".into()])
        );
    }

    #[test]
    fn separated_data_drifts_and_penalty_tames_it() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let b = Binomial::new(x, vec![5.0, 0.0], vec![10.0, 10.0], vec!["(Intercept)".into(), "f".into()]).unwrap();
        let f = b.fit(0.0, &LogisticOptions::default()).unwrap();
        assert!(f.coefficients[1] < -10.0);
        let g = b.fit(1e-4, &LogisticOptions::default()).unwrap();
        assert!(g.coefficients[1].is_finite());
        assert!(g.coefficients[1] > f.coefficients[1]);
    }

    #[test]
    fn empty_data_rejected() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(
            Binomial::new(x, vec![0.0], vec![0.0], vec!["(Intercept)".into()]).unwrap_err(),
            LogisticError::Empty
        );
    }
}
