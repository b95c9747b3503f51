use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// Outlier-resistant location and scale summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustVariant {
    /// Drops `floor(p * n)` values from each tail, then averages.
    TrimmedMean(f64),
    /// Clamps `floor(p * n)` values in each tail to the nearest kept value.
    WinsorizedMean(f64),
    Median,
    /// Median absolute deviation from the median, unscaled.
    Mad,
}

impl fmt::Display for RobustVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RobustVariant::TrimmedMean(p) => write!(f, "trimmed_mean({p})"),
            RobustVariant::WinsorizedMean(p) => write!(f, "winsorized_mean({p})"),
            RobustVariant::Median => f.write_str("median"),
            RobustVariant::Mad => f.write_str("mad"),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RobustError {
    #[error("robust summary of an empty set")]
    Empty,
    #[error("trimming proportion {0} outside [0, 0.5)")]
    Proportion(f64),
    #[error("robust summary input contains NaN")]
    NaN,
}

pub fn robust_variant(values: &[f64], variant: RobustVariant) -> Result<f64, RobustError> {
    if values.is_empty() {
        return Err(RobustError::Empty);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(RobustError::NaN);
    }
    let x = stats::sorted(values);
    let n = x.len();
    let cut = |p: f64| -> Result<usize, RobustError> {
        if !(0.0..0.5).contains(&p) {
            return Err(RobustError::Proportion(p));
        }
        Ok((p * n as f64).floor() as usize)
    };
    Ok(match variant {
        RobustVariant::TrimmedMean(p) => {
            let k = cut(p)?;
            stats::mean(&x[k..n - k])
        }
        RobustVariant::WinsorizedMean(p) => {
            let k = cut(p)?;
            let (lo, hi) = (x[k], x[n - 1 - k]);
            x.iter().map(|v| v.clamp(lo, hi)).sum::<f64>() / n as f64
        }
        RobustVariant::Median => stats::quantile_sorted(&x, 0.5),
        RobustVariant::Mad => {
            let m = stats::quantile_sorted(&x, 0.5);
            let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
            stats::median(&dev)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trimming_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(robust_variant(&x, RobustVariant::TrimmedMean(0.0)).unwrap(), 22.0);
        // floor(0.2 * 5) = 1 value dropped per tail -> mean of {2, 3, 4}
        assert_eq!(robust_variant(&x, RobustVariant::TrimmedMean(0.2)).unwrap(), 3.0);
        // {2, 2, 3, 4, 4}
        assert_eq!(robust_variant(&x, RobustVariant::WinsorizedMean(0.2)).unwrap(), 3.0);
        assert_eq!(robust_variant(&x, RobustVariant::Median).unwrap(), 3.0);
    }

    #[test]
    fn mad_of_small_set() {
        // median 2, deviations {1, 0, 1}
        assert_eq!(robust_variant(&[1.0, 2.0, 3.0], RobustVariant::Mad).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(robust_variant(&[], RobustVariant::Median), Err(RobustError::Empty));
        assert_eq!(
            robust_variant(&[1.0], RobustVariant::TrimmedMean(0.5)),
            Err(RobustError::Proportion(0.5))
        );
        assert_eq!(robust_variant(&[f64::NAN], RobustVariant::Mad), Err(RobustError::NaN));
    }

    #[test]
    fn extreme_tail_value_does_not_matter() {
        let a = robust_variant(&[1.0, 2.0, 3.0, 4.0, 100.0], RobustVariant::TrimmedMean(0.2)).unwrap();
        let b = robust_variant(&[1.0, 2.0, 3.0, 4.0, 1e6], RobustVariant::TrimmedMean(0.2)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn zero_trim_is_the_mean(xs in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let t = robust_variant(&xs, RobustVariant::TrimmedMean(0.0)).unwrap();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assert!((t - m).abs() <= 1e-9 * (1.0 + m.abs()));
        }

        #[test]
        fn trimmed_mean_ignores_magnitude_beyond_cut(
            xs in proptest::collection::vec(-10f64..10.0, 5..30),
            p in 0.1f64..0.45,
            big in 1e3f64..1e9,
        ) {
            let k = (p * xs.len() as f64).floor() as usize;
            prop_assume!(k >= 1);
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            let base = robust_variant(&s, RobustVariant::TrimmedMean(p)).unwrap();
            let last = s.len() - 1;
            s[last] = big;
            let moved = robust_variant(&s, RobustVariant::TrimmedMean(p)).unwrap();
            prop_assert_eq!(base, moved);
        }
    }
}
