//! Replacement test for the greedy-rollout baseline.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for "current is better".
    pub p_value: f64,
    pub replace: bool,
}

/// One-sided paired t-test of `baseline - current` costs against zero.
///
/// Replaces only when the current model's costs are significantly lower at
/// level `alpha`. Zero variance counts as infinite `t` when the mean
/// difference is positive and as no evidence otherwise.
pub fn paired_t_test(current: &[f64], baseline: &[f64], alpha: f64) -> Result<PairedTest> {
    if current.len() != baseline.len() || current.len() < 2 {
        return Err(Error::Contract(format!(
            "paired test needs equal samples of at least 2, got {} and {}",
            current.len(),
            baseline.len()
        )));
    }
    let n = current.len() as f64;
    let diffs: Vec<f64> = baseline.iter().zip(current).map(|(b, c)| b - c).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (t, p_value) = if var == 0.0 {
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        let t = mean / (var / n).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Contract(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        mean_diff: mean,
        t,
        p_value,
        replace: mean > 0.0 && p_value < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_costs_never_replace() {
        let c = [0.1, 0.3, 0.2, 0.5];
        assert!(!paired_t_test(&c, &c, 0.05).unwrap().replace);
    }

    #[test]
    fn constant_improvement_replaces() {
        let b = [0.1, 0.3, 0.2, 0.5];
        let c: Vec<f64> = b.iter().map(|x| x - 0.01).collect();
        let r = paired_t_test(&c, &b, 0.05).unwrap();
        assert!(r.replace);
        assert!(r.t.is_infinite() || r.t > 1e6);
    }

    #[test]
    fn regression_never_replaces() {
        let b = [0.1, 0.3, 0.2, 0.5];
        let c: Vec<f64> = b.iter().map(|x| x + 0.01).collect();
        assert!(!paired_t_test(&c, &b, 0.05).unwrap().replace);
    }
}
