use serde::Serialize;

use super::distribution::{student_t_quantile, student_t_two_sided_p};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTestResult {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub n: usize,
}

/// Paired t-test on `x − y` with a 95% confidence interval for the mean
/// difference.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<PairedTestResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let ss: f64 = diffs.iter().map(|d| (d - mean).powi(2)).sum();
    if diffs.iter().all(|&d| d == diffs[0]) || ss == 0.0 {
        return Err(Error::ZeroVariance("paired differences"));
    }
    let sd = (ss / (nf - 1.0)).sqrt();
    let se = sd / nf.sqrt();
    let t = mean / se;
    let df = n - 1;
    let crit = student_t_quantile(0.975, df as f64);
    Ok(PairedTestResult {
        mean_diff: mean,
        ci_low: mean - crit * se,
        ci_high: mean + crit * se,
        t_stat: t,
        df,
        p_two_sided: student_t_two_sided_p(t, df as f64),
        n,
    })
}
