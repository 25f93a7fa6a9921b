//! Statistical kernel: Student-t distribution, paired t-test, standardized
//! OLS and Pearson correlation. No external statistics dependency.

pub mod distribution;
pub mod regression;
pub mod ttest;

pub use distribution::{student_t_cdf, student_t_quantile, student_t_two_sided_p};
pub use regression::{ols_standardized, Coefficient, RegressionResult};
pub use ttest::{paired_t_test, PairedTestResult};

use crate::error::{Error, Result};

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(
            "pearson inputs differ in length".into(),
        ));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "pearson needs at least 2 points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("pearson input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &twice).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // (1,2),(2,1),(3,4),(4,3): Σdxdy = 3, Σdx² = Σdy² = 5 → r = 0.6
        let r = pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
        assert!(matches!(
            pearson(&x, &[1.0; 4]),
            Err(Error::ZeroVariance(_))
        ));
    }
}
