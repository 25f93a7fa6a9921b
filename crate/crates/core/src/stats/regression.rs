//! Standardized multiple regression solved through the normal equations.
//!
//! Predictors and outcome are z-scored, so the fitted coefficients are
//! standardized betas and the intercept is identically zero. The Gram matrix
//! is factored with a diagonally pivoted Cholesky decomposition; a pivot
//! below `RANK_TOLERANCE` times the largest diagonal marks the remaining
//! columns as collinear.

use serde::Serialize;

use super::distribution::student_t_two_sided_p;
use crate::error::{Error, Result};

pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub beta_standardized: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_two_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub model_label: String,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n: usize,
    pub df_residual: usize,
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn zscore(values: &[f64]) -> Option<Vec<f64>> {
    let (mean, sd) = mean_sd(values);
    if sd.is_nan() || sd <= 0.0 || !sd.is_finite() {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Lower-triangular Cholesky factor of `P A Pᵀ` with the pivot order.
struct PivotedCholesky {
    l: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

fn pivoted_cholesky(a: &[Vec<f64>]) -> std::result::Result<PivotedCholesky, Vec<usize>> {
    let k = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut perm: Vec<usize> = (0..k).collect();
    let max_diag = (0..k).map(|i| a[i][i]).fold(0.0f64, f64::max);
    let tol = RANK_TOLERANCE * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; k]; k];
    for j in 0..k {
        // Schur-complement diagonal for the remaining columns.
        let mut best = j;
        let mut best_val = f64::NEG_INFINITY;
        for i in j..k {
            let d = m[i][i] - (0..j).map(|p| l[i][p] * l[i][p]).sum::<f64>();
            if d > best_val {
                best_val = d;
                best = i;
            }
        }
        if best_val <= tol {
            return Err(perm[j..].to_vec());
        }
        if best != j {
            m.swap(j, best);
            for row in m.iter_mut() {
                row.swap(j, best);
            }
            l.swap(j, best);
            perm.swap(j, best);
        }
        let pivot = best_val.sqrt();
        l[j][j] = pivot;
        for i in j + 1..k {
            let s = m[i][j] - (0..j).map(|p| l[i][p] * l[j][p]).sum::<f64>();
            l[i][j] = s / pivot;
        }
    }
    Ok(PivotedCholesky { l, perm })
}

impl PivotedCholesky {
    /// Solves `A x = b` in the original column order.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = b.len();
        let pb: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        let mut y = vec![0.0; k];
        for i in 0..k {
            let s: f64 = (0..i).map(|p| self.l[i][p] * y[p]).sum();
            y[i] = (pb[i] - s) / self.l[i][i];
        }
        let mut z = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|p| self.l[p][i] * z[p]).sum();
            z[i] = (y[i] - s) / self.l[i][i];
        }
        let mut x = vec![0.0; k];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

/// Fits `y` on the named predictor columns after z-scoring everything.
pub fn ols_standardized(
    label: &str,
    columns: &[(&str, &[f64])],
    y: &[f64],
) -> Result<RegressionResult> {
    let k = columns.len();
    let n = y.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "regression needs at least one predictor".into(),
        ));
    }
    if let Some((name, _)) = columns.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "predictor {name:?} has a different length than the outcome"
        )));
    }
    if n < k + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} rows for {k} predictors; need at least {}",
            k + 2
        )));
    }
    let mut z = Vec::with_capacity(k);
    for (name, col) in columns {
        z.push(zscore(col).ok_or_else(|| Error::ConstantColumn(name.to_string()))?);
    }
    let zy = zscore(y).ok_or(Error::ZeroVariance("regression outcome"))?;

    let gram: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(&z[i], &z[j])).collect())
        .collect();
    let xty: Vec<f64> = (0..k).map(|i| dot(&z[i], &zy)).collect();
    let chol = pivoted_cholesky(&gram).map_err(|cols| {
        Error::RankDeficient(cols.iter().map(|&c| columns[c].0.to_string()).collect())
    })?;
    let beta = chol.solve(&xty);

    let sse: f64 = (0..n)
        .map(|r| {
            let fit: f64 = (0..k).map(|j| beta[j] * z[j][r]).sum();
            (zy[r] - fit).powi(2)
        })
        .sum();
    let sst = (n - 1) as f64;
    let df = n - k - 1;
    let sigma2 = sse / df as f64;

    let mut coefficients = Vec::with_capacity(k);
    for (j, (name, _)) in columns.iter().enumerate() {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let var = sigma2 * chol.solve(&e)[j];
        let se = var.max(0.0).sqrt();
        let t = beta[j] / se;
        coefficients.push(Coefficient {
            name: name.to_string(),
            beta_standardized: beta[j],
            std_error: se,
            t_stat: t,
            p_two_sided: student_t_two_sided_p(t, df as f64),
        });
    }
    Ok(RegressionResult {
        model_label: label.to_string(),
        coefficients,
        r_squared: (1.0 - sse / sst).clamp(0.0, 1.0),
        n,
        df_residual: df,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let x = [1.0, 2.0, 4.0, 7.0, 11.0];
        let r = ols_standardized("t", &[("x", &x)], &x).unwrap();
        assert!((r.coefficients[0].beta_standardized - 1.0).abs() < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_predictor_beta_is_correlation() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0];
        let r = ols_standardized("t", &[("x", &x)], &y).unwrap();
        // Sxy = 10, Sxx = 10, Syy = 14.8
        let expected = 10.0 / (10.0f64 * 14.8).sqrt();
        assert!((r.coefficients[0].beta_standardized - expected).abs() < 1e-12);
        assert!((r.r_squared - expected * expected).abs() < 1e-12);
        assert_eq!(r.df_residual, 3);
    }

    #[test]
    fn constant_and_collinear_columns() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = [3.0; 5];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert!(matches!(
            ols_standardized("t", &[("x", &x), ("c", &c)], &y),
            Err(Error::ConstantColumn(name)) if name == "c"
        ));
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        match ols_standardized("t", &[("x", &x), ("x2", &x2)], &y) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ols_standardized("t", &[("x", &x[..2])], &y[..2]),
            Err(Error::InsufficientData(_))
        ));
    }
}
