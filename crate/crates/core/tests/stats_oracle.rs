//! Statistics kernel against external references: a 50-digit Student-t table
//! and a normal-equations solve in nalgebra.

use analogylab::stats::{ols_standardized, paired_t_test, student_t_cdf};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn student_t_cdf_matches_table() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/student_t.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let t: f64 = rec[0].parse().unwrap();
        let df: f64 = rec[1].parse().unwrap();
        let want: f64 = rec[2].parse().unwrap();
        let got = student_t_cdf(t, df);
        assert!((got - want).abs() < 1e-8, "t={t} df={df}: {got} vs {want}");
        n += 1;
    }
    assert_eq!(n, 136);
}

#[test]
fn paired_t_fixture() {
    let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((r.t_stat - 3.4641).abs() < 1e-4);
    assert!((r.p_two_sided - 0.0742).abs() < 1e-3);
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let k = 1 + case % 4;
        let n = rng.gen_range(k + 10..=200);
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|r| {
                cols.iter()
                    .enumerate()
                    .map(|(j, c)| (j as f64 + 1.0) * c[r])
                    .sum::<f64>()
                    + rng.gen_range(-1.0..1.0)
            })
            .collect();
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let input: Vec<(&str, &[f64])> = names
            .iter()
            .zip(&cols)
            .map(|(n, c)| (n.as_str(), c.as_slice()))
            .collect();
        let fit = ols_standardized("m", &input, &y).unwrap();

        let zc: Vec<Vec<f64>> = cols.iter().map(|c| zscore(c)).collect();
        let x = DMatrix::from_fn(n, k, |r, j| zc[j][r]);
        let zy = DVector::from_vec(zscore(&y));
        let xtx = x.transpose() * &x;
        let inv = xtx.clone().try_inverse().unwrap();
        let beta = &inv * (x.transpose() * &zy);
        let resid = &zy - &x * &beta;
        let sigma2 = resid.dot(&resid) / (n - k - 1) as f64;
        for j in 0..k {
            let c = &fit.coefficients[j];
            assert!((c.beta_standardized - beta[j]).abs() < 1e-10, "case {case}");
            assert!((c.std_error - (sigma2 * inv[(j, j)]).sqrt()).abs() < 1e-10);
        }
        let r2 = 1.0 - resid.dot(&resid) / (n - 1) as f64;
        assert!((fit.r_squared - r2).abs() < 1e-10);
        assert_eq!(fit.df_residual, n - k - 1);
    }
}
