//! Linear least squares by Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LsqFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    /// one-sigma standard errors from the residual variance (zero when exactly determined)
    pub std_err: Vec<f64>,
}

/// Solves min ‖X c − y‖₂. `names` label the columns for error messages.
pub fn fit_linear_lsq(rows: &[Vec<f64>], obs: &[f64], names: &[&str]) -> Result<LsqFit> {
    let m = rows.len();
    if m == 0 || m != obs.len() {
        return Err(Error::Validation("design matrix and observations differ in length".into()));
    }
    let n = rows[0].len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("ragged design matrix".into()));
    }
    if m < n {
        return Err(Error::Validation(format!("{m} rows for {n} unknowns")));
    }
    let x = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    // column scaling keeps the rank test meaningful for mixed units
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let s = x.column(j).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    let mut xs = x.clone();
    for j in 0..n {
        xs.column_mut(j).scale_mut(1.0 / scales[j]);
    }
    let y = DVector::from_column_slice(obs);
    let qr = xs.clone().qr();
    let r = qr.r();
    let rmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..n {
        if r[(i, i)].abs() <= 1e-12 * rmax.max(f64::MIN_POSITIVE) {
            let name = names.get(i).copied().unwrap_or("?");
            return Err(Error::Numerical(format!("rank-deficient design: column {i} ({name}) is degenerate")));
        }
    }
    let qty = qr.q().transpose() * &y;
    let rn = r.view((0, 0), (n, n)).into_owned();
    let cs = rn
        .solve_upper_triangular(&qty.rows(0, n).into_owned())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let coef: Vec<f64> = (0..n).map(|j| cs[j] / scales[j]).collect();
    let fitted = &xs * &cs;
    let residuals: Vec<f64> = (0..m).map(|i| obs[i] - fitted[i]).collect();
    let dof = m - n;
    let std_err = if dof == 0 {
        vec![0.0; n]
    } else {
        let s2 = residuals.iter().map(|e| e * e).sum::<f64>() / dof as f64;
        let rinv = rn.try_inverse().ok_or_else(|| Error::Numerical("singular R".into()))?;
        let cov = &rinv * rinv.transpose() * s2;
        (0..n).map(|j| cov[(j, j)].max(0.0).sqrt() / scales[j]).collect()
    };
    Ok(LsqFit { coef, residuals, std_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line_has_zero_residuals() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let obs: Vec<f64> = (0..5).map(|i| 2.0 - 3.0 * i as f64).collect();
        let f = fit_linear_lsq(&rows, &obs, &["c", "x"]).unwrap();
        assert!((f.coef[0] - 2.0).abs() < 1e-12 && (f.coef[1] + 3.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn square_system_interpolates() {
        let pts = [0.1, 0.2, 0.3];
        let rows: Vec<Vec<f64>> = pts.iter().map(|&e: &f64| vec![1.0, e.ln(), 1.0 / e]).collect();
        let obs = vec![1.0, -2.0, 0.5];
        let f = fit_linear_lsq(&rows, &obs, &["c0", "ln eps", "1/eps"]).unwrap();
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn rank_deficiency_names_column() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let obs = vec![0.0, 1.0, 2.0, 3.0];
        let e = fit_linear_lsq(&rows, &obs, &["c", "x", "2x"]).unwrap_err().to_string();
        assert!(e.contains("2x"), "{e}");
    }

    #[test]
    fn noisy_exponential_law_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps: Vec<f64> = (0..8).map(|i| 0.3 * 0.85f64.powi(i)).collect();
        let rows: Vec<Vec<f64>> = eps.iter().map(|&e| vec![1.0, e.ln(), 1.0 / e]).collect();
        let obs: Vec<f64> = eps
            .iter()
            .map(|&e| (1.0 + 2.0 * e.ln() - 3.0 / e) + (1.0 + 0.01 * rng.gen_range(-1.0..1.0f64)).ln())
            .collect();
        let f = fit_linear_lsq(&rows, &obs, &["c0", "c1", "c2"]).unwrap();
        for (c, e) in f.coef.iter().zip([1.0, 2.0, -3.0]) {
            assert!((c - e).abs() <= 0.05 * e.abs(), "{c} vs {e}");
        }
    }
}
