//! ε sweeps and the scaling fit ln A = c₀ + c₁ ln ε + c₂/ε.

use serde::Serialize;

use super::{measure, MeasureOptions, Measurement};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::numerics::lsq::fit_linear_lsq;

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// with both set, also fit the residual ln(1/ε) coefficient
    pub fixed_a: Option<f64>,
    pub fixed_beta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Jackknife {
    pub a_fit_min: f64,
    pub a_fit_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// jackknife standard errors of (a_fit, beta)
    pub a_fit_se: f64,
    pub beta_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub k: f64,
    pub beta: f64,
    pub a_fit: f64,
    /// one-sigma errors of (ln K, β, a_fit)
    pub std_err: [f64; 3],
    pub log_coeff: Option<f64>,
    pub log_coeff_err: Option<f64>,
    pub residuals: Vec<f64>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub n: usize,
    pub jackknife: Option<Jackknife>,
}

impl FitResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

fn core_fit(eps: &[f64], area: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = eps.iter().map(|&e| vec![1.0, e.ln(), 1.0 / e]).collect();
    let obs: Vec<f64> = area.iter().map(|a| a.ln()).collect();
    let f = fit_linear_lsq(&rows, &obs, &["ln K", "beta", "1/eps"])?;
    Ok((f.coef, f.std_err, f.residuals))
}

pub fn fit_scaling(eps: &[f64], area: &[f64], opts: &FitOptions) -> Result<FitResult> {
    if eps.len() != area.len() {
        return Err(Error::Validation("eps and area lists differ in length".into()));
    }
    if eps.len() < 3 {
        return Err(Error::Validation(format!("scaling fit needs at least 3 points, got {}", eps.len())));
    }
    if let Some(i) = (0..eps.len()).find(|&i| !(eps[i] > 0.0) || !(area[i] > 0.0) || !area[i].is_finite()) {
        return Err(Error::Validation(format!("point {i} is not positive (eps {}, area {})", eps[i], area[i])));
    }
    let (c, se, residuals) = core_fit(eps, area)?;
    let jackknife = if eps.len() >= 4 {
        let n = eps.len();
        let mut a_s = Vec::with_capacity(n);
        let mut b_s = Vec::with_capacity(n);
        for drop in 0..n {
            let e: Vec<f64> = (0..n).filter(|&i| i != drop).map(|i| eps[i]).collect();
            let a: Vec<f64> = (0..n).filter(|&i| i != drop).map(|i| area[i]).collect();
            let (cj, _, _) = core_fit(&e, &a)?;
            a_s.push(-cj[2]);
            b_s.push(cj[1]);
        }
        let se = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n as f64;
            ((n - 1) as f64 / n as f64 * v.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
        };
        Some(Jackknife {
            a_fit_min: a_s.iter().cloned().fold(f64::INFINITY, f64::min),
            a_fit_max: a_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            beta_min: b_s.iter().cloned().fold(f64::INFINITY, f64::min),
            beta_max: b_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            a_fit_se: se(&a_s),
            beta_se: se(&b_s),
        })
    } else {
        None
    };
    let (log_coeff, log_coeff_err) = match (opts.fixed_a, opts.fixed_beta) {
        (Some(a), Some(beta)) => {
            let rows: Vec<Vec<f64>> = eps.iter().map(|&e| vec![1.0, (1.0 / e).ln()]).collect();
            let obs: Vec<f64> = eps.iter().zip(area).map(|(&e, &ar)| ar.ln() + a / e - beta * e.ln()).collect();
            let f = fit_linear_lsq(&rows, &obs, &["ln K", "ln(1/eps)"])?;
            (Some(f.coef[1]), Some(f.std_err[1]))
        }
        _ => (None, None),
    };
    Ok(FitResult {
        k: c[0].exp(),
        beta: c[1],
        a_fit: -c[2],
        std_err: [se[0], se[1], se[2]],
        log_coeff,
        log_coeff_err,
        residuals,
        eps_min: eps.iter().cloned().fold(f64::INFINITY, f64::min),
        eps_max: eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        n: eps.len(),
        jackknife,
    })
}

/// Sequential sweep; `done` sees each result as it completes.
pub fn sweep(
    model: &SystemModel,
    eps: &[f64],
    opts: &MeasureOptions,
    mut done: impl FnMut(f64, &Result<Measurement>),
) -> Vec<Result<Measurement>> {
    eps.iter()
        .map(|&e| {
            let r = measure(model, e, opts);
            done(e, &r);
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_synthetic_law() {
        let eps: Vec<f64> = (0..6).map(|i| 0.25 * 0.8f64.powi(i)).collect();
        let area: Vec<f64> = eps.iter().map(|e| 3.0 * e.powf(-2.0) * (-1.5 / e).exp()).collect();
        let f = fit_scaling(&eps, &area, &FitOptions::default()).unwrap();
        assert!((f.k - 3.0).abs() < 1e-8 && (f.beta + 2.0).abs() < 1e-9 && (f.a_fit - 1.5).abs() < 1e-10);
        let j = f.jackknife.unwrap();
        assert!(j.a_fit_max - j.a_fit_min < 1e-9);
    }

    #[test]
    fn log_coefficient_with_fixed_a() {
        let eps: Vec<f64> = (0..5).map(|i| 0.2 * 0.8f64.powi(i)).collect();
        let area: Vec<f64> = eps.iter().map(|e| 2.0 * e.powf(-3.0) * (1.0 / e).powf(0.7) * (-1.0 / e).exp()).collect();
        let opts = FitOptions { fixed_a: Some(1.0), fixed_beta: Some(-3.0) };
        let f = fit_scaling(&eps, &area, &opts).unwrap();
        assert!((f.log_coeff.unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_scaling(&[0.1, 0.2], &[1.0, 2.0], &FitOptions::default()).is_err());
        assert!(fit_scaling(&[0.1, 0.2, 0.3], &[1.0, -2.0, 1.0], &FitOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn fit_is_exact_on_the_model(lnk in -3.0f64..3.0, beta in -4.0f64..1.0, a in 0.5f64..2.0) {
            let eps: Vec<f64> = (0..5).map(|i| 0.3 * 0.75f64.powi(i)).collect();
            let area: Vec<f64> = eps.iter().map(|e| (lnk + beta * e.ln() - a / e).exp()).collect();
            let f = fit_scaling(&eps, &area, &FitOptions::default()).unwrap();
            prop_assert!((f.a_fit - a).abs() < 1e-7);
            prop_assert!((f.beta - beta).abs() < 1e-6);
        }
    }
}
