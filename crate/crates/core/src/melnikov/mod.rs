//! Melnikov coefficients, the constants Ĉ and f₀, the inner-equation
//! functions A_l, Q_j, F_j, the constant b, and lobe-area predictions.

mod fourier;

use rug::Float;
use serde::Serialize;

pub use fourier::CFourier;

use crate::error::{Error, Result};
use crate::model::{
    classify_regime, eta_star, format_rational, mu_hat, perturbation_order_ell, rational_to_big, rational_to_f64,
    CriticalClass, FourierSeries, Kind, Rational, Regime, SystemModel,
};
use crate::numerics::quad::{gauss_legendre, quad_adaptive, QuadOptions};
use crate::numerics::taylor::TaylorIntegrator;
use crate::numerics::BigComplex;
use crate::separatrix::{evaluate_complex, separatrix_tape, singular_limit, SeparatrixInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ContourQuadrature,
    /// harmonic absent from H1: the coefficient vanishes identically
    ClosedForm,
}

#[derive(Clone, Debug)]
pub struct MelnikovCoefficient {
    pub k: i64,
    pub eps: f64,
    pub value: BigComplex,
    pub method: Method,
    pub est_error: f64,
}

impl MelnikovCoefficient {
    pub fn to_json(&self) -> serde_json::Value {
        let v = self.value.to_c64();
        serde_json::json!({
            "k": self.k, "eps": self.eps, "value": [v.re, v.im],
            "est_error": self.est_error, "method": self.method, "bits": self.value.prec(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct MelnikovOptions {
    /// contour height a - c·ε
    pub c: f64,
}

impl Default for MelnikovOptions {
    fn default() -> Self {
        MelnikovOptions { c: 1.0 }
    }
}

fn exp_coeff(s: &FourierSeries, k: i64, bits: u32) -> BigComplex {
    let (re, im) = s.exp_coeff(k);
    BigComplex::from_f64(bits, re, im)
}

fn has_harmonic(model: &SystemModel, k: i64) -> bool {
    let p = &model.perturbation;
    let nz = |s: &FourierSeries| s.exp_coeff(k) != (0.0, 0.0);
    p.active_terms().any(|t| nz(&t.series)) || p.linear.as_ref().is_some_and(nz)
}

/// trig_k(q): cos(kq) for k ≥ 0, sin(|k|q) for k < 0.
fn trig_term(k: i32, q: &BigComplex) -> BigComplex {
    let arg = q.scale_f64(k.unsigned_abs() as f64);
    if k >= 0 {
        arg.cos()
    } else {
        arg.sin()
    }
}

/// H1^[k](q, p): coefficient of e^{ikτ} of H1 at a complex point.
pub fn h1_coefficient(model: &SystemModel, k: i64, q: &BigComplex, p: &BigComplex) -> BigComplex {
    let bits = q.prec();
    let mut acc = BigComplex::zero(bits);
    for t in model.perturbation.active_terms() {
        let c = exp_coeff(&t.series, k, bits);
        if c.is_zero() {
            continue;
        }
        let xpart = match model.perturbation.kind {
            Kind::Polynomial => q.powi(t.x_power as i64),
            Kind::Trigonometric => trig_term(t.x_power, q),
        };
        acc = &acc + &(&(&c * &xpart) * &p.powi(t.y_power as i64));
    }
    if let Some(s) = &model.perturbation.linear {
        acc = &acc + &(&exp_coeff(s, k, bits) * q);
    }
    acc
}

/// H1^[k](q₀(u), p₀(u)).
pub fn h1_on_separatrix(model: &SystemModel, sep: &SeparatrixInfo, k: i64, u: &BigComplex) -> Result<BigComplex> {
    let (q, p) = sep.eval(u)?;
    Ok(h1_coefficient(model, k, &q, &p))
}

/// Integrand of the Melnikov integral without the oscillatory factor: the
/// saddle value of x-only trig terms is removed and the linear term is
/// integrated by parts (q₀ does not decay on rotational loops).
fn melnikov_integrand(model: &SystemModel, k: i64, eps: f64, q: &BigComplex, p: &BigComplex) -> BigComplex {
    let bits = q.prec();
    let mut acc = BigComplex::zero(bits);
    for t in model.perturbation.active_terms() {
        let c = exp_coeff(&t.series, k, bits);
        if c.is_zero() {
            continue;
        }
        let xpart = match model.perturbation.kind {
            Kind::Polynomial => q.powi(t.x_power as i64),
            Kind::Trigonometric => {
                let v = trig_term(t.x_power, q);
                if t.y_power == 0 && t.x_power >= 0 {
                    &v - &BigComplex::one(bits)
                } else {
                    v
                }
            }
        };
        acc = &acc + &(&(&c * &xpart) * &p.powi(t.y_power as i64));
    }
    if let Some(s) = &model.perturbation.linear {
        // ∫ a_k q₀ e^{ikr/ε} = -(ε/(ik)) ∫ a_k p₀ e^{ikr/ε}
        let f = BigComplex::from_f64(bits, 0.0, eps / k as f64);
        acc = &acc + &(&(&exp_coeff(s, k, bits) * &f) * p);
    }
    acc
}

/// Exponential decay rate of the integrand along the real direction.
fn decay_rate(model: &SystemModel) -> Result<f64> {
    let lambda = match model.potential.critical_class() {
        CriticalClass::Hyperbolic { lambda } => lambda,
        _ => {
            return Err(Error::Validation(
                "Melnikov quadrature needs exponential decay (hyperbolic saddle)".into(),
            ))
        }
    };
    let n = match model.perturbation.kind {
        Kind::Polynomial => model.perturbation.order_n().unwrap_or(1).max(1),
        Kind::Trigonometric => 1,
    };
    Ok(lambda * n as f64)
}

/// M^[k](ε) = ∫ H1^[k](q₀(r), p₀(r)) e^{ikr/ε} dr by quadrature on the
/// shifted line Im r = ±(a − cε).
pub fn melnikov_coefficient(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    k: i64,
    eps: f64,
    bits: u32,
    opts: &MelnikovOptions,
) -> Result<MelnikovCoefficient> {
    if k == 0 {
        return Err(Error::Validation("Melnikov coefficient needs k ≠ 0".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("eps must be positive, got {eps}")));
    }
    let a = sep.a_f64();
    let scale = k.unsigned_abs() as f64 * a / eps;
    if scale > (bits as f64 - 16.0) * std::f64::consts::LN_2 {
        return Err(Error::Precision(format!(
            "e^(-|k|a/eps) = e^(-{scale:.1}) is below 2^-(bits-16) at {bits} bits; increase bits"
        )));
    }
    if !has_harmonic(model, k) {
        return Ok(MelnikovCoefficient { k, eps, value: BigComplex::zero(bits), method: Method::ClosedForm, est_error: 0.0 });
    }
    let kappa = decay_rate(model)?;
    let sign = k.signum() as f64;
    let shift = (opts.c * eps).min(a / 2.0);
    let y0 = sign * (a - shift);
    let omega = k as f64 / eps;
    let tol_log2 = -(bits as f64 - 20.0);
    let (integral, est_error) = match sep.closed_form() {
        Some(cf) => {
            let w = bits as f64 * std::f64::consts::LN_2 / kappa + 8.0;
            let path = vec![BigComplex::from_f64(bits, -w, y0), BigComplex::from_f64(bits, w, y0)];
            let mut o = QuadOptions::for_bits(bits);
            let wavelength = 2.0 * std::f64::consts::PI / omega.abs();
            o.initial_panels = ((2.0 * w / (0.5 * wavelength.min(shift * 4.0))).ceil() as usize).max(8);
            let om = Float::with_val(bits, omega);
            let r = quad_adaptive(
                |z| {
                    let (q, p) = cf.eval(z);
                    // e^{iω Re z}; the e^{-ω Im z} factor is applied outside
                    let ph = Float::with_val(bits, &z.re * &om);
                    let (s, c) = ph.sin_cos(Float::new(bits));
                    Ok(&melnikov_integrand(model, k, eps, &q, &p) * &BigComplex::new(c, s))
                },
                &path,
                tol_log2,
                &o,
            )?;
            (r.value, r.est_error)
        }
        None => march_quadrature(model, sep, k, eps, y0, bits, kappa)?,
    };
    // restore e^{iω·(i y0)} = e^{-ω y0}
    let fac = Float::with_val(bits, -omega * y0).exp();
    let value = integral.scale(&fac);
    let est_error = est_error * fac.to_f64();
    Ok(MelnikovCoefficient { k, eps, value, method: Method::ContourQuadrature, est_error })
}

/// Composite Gauss–Legendre on Taylor steps marched along the line
/// Im u = y0 from the vertical continuation point. The window is capped
/// where the e^{λ|u|} growth of integration error meets the integrand decay.
fn march_quadrature(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    k: i64,
    eps: f64,
    y0: f64,
    bits: u32,
    kappa: f64,
) -> Result<(BigComplex, f64)> {
    let lambda = sep.potential.lambda().unwrap_or(1.0);
    let ln2 = std::f64::consts::LN_2;
    let w = (bits as f64 * ln2 / kappa + 8.0).min(bits as f64 * ln2 / (kappa + lambda));
    let a = sep.a_f64();
    let start = BigComplex::from_f64(bits, 0.0, y0);
    let (q0, p0) = evaluate_complex(sep, &start, 1e-6)?;
    let omega = k as f64 / eps;
    let m = ((bits / 6) as usize).clamp(12, 60);
    let rule = gauss_legendre(m, bits);
    let coarse = gauss_legendre(m - 4, bits);
    let mut total = BigComplex::zero(bits);
    let mut err = 0.0;
    for dir in [1.0f64, -1.0] {
        let tape = separatrix_tape::<BigComplex>(&sep.potential, bits);
        let mut ti = TaylorIntegrator::new(tape, -(bits as f64 - 16.0));
        let mut state = [q0.clone(), p0.clone()];
        let mut x = 0.0f64;
        let t0 = Float::new(bits);
        let cap = ((a - y0.abs()) / 4.0).min(0.5 * std::f64::consts::PI / omega.abs());
        while x < w {
            ti.compute_jets(&state, &t0);
            let h = ti.step_bound().min(cap).min(w - x);
            if !(h > 1e-12) {
                return Err(Error::Numerical(format!("Melnikov march step underflow at Re u = {}", dir * x)));
            }
            let mut panel = |r: &crate::numerics::quad::Rule| -> BigComplex {
                let mut acc = BigComplex::zero(bits);
                for (nd, wt) in r.nodes.iter().zip(&r.weights) {
                    // offset s ∈ [0, h] from the jet center
                    let s = Float::with_val(bits, nd + 1u32) * (0.5 * h);
                    let off = BigComplex::from_real(&Float::with_val(bits, &s * dir));
                    let mut st = state.clone();
                    ti.eval_at(&off, &mut st);
                    let xr = Float::with_val(bits, &off.re + x * dir);
                    let ph = Float::with_val(bits, &xr * omega);
                    let (sn, cs) = ph.sin_cos(Float::new(bits));
                    let f = &melnikov_integrand(model, k, eps, &st[0], &st[1]) * &BigComplex::new(cs, sn);
                    acc = &acc + &f.scale(wt);
                }
                acc.scale_f64(0.5 * h)
            };
            let fine = panel(&rule);
            let rough = panel(&coarse);
            err += (&fine - &rough).abs_f64();
            total = if dir > 0.0 { &total + &fine } else { &total + &fine };
            let step = BigComplex::from_f64(bits, dir * h, 0.0);
            ti.eval_at(&step, &mut state);
            x += h;
        }
    }
    Ok((total, err))
}

/// L(u, τ; ε) = Σ_k M^[k] e^{ik(τ − u/ε)} from precomputed coefficients.
pub fn melnikov_potential_from(coeffs: &[MelnikovCoefficient], u: f64, tau: f64, eps: f64) -> f64 {
    coeffs
        .iter()
        .map(|c| {
            let v = c.value.to_c64();
            let ph = c.k as f64 * (tau - u / eps);
            v.re * ph.cos() - v.im * ph.sin()
        })
        .sum()
}

/// Coefficients M^[k] for 0 < |k| ≤ k_max.
pub fn melnikov_coefficients(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    eps: f64,
    k_max: i64,
    bits: u32,
) -> Result<Vec<MelnikovCoefficient>> {
    let km = k_max.min(model.perturbation.max_harmonic() as i64);
    let mut out = Vec::new();
    for k in (-km..=km).filter(|&k| k != 0) {
        out.push(melnikov_coefficient(model, sep, k, eps, bits, &MelnikovOptions::default())?);
    }
    Ok(out)
}

pub fn melnikov_potential(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    u: f64,
    tau: f64,
    eps: f64,
    k_max: i64,
    bits: u32,
) -> Result<f64> {
    Ok(melnikov_potential_from(&melnikov_coefficients(model, sep, eps, k_max, bits)?, u, tau, eps))
}

/// Leading singular coefficients of H1^[1] on the separatrix.
#[derive(Clone, Debug)]
pub struct MelnikovConstant {
    pub ell: Rational,
    /// lim (u − ia)^ℓ H1^[1], from local expansions
    pub c_hat: BigComplex,
    /// the same limit by extrapolation along u = i(a − δ)
    pub c_hat_numeric: BigComplex,
    /// M^[1] ≈ −ε^{1−ℓ} e^{−a/ε} f₀
    pub f0: BigComplex,
}

/// Ĉ symbolically and numerically, then f₀ = −2π i^ℓ Ĉ / Γ(ℓ).
/// For a pure a(τ)x trigonometric perturbation (ℓ = 0) Ĉ is the pole
/// coefficient a^[1]·C₊ of the integrated-by-parts integrand and f₀ = 2πĈ.
pub fn constant_chat_and_f0(model: &SystemModel, sep: &SeparatrixInfo, bits: u32) -> Result<MelnikovConstant> {
    let r = sep.r;
    let m_deg = model.potential.degree();
    let ell = perturbation_order_ell(&model.perturbation, r, m_deg)?;
    let one = Rational::from_integer(1);
    let cp = sep.c_plus.clone();
    let mut sym = BigComplex::zero(bits);
    let mut magnitude = 0.0f64;
    let linear_only = ell == Rational::from_integer(0);
    match model.perturbation.kind {
        Kind::Polynomial => {
            // q ≈ −C₊/(r−1)·(u−ia)^{−(r−1)}, p ≈ C₊ (u−ia)^{−r}
            let rm1 = rational_to_big(&(r - one), bits);
            let qlead = cp.scale(&Float::with_val(bits, rm1.recip_ref())).scale_f64(-1.0);
            for t in model.perturbation.active_terms() {
                let order = Rational::from_integer(t.x_power as i64) * (r - one) + Rational::from_integer(t.y_power as i64) * r;
                if order != ell {
                    continue;
                }
                let c = &(&exp_coeff(&t.series, 1, bits) * &qlead.powi(t.x_power as i64)) * &cp.powi(t.y_power as i64);
                magnitude += c.abs_f64();
                sym = &sym + &c;
            }
        }
        Kind::Trigonometric => {
            let tc = sep
                .trig
                .as_ref()
                .ok_or_else(|| Error::Validation("trigonometric separatrix lacks its local constants".into()))?;
            if linear_only {
                let a1 = exp_coeff(model.perturbation.linear.as_ref().expect("ℓ = 0 needs a linear term"), 1, bits);
                sym = &a1 * &cp;
                magnitude = sym.abs_f64();
            } else {
                let i_c2 = tc.c2.mul_i_pow(1);
                let ep = &tc.c1 + &i_c2;
                let em = &tc.c1 - &i_c2;
                for t in model.perturbation.active_terms() {
                    let kk = t.x_power.unsigned_abs() as i64;
                    let order = Rational::new(2 * kk, tc.m as i64) + Rational::from_integer(t.y_power as i64);
                    if order != ell {
                        continue;
                    }
                    let (a, b) = (ep.powi(kk), em.powi(kk));
                    let lead = if t.x_power >= 0 {
                        (&a + &b).scale_f64(0.5)
                    } else {
                        // (a − b)/(2i)
                        (&a - &b).mul_i_pow(-1).scale_f64(0.5)
                    };
                    let c = &(&exp_coeff(&t.series, 1, bits) * &lead) * &cp.powi(t.y_power as i64);
                    magnitude += c.abs_f64();
                    sym = &sym + &c;
                }
            }
        }
    }
    let q = *ell.denom().max(r.denom());
    let q = if model.perturbation.kind == Kind::Trigonometric { q.max(m_deg as i64) } else { q };
    let numeric = if linear_only {
        let a1 = exp_coeff(model.perturbation.linear.as_ref().expect("linear term"), 1, bits);
        let s = Float::with_val(bits, 1);
        singular_limit(bits, &sep.a, &s, q, |u| Ok(&a1 * &sep.eval(u)?.1))?
    } else {
        let s = rational_to_big(&ell, bits);
        singular_limit(bits, &sep.a, &s, q, |u| h1_on_separatrix(model, sep, 1, u))?
    };
    let gap = (&sym - &numeric).abs_f64();
    if gap > 1e-6 * magnitude.max(sym.abs_f64()).max(1e-300) && gap > 1e-12 {
        return Err(Error::Numerical(format!(
            "symbolic and numeric Ĉ disagree: {:?} vs {:?}",
            sym.to_c64(),
            numeric.to_c64()
        )));
    }
    let two_pi = Float::with_val(bits, rug::float::Constant::Pi) * 2u32;
    let f0 = if linear_only {
        sym.scale(&two_pi)
    } else {
        // −2π i^ℓ Ĉ / Γ(ℓ), i^ℓ = e^{iπℓ/2}
        let l = rational_to_big(&ell, bits);
        let th = Float::with_val(bits, rug::float::Constant::Pi) * &l / 2u32;
        let (s, c) = th.sin_cos(Float::new(bits));
        let il = BigComplex::new(c, s);
        let g = Float::with_val(bits, l.gamma_ref());
        (&il * &sym).scale(&two_pi).scale(&g.recip()).scale_f64(-1.0)
    };
    Ok(MelnikovConstant { ell, c_hat: sym, c_hat_numeric: numeric, f0 })
}

/// A_l, Q_j, F_j as complex Fourier series in τ.
#[derive(Clone, Debug)]
pub struct InnerFunctions {
    pub a: Vec<CFourier>,
    pub q: Vec<CFourier>,
    pub f: Vec<CFourier>,
}

/// A_l = Σ_{(r−1)k + rl = ℓ} C₊^{k+l−2}/(1−r)^k a_kl; Q_j = Σ_{k≥j} C(k,j) A_k;
/// F_j the zero-mean antiderivative of Q_j.
pub fn functions_aqf(model: &SystemModel, sep: &SeparatrixInfo, bits: u32) -> Result<InnerFunctions> {
    if model.perturbation.kind == Kind::Trigonometric {
        return Err(Error::Validation("trig inner constants unsupported".into()));
    }
    let r = sep.r;
    let one = Rational::from_integer(1);
    let ell = perturbation_order_ell(&model.perturbation, r, model.potential.degree())?;
    let lmax = model.perturbation.active_terms().map(|t| t.y_power as usize).max().unwrap_or(0);
    let mut a = vec![CFourier::zero(bits); lmax + 1];
    let one_minus_r = rational_to_big(&(one - r), bits);
    for t in model.perturbation.active_terms() {
        let k = t.x_power as i64;
        let l = t.y_power as i64;
        if Rational::from_integer(k) * (r - one) + Rational::from_integer(l) * r != ell {
            continue;
        }
        let mut w = sep.c_plus.powi(k + l - 2);
        w = w.scale(&Float::with_val(bits, one_minus_r.clone().pow_i(k)).recip());
        a[l as usize] = a[l as usize].add(&CFourier::from_series(&t.series, bits).scale(&w));
    }
    let n = a.len();
    let mut q = Vec::with_capacity(n.max(3));
    for j in 0..n.max(3) {
        let mut s = CFourier::zero(bits);
        for (k, ak) in a.iter().enumerate().skip(j) {
            s = s.add(&ak.scale(&BigComplex::from_f64(bits, binom(k, j), 0.0)));
        }
        q.push(s);
    }
    let f = q.iter().map(|x| x.antiderivative()).collect();
    Ok(InnerFunctions { a, q, f })
}

trait PowI {
    fn pow_i(self, k: i64) -> Float;
}

impl PowI for Float {
    fn pow_i(self, k: i64) -> Float {
        use rug::ops::Pow;
        let p = self.prec();
        Float::with_val(p, Pow::pow(self, k as i32))
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// b = 2r⟨Q₀F₁ + 2F₀Q₂⟩.
pub fn constant_b(f: &InnerFunctions, r: Rational) -> BigComplex {
    let bits = f.q[0].bits;
    let zero = CFourier::zero(bits);
    let q2 = f.q.get(2).unwrap_or(&zero);
    let f1 = f.f.get(1).unwrap_or(&zero);
    let avg = &f.q[0].mul(f1).mean() + &f.f[0].mul(q2).mean().scale_f64(2.0);
    avg.scale(&rational_to_big(&(r * 2), bits))
}

#[derive(Clone, Debug)]
pub struct AsymptoticConstants {
    pub ell: Rational,
    pub r: Rational,
    pub eta_star: Rational,
    pub regime: Regime,
    pub c_hat: BigComplex,
    pub c_hat_numeric: BigComplex,
    pub f0: BigComplex,
    pub inner: Option<InnerFunctions>,
    pub b: Option<BigComplex>,
}

impl AsymptoticConstants {
    pub fn to_json(&self) -> serde_json::Value {
        let c = |z: &BigComplex| {
            let v = z.to_c64();
            serde_json::json!([v.re, v.im])
        };
        let mut v = serde_json::json!({
            "ell": format_rational(&self.ell),
            "r": format_rational(&self.r),
            "eta_star": format_rational(&self.eta_star),
            "regime": self.regime.to_string(),
            "C_hat": c(&self.c_hat),
            "C_hat_numeric": c(&self.c_hat_numeric),
            "f0": c(&self.f0),
            "abs_f0": self.f0.abs_f64(),
        });
        if let Some(b) = &self.b {
            v["b"] = c(b);
        }
        if let Some(f) = &self.inner {
            v["A"] = f.a.iter().map(|s| s.to_json()).collect();
        }
        v
    }
}

/// Everything the predictions need.
pub fn asymptotic_constants(model: &SystemModel, sep: &SeparatrixInfo, bits: u32) -> Result<AsymptoticConstants> {
    let report = classify_regime(model, sep)?;
    let mc = constant_chat_and_f0(model, sep, bits)?;
    let (inner, b) = if model.perturbation.kind == Kind::Polynomial {
        let f = functions_aqf(model, sep, bits)?;
        let b = constant_b(&f, sep.r);
        (Some(f), Some(b))
    } else {
        (None, None)
    };
    Ok(AsymptoticConstants {
        ell: report.ell,
        r: report.r,
        eta_star: eta_star(report.ell, report.r),
        regime: report.regime,
        c_hat: mc.c_hat,
        c_hat_numeric: mc.c_hat_numeric,
        f0: mc.f0,
        inner,
        b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    RegularAboveStar,
    RegularEta0,
    SingularEllGt2r,
    SingularEllEq2r,
}

impl FormulaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaId::RegularAboveStar => "regular_above_star",
            FormulaId::RegularEta0 => "regular_eta0",
            FormulaId::SingularEllGt2r => "singular_ell_gt_2r",
            FormulaId::SingularEllEq2r => "singular_ell_eq_2r",
        }
    }
}

#[derive(Clone, Debug)]
pub enum FSource {
    MelnikovF0,
    /// f(μ̂) from the inner equation
    InnerFMu(BigComplex),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ErrorForm {
    EpsPower,
    InverseLog,
}

#[derive(Clone, Debug)]
pub struct LobeAreaPrediction {
    pub eps: f64,
    pub regime: Regime,
    pub area: Float,
    pub formula_id: FormulaId,
    pub f_used: BigComplex,
    pub f_from_inner: bool,
    /// C(μ) is unknown and possibly nonzero; |e^{iC}| taken as 1
    pub unknown_phase_c: bool,
    /// f₀ stands in for f(μ) in a singular formula
    pub f0_substituted: bool,
    pub error_nu: Rational,
    pub error_form: ErrorForm,
}

impl LobeAreaPrediction {
    pub fn caveats(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.unknown_phase_c {
            v.push("unknown_phase_C");
        }
        if self.f0_substituted {
            v.push("f0_for_f_mu");
        }
        v
    }
}

/// Lobe area predicted by the regime's asymptotic formula.
pub fn predict_area(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    c: &AsymptoticConstants,
    eps: f64,
    f_source: &FSource,
    bits: u32,
) -> Result<LobeAreaPrediction> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("eps must be positive, got {eps}")));
    }
    let two_r = c.r * 2;
    let d = c.ell - two_r;
    let (formula_id, nu) = match c.regime {
        Regime::RegularAboveStar => (
            FormulaId::RegularAboveStar,
            if d > Rational::from_integer(0) { d } else { Rational::from_integer(1) },
        ),
        Regime::RegularEtaZeroEllBelow2r => (FormulaId::RegularEta0, Rational::from_integer(1)),
        Regime::SingularEllAbove2r => (FormulaId::SingularEllGt2r, d),
        Regime::SingularEllEquals2r => (FormulaId::SingularEllEq2r, Rational::from_integer(1)),
        Regime::BelowSingularOutOfScope => {
            return Err(Error::Validation(
                "eta below the singular threshold: no asymptotic formula applies".into(),
            ))
        }
    };
    let singular = matches!(formula_id, FormulaId::SingularEllGt2r | FormulaId::SingularEllEq2r);
    let (f, from_inner) = match (f_source, singular) {
        (FSource::InnerFMu(f), true) => (f.clone(), true),
        _ => (c.f0.clone(), false),
    };
    let y_dep = model.perturbation.depends_on_y();
    let unknown_phase_c = matches!(formula_id, FormulaId::RegularEta0 | FormulaId::SingularEllEq2r) && y_dep;
    // A = 4|μ| ε^{η+1−ℓ} e^{−a/ε} |f| (· e^{μ² Im b ln(1/ε)} when ℓ = 2r)
    let expo = rational_to_f64(&(model.eta + Rational::from_integer(1) - c.ell));
    let mut log_a = Float::with_val(bits, eps).ln() * expo;
    log_a -= Float::with_val(bits, &sep.a / eps);
    if formula_id == FormulaId::SingularEllEq2r {
        if let Some(b) = &c.b {
            let mu2 = model.mu * model.mu;
            log_a += Float::with_val(bits, &b.im * mu2) * Float::with_val(bits, (1.0 / eps).ln());
        }
    }
    let area = log_a.exp() * Float::with_val(bits, 4.0 * model.mu.abs()) * f.abs();
    Ok(LobeAreaPrediction {
        eps,
        regime: c.regime,
        area,
        formula_id,
        f_used: f,
        f_from_inner: from_inner,
        unknown_phase_c,
        f0_substituted: singular && !from_inner,
        error_nu: nu,
        error_form: ErrorForm::InverseLog,
    })
}

/// μ̂ for this model and ε.
pub fn model_mu_hat(model: &SystemModel, c: &AsymptoticConstants, eps: f64) -> f64 {
    mu_hat(model.mu, eps, model.eta, c.ell, c.r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Potential, Term};
    use crate::separatrix::{analyze_separatrix, numeric_separatrix};
    use num_complex::Complex64;

    const BITS: u32 = 128;

    fn duffing_sep() -> SeparatrixInfo {
        analyze_separatrix(&Potential::duffing(), BITS).unwrap()
    }

    #[test]
    fn h1_examples() {
        let m = SystemModel::duffing_power(4, 0, 1.0);
        let sep = duffing_sep();
        let u = BigComplex::from_f64(BITS, 0.7, 0.0);
        let v = h1_on_separatrix(&m, &sep, 1, &u).unwrap().to_c64();
        let q = 2f64.sqrt() / 0.7f64.cosh();
        assert!((v - Complex64::new(0.0, -q.powi(4) / 2.0)).norm() < 1e-14);
        assert!(h1_on_separatrix(&m, &sep, 2, &u).unwrap().is_zero());
        let d = 1e-3;
        let u = BigComplex::from_f64(BITS, 0.0, std::f64::consts::FRAC_PI_2 - d);
        let v = h1_on_separatrix(&m, &sep, 1, &u).unwrap().to_c64();
        assert!((v * d.powi(4) - Complex64::new(0.0, -2.0)).norm() < 1e-5);
    }

    #[test]
    fn chat_and_f0_for_duffing_powers() {
        let sep = duffing_sep();
        for n in 1..=5u32 {
            let m = SystemModel::duffing_power(n, 0, 1.0);
            let c = constant_chat_and_f0(&m, &sep, BITS).unwrap();
            let expect = 2f64.powf(n as f64 / 2.0) * std::f64::consts::PI / (1..n).product::<u32>().max(1) as f64;
            assert!((c.f0.abs_f64() - expect).abs() < 1e-12 * expect, "n={n}");
            assert!((&c.c_hat - &c.c_hat_numeric).abs_f64() < 1e-8 * c.c_hat.abs_f64());
        }
        let c1 = constant_chat_and_f0(&SystemModel::duffing_power(1, 0, 1.0), &sep, BITS).unwrap();
        assert!((c1.c_hat.to_c64() - Complex64::new(-0.5f64.sqrt(), 0.0)).norm() < 1e-14);
        let c4 = constant_chat_and_f0(&SystemModel::duffing_power(4, 0, 1.0), &sep, BITS).unwrap();
        assert!((c4.c_hat.to_c64() - Complex64::new(0.0, -2.0)).norm() < 1e-14);
        assert!((c4.f0.to_c64() - Complex64::new(0.0, 2.0 * std::f64::consts::PI / 3.0)).norm() < 1e-14);
    }

    #[test]
    fn aqf_lambda_model() {
        let sep = duffing_sep();
        let lam = 0.7;
        let m = SystemModel::duffing_lambda(lam, 0, 1.0);
        let f = functions_aqf(&m, &sep, BITS).unwrap();
        let s2 = 2f64.sqrt();
        // A₀ = −2 sin τ, A₁ = √2 iλ cos τ
        for tau in [0.3, 1.9] {
            let a0 = f.a[0].eval(tau);
            assert!((a0 - Complex64::new(-2.0 * tau.sin(), 0.0)).norm() < 1e-14);
            let a1 = f.a[1].eval(tau);
            assert!((a1 - Complex64::new(0.0, s2 * lam * tau.cos())).norm() < 1e-14);
            let f1 = f.f[1].eval(tau);
            assert!((f1 - Complex64::new(0.0, s2 * lam * tau.sin())).norm() < 1e-14);
        }
        let b = constant_b(&f, sep.r).to_c64();
        assert!((b - Complex64::new(0.0, -4.0 * s2 * lam)).norm() < 1e-14, "{b}");
        assert!(constant_b(&functions_aqf(&SystemModel::duffing_power(4, 0, 1.0), &sep, BITS).unwrap(), sep.r).is_zero());
    }

    #[test]
    fn b_invariant_under_tau_shift() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_lambda(1.3, 0, 1.0);
        let mut shifted = m.clone();
        shifted.perturbation = m.perturbation.shifted(0.83);
        let b0 = constant_b(&functions_aqf(&m, &sep, BITS).unwrap(), sep.r).to_c64();
        let b1 = constant_b(&functions_aqf(&shifted, &sep, BITS).unwrap(), sep.r).to_c64();
        assert!((b0 - b1).norm() < 1e-13);
    }

    #[test]
    fn melnikov_matches_sech_closed_form() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_power(1, 0, 1.0);
        for eps in [0.5, 0.25] {
            let c = melnikov_coefficient(&m, &sep, 1, eps, BITS, &MelnikovOptions::default()).unwrap();
            let exact = -(2f64.sqrt() * std::f64::consts::PI / 2.0) / (std::f64::consts::PI / (2.0 * eps)).cosh();
            let v = c.value.to_c64();
            assert!(v.re.abs() < 1e-12 * exact.abs() && ((v.im - exact) / exact).abs() < 1e-12, "{v} vs {exact}");
            let cm = melnikov_coefficient(&m, &sep, -1, eps, BITS, &MelnikovOptions::default()).unwrap();
            assert!((cm.value.to_c64() - v.conj()).norm() < 1e-12 * v.norm());
        }
        assert!(melnikov_coefficient(&m, &sep, 2, 0.25, BITS, &MelnikovOptions::default()).unwrap().value.is_zero());
        assert!(matches!(
            melnikov_coefficient(&m, &sep, 1, 0.01, BITS, &MelnikovOptions::default()),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn marched_quadrature_matches_closed_form_route() {
        let numeric = numeric_separatrix(&Potential::duffing(), BITS).unwrap();
        let catalog = duffing_sep();
        let mut num = numeric.clone();
        // use the exact height so both routes integrate on the same line
        num.a = catalog.a.clone();
        let m = SystemModel::duffing_power(2, 0, 1.0);
        let a = melnikov_coefficient(&m, &catalog, 1, 0.25, BITS, &MelnikovOptions::default()).unwrap();
        let b = melnikov_coefficient(&m, &num, 1, 0.25, BITS, &MelnikovOptions::default()).unwrap();
        let rel = (&a.value - &b.value).abs_f64() / a.value.abs_f64();
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn melnikov_potential_single_harmonic() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_power(1, 0, 1.0);
        let eps = 0.25;
        let coeffs = melnikov_coefficients(&m, &sep, eps, 3, BITS).unwrap();
        assert_eq!(coeffs.len(), 2);
        let amp = 2f64.sqrt() * std::f64::consts::PI / (std::f64::consts::PI / (2.0 * eps)).cosh();
        for (u, tau) in [(0.1, 0.0), (0.4, 1.0)] {
            let l = melnikov_potential_from(&coeffs, u, tau, eps);
            assert!((l - amp * (tau - u / eps).sin()).abs() < 1e-12 * amp);
            let l2 = melnikov_potential_from(&coeffs, u + 2.0 * std::f64::consts::PI * eps, tau, eps);
            assert!((l - l2).abs() < 1e-12 * amp);
        }
    }

    #[test]
    fn pendulum_linear_forcing_constant() {
        let sep = analyze_separatrix(&Potential::pendulum(), BITS).unwrap();
        let m = SystemModel::new(
            "pend",
            Potential::pendulum(),
            crate::model::PerturbationModel { kind: Kind::Trigonometric, terms: vec![], linear: Some(FourierSeries::sin(1, 1.0)) },
            Rational::from_integer(1),
            1.0,
        )
        .unwrap();
        let c = constant_chat_and_f0(&m, &sep, BITS).unwrap();
        assert_eq!(c.ell, Rational::from_integer(0));
        // a^[1] = −i/2, C₊ = −2i: f₀ = 2π·(−1) = −2π
        assert!((c.f0.to_c64() - Complex64::new(-2.0 * std::f64::consts::PI, 0.0)).norm() < 1e-12);
        // the integral −(ε/i)·a^[1]∫p₀e^{ir/ε} = −(ε/i)(−i/2)·2π sech(π/(2ε)) exactly
        let eps = 0.2;
        let mk = melnikov_coefficient(&m, &sep, 1, eps, BITS, &MelnikovOptions::default()).unwrap();
        let exact = eps * std::f64::consts::PI / (std::f64::consts::PI / (2.0 * eps)).cosh();
        assert!((mk.value.to_c64() - Complex64::new(exact, 0.0)).norm() < 1e-12 * exact);
    }

    #[test]
    fn predictions() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_power(1, 2, 1.0);
        let c = asymptotic_constants(&m, &sep, BITS).unwrap();
        let p = predict_area(&m, &sep, &c, 0.25, &FSource::MelnikovF0, BITS).unwrap();
        let expect = 4.0 * 0.0625 * (-2.0 * std::f64::consts::PI).exp() * 2f64.sqrt() * std::f64::consts::PI;
        assert!((p.area.to_f64() / expect - 1.0).abs() < 1e-14);
        assert!((expect - 2.074e-3).abs() < 1e-6);
        assert_eq!(p.formula_id, FormulaId::RegularAboveStar);
        let z = predict_area(&m.with_mu(0.0), &sep, &c, 0.25, &FSource::MelnikovF0, BITS).unwrap();
        assert!(z.area.is_zero());
        let out = SystemModel::duffing_power(6, 1, 1.0);
        let co = asymptotic_constants(&out, &sep, BITS).unwrap();
        assert!(predict_area(&out, &sep, &co, 0.1, &FSource::MelnikovF0, BITS).is_err());
    }

    #[test]
    fn singular_with_b_zero_reduces_to_regular_formula() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_power(4, 0, 0.3);
        let c = asymptotic_constants(&m, &sep, BITS).unwrap();
        assert_eq!(c.regime, Regime::SingularEllEquals2r);
        let p = predict_area(&m, &sep, &c, 0.1, &FSource::MelnikovF0, BITS).unwrap();
        let mut reg = c.clone();
        reg.regime = Regime::RegularAboveStar;
        let q = predict_area(&m, &sep, &reg, 0.1, &FSource::MelnikovF0, BITS).unwrap();
        assert!((p.area.to_f64() / q.area.to_f64() - 1.0).abs() < 1e-14);
        assert!(p.f0_substituted && !p.unknown_phase_c);
    }

    #[test]
    fn lambda_model_log_exponent() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_lambda(1.0, 0, 1.0);
        let c = asymptotic_constants(&m, &sep, BITS).unwrap();
        let p1 = predict_area(&m, &sep, &c, 0.1, &FSource::MelnikovF0, BITS).unwrap();
        let p2 = predict_area(&m, &sep, &c, 0.05, &FSource::MelnikovF0, BITS).unwrap();
        assert!(p1.unknown_phase_c);
        // A ∝ ε^{-3} · ε^{4√2} e^{-a/ε}
        let a = std::f64::consts::FRAC_PI_2;
        let ratio = (p1.area.to_f64() / p2.area.to_f64()).ln() - (a / 0.05 - a / 0.1);
        let beta = ratio / 2f64.ln();
        assert!((beta - (4.0 * 2f64.sqrt() - 3.0)).abs() < 1e-10, "{beta}");
    }

    #[test]
    fn degenerate_lambda_gives_zero_f0() {
        let sep = duffing_sep();
        let m = SystemModel::duffing_lambda(-2f64.sqrt(), 0, 1.0);
        let c = constant_chat_and_f0(&m, &sep, BITS).unwrap();
        assert!(c.f0.abs_f64() < 1e-14);
    }

    #[test]
    fn higher_harmonic_bound() {
        let sep = duffing_sep();
        let mut m = SystemModel::duffing_power(4, 0, 1.0);
        m.perturbation.terms[0].series = FourierSeries::sin(1, 1.0).with(2, 0.5, 0.0);
        let a = sep.a_f64();
        for eps in [0.2, 0.1] {
            let c = melnikov_coefficient(&m, &sep, 2, eps, BITS, &MelnikovOptions::default()).unwrap();
            let scaled = c.value.abs_f64() * (2.0 * a / eps).exp() * eps.powi(3);
            assert!(scaled < 50.0, "{scaled}");
        }
        let _ = Term { x_power: 1, y_power: 0, series: FourierSeries::new() };
    }
}
