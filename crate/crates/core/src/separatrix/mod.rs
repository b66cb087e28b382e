//! Homoclinic parameterization (q₀, p₀) of the unperturbed system and the
//! complex singularities ±ia that control exponentially small effects.

use rug::float::Constant;
use rug::Float;
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{format_rational, CriticalClass, Kind, Potential, Rational};
use crate::numerics::big::Scalar;
use crate::numerics::lsq::fit_linear_lsq;
use crate::numerics::taylor::{NodeId, Tape, TaylorIntegrator};
use crate::numerics::{BigComplex, PowerSeries};

pub const DEFAULT_SERIES_ORDER: usize = 400;
pub const DEFAULT_DELTA_MIN: f64 = 1e-3;
const SNAP_MAX_DEN: i64 = 8;
const SNAP_TOL: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosedForm {
    /// V = -x²/2 + x⁴/4, q₀ = √2 sech u
    Duffing,
    /// V = cos x - 1, q₀ = 4 atan(eᵘ)
    Pendulum,
    /// V = -x⁴/4 + x⁶/6 (parabolic), q₀ = (u²/2 + 2/3)^(-1/2)
    ParabolicSextic,
}

impl ClosedForm {
    pub fn name(&self) -> &'static str {
        match self {
            ClosedForm::Duffing => "duffing",
            ClosedForm::Pendulum => "pendulum",
            ClosedForm::ParabolicSextic => "parabolic-sextic",
        }
    }

    /// (q₀(u), p₀(u)) from the closed form.
    pub fn eval(&self, u: &BigComplex) -> (BigComplex, BigComplex) {
        let bits = u.prec();
        match self {
            ClosedForm::Duffing => {
                let s2 = Float::with_val(bits, 2).sqrt();
                let ch = u.cosh().recip();
                let sh = u.sinh();
                let q = ch.scale(&s2);
                let p = (&(&sh * &ch) * &ch).scale(&s2);
                (q, -p)
            }
            ClosedForm::Pendulum => {
                let q = u.exp().atan().scale_f64(4.0);
                let p = u.cosh().recip().scale_f64(2.0);
                (q, p)
            }
            ClosedForm::ParabolicSextic => {
                let two_thirds = BigComplex::from_real(&(Float::with_val(bits, 2) / 3u32));
                let w = &(u * u).scale_f64(0.5) + &two_thirds;
                let q = w.sqrt().recip();
                let q3 = &(&q * &q) * &q;
                let p = (&q3 * u).scale_f64(-0.5);
                (q, p)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Catalog(ClosedForm),
    Numeric,
}

/// Leading coefficients of cos q₀ and sin q₀ at ia (trigonometric kind):
/// cos q₀ ≈ Ĉ¹ (u - ia)^(-2/M), sin q₀ ≈ Ĉ² (u - ia)^(-2/M).
#[derive(Clone, Debug, PartialEq)]
pub struct TrigConstants {
    pub c1: BigComplex,
    pub c2: BigComplex,
    pub m: u32,
}

#[derive(Clone, Debug)]
pub struct SeparatrixInfo {
    pub a: Float,
    pub r: Rational,
    /// p₀(u) ≈ C₊ (u - ia)^(-r), principal branch along u = i(a - δ)
    pub c_plus: BigComplex,
    pub trig: Option<TrigConstants>,
    pub source: Source,
    /// q₀(0)
    pub apex: Float,
    /// p₀(0); zero except for rotational (trigonometric) loops
    pub apex_p: Float,
    pub potential: Potential,
    /// relative gap between balance and continuation values of C₊
    pub c_plus_check: Option<f64>,
    /// unsnapped order estimate from the series fit
    pub r_raw: Option<f64>,
}

impl SeparatrixInfo {
    pub fn bits(&self) -> u32 {
        self.a.prec()
    }

    pub fn closed_form(&self) -> Option<ClosedForm> {
        match self.source {
            Source::Catalog(c) => Some(c),
            Source::Numeric => None,
        }
    }

    pub fn a_f64(&self) -> f64 {
        self.a.to_f64()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let c = self.c_plus.to_c64();
        let mut v = json!({
            "a": self.a.to_f64(),
            "r": format_rational(&self.r),
            "C_plus": [c.re, c.im],
            "source": match &self.source {
                Source::Catalog(cf) => format!("catalog({})", cf.name()),
                Source::Numeric => "numeric".to_string(),
            },
            "apex": [self.apex.to_f64(), self.apex_p.to_f64()],
            "bits": self.bits(),
        });
        if let Some(t) = &self.trig {
            let (a, b) = (t.c1.to_c64(), t.c2.to_c64());
            v["trig_constants"] = json!({"C1": [a.re, a.im], "C2": [b.re, b.im], "M": t.m});
        }
        if let Some(g) = self.c_plus_check {
            v["C_plus_balance_vs_continuation"] = json!(g);
        }
        v
    }

    /// (q₀(u), p₀(u)) at complex u in the strip, via the closed form when
    /// there is one and by continuation otherwise.
    pub fn eval(&self, u: &BigComplex) -> Result<(BigComplex, BigComplex)> {
        match self.closed_form() {
            Some(cf) => Ok(cf.eval(u)),
            None => evaluate_complex(self, u, DEFAULT_DELTA_MIN),
        }
    }
}

fn pi(bits: u32) -> Float {
    Float::with_val(bits, Constant::Pi)
}

fn close(a: f64, b: f64) -> bool {
    a == b
}

/// Recognizes the closed-form separatrices.
pub fn catalog_lookup(potential: &Potential, bits: u32) -> Option<SeparatrixInfo> {
    let c = &potential.coefficients;
    let cf = match potential.kind {
        Kind::Polynomial if c.len() == 2 && close(c.get(&2).copied()?, -0.5) && close(c.get(&4).copied()?, 0.25) => {
            ClosedForm::Duffing
        }
        Kind::Polynomial if c.len() == 2 && close(c.get(&4).copied()?, -0.25) && close(c.get(&6).copied()?, 1.0 / 6.0) => {
            ClosedForm::ParabolicSextic
        }
        Kind::Trigonometric
            if potential.sin_coefficients.is_empty()
                && c.len() == 2
                && close(c.get(&0).copied()?, -1.0)
                && close(c.get(&1).copied()?, 1.0) =>
        {
            ClosedForm::Pendulum
        }
        _ => return None,
    };
    let two = Float::with_val(bits, 2);
    let s2 = two.clone().sqrt();
    let info = match cf {
        ClosedForm::Duffing => SeparatrixInfo {
            a: pi(bits) / 2u32,
            r: Rational::from_integer(2),
            c_plus: BigComplex::new(Float::new(bits), s2.clone()),
            trig: None,
            source: Source::Catalog(cf),
            apex: s2,
            apex_p: Float::new(bits),
            potential: potential.clone(),
            c_plus_check: None,
            r_raw: None,
        },
        ClosedForm::Pendulum => SeparatrixInfo {
            a: pi(bits) / 2u32,
            r: Rational::from_integer(1),
            c_plus: BigComplex::from_f64(bits, 0.0, -2.0),
            trig: Some(TrigConstants {
                c1: BigComplex::from_f64(bits, 2.0, 0.0),
                c2: BigComplex::from_f64(bits, 0.0, 2.0),
                m: 1,
            }),
            source: Source::Catalog(cf),
            apex: pi(bits),
            apex_p: two,
            potential: potential.clone(),
            c_plus_check: None,
            r_raw: None,
        },
        ClosedForm::ParabolicSextic => {
            // a = 2/√3; C₊ = e^{3πi/4} / (2√a)
            let a = Float::with_val(bits, 2) / Float::with_val(bits, 3).sqrt();
            let th = pi(bits) * 3u32 / 4u32;
            let (s, co) = th.sin_cos(Float::new(bits));
            let m = Float::with_val(bits, a.sqrt_ref()).recip() / 2u32;
            SeparatrixInfo {
                apex: Float::with_val(bits, 1.5).sqrt(),
                a,
                r: Rational::new(3, 2),
                c_plus: BigComplex::new(co * &m, s * &m),
                trig: None,
                source: Source::Catalog(cf),
                apex_p: Float::new(bits),
                potential: potential.clone(),
                c_plus_check: None,
                r_raw: None,
            }
        }
    };
    Some(info)
}

/// Appends -V'(q) to a tape and returns its node.
pub fn minus_vprime<T: Scalar>(tape: &mut Tape<T>, potential: &Potential, q: NodeId) -> Option<NodeId> {
    let bits = tape.prec();
    let mut acc: Option<NodeId> = None;
    match potential.kind {
        Kind::Polynomial => {
            let max = potential.degree().saturating_sub(1) as usize;
            let mut pows: Vec<Option<NodeId>> = vec![None; max + 1];
            if max >= 1 {
                pows[1] = Some(q);
            }
            for j in 2..=max {
                pows[j] = tape.mul_opt(pows[j - 1], Some(q));
            }
            for (&k, &c) in &potential.coefficients {
                // k ≥ 2 by construction
                let coef = Float::with_val(bits, -c * k as f64);
                let term = match pows[(k - 1) as usize] {
                    Some(n) => tape.scale_real(n, &coef),
                    None => tape.constant_real(&coef),
                };
                acc = tape.add_opt(acc, Some(term));
            }
        }
        Kind::Trigonometric => {
            // V' = Σ -j c_j sin(jq) + j s_j cos(jq)
            let mut harmonics: Vec<u32> =
                potential.coefficients.keys().chain(potential.sin_coefficients.keys()).copied().filter(|&j| j > 0).collect();
            harmonics.sort_unstable();
            harmonics.dedup();
            for j in harmonics {
                let arg = if j == 1 { q } else { tape.scale_real(q, &Float::with_val(bits, j)) };
                let (s, c) = tape.sin_cos(arg);
                if let Some(&cj) = potential.coefficients.get(&j) {
                    let t = tape.scale_real(s, &Float::with_val(bits, cj * j as f64));
                    acc = tape.add_opt(acc, Some(t));
                }
                if let Some(&sj) = potential.sin_coefficients.get(&j) {
                    let t = tape.scale_real(c, &Float::with_val(bits, -sj * j as f64));
                    acc = tape.add_opt(acc, Some(t));
                }
            }
        }
    }
    acc
}

/// Tape for q' = p, p' = -V'(q).
pub fn separatrix_tape<T: Scalar>(potential: &Potential, bits: u32) -> Tape<T> {
    let mut t = Tape::new(bits, 2);
    let q = t.var(0);
    let p = t.var(1);
    t.set_rhs(0, Some(p));
    let f = minus_vprime(&mut t, potential, q);
    t.set_rhs(1, f);
    t
}

/// Basepoint (q₀(0), p₀(0)) of the homoclinic loop.
pub fn find_apex(potential: &Potential, bits: u32) -> Result<(Float, Float)> {
    match potential.critical_class() {
        CriticalClass::Hyperbolic { .. } => {}
        _ => return Err(Error::Validation("apex search needs a hyperbolic critical point".into())),
    }
    match potential.kind {
        Kind::Polynomial => {
            for dir in [1.0f64, -1.0] {
                // walk outward while V < 0
                let mut x = 1e-3;
                let mut prev = x;
                let mut found = None;
                while x < 1e4 {
                    let v = potential.eval(dir * x);
                    if v >= 0.0 {
                        found = Some((prev, x));
                        break;
                    }
                    prev = x;
                    x *= 1.01;
                }
                let Some((lo, hi)) = found else { continue };
                let mut lo = Float::with_val(bits, dir * lo);
                let mut hi = Float::with_val(bits, dir * hi);
                // bisection keeps V(lo) < 0 ≤ V(hi)
                for _ in 0..(bits + 8) {
                    let mid = Float::with_val(bits, &lo + &hi) / 2u32;
                    if potential.eval_big(&mid).is_sign_negative() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let x = lo;
                if potential.deriv_big(&x).to_f64().abs() < 1e-12 {
                    return Err(Error::Validation("turning point is degenerate (V' = 0 at the apex)".into()));
                }
                return Ok((x, Float::new(bits)));
            }
            Err(Error::Validation("no real apex found: no homoclinic loop at energy 0".into()))
        }
        Kind::Trigonometric => {
            // rotational loop over (0, 2π): V < 0 inside, apex at the minimum of V
            let two_pi = std::f64::consts::TAU;
            let n = 4096;
            let mut best = (f64::INFINITY, 0.0);
            for i in 1..n {
                let x = two_pi * i as f64 / n as f64;
                let v = potential.eval(x);
                if v >= 0.0 {
                    return Err(Error::Validation("V ≥ 0 inside (0, 2π): no rotational separatrix".into()));
                }
                if v < best.0 {
                    best = (v, x);
                }
            }
            // Newton on V'(x) = 0 with a finite-difference curvature
            let mut x = Float::with_val(bits, best.1);
            for _ in 0..200 {
                let d1 = potential.deriv_big(&x);
                let h = 1e-6;
                let c = (potential.deriv_big(&Float::with_val(bits, &x + h)).to_f64()
                    - potential.deriv_big(&Float::with_val(bits, &x - h)).to_f64())
                    / (2.0 * h);
                if c <= 0.0 {
                    break;
                }
                let dx = Float::with_val(bits, &d1 / c);
                x -= &dx;
                if dx.is_zero() || dx.to_f64().abs() < 2f64.powi(-(bits as i32) + 8) {
                    break;
                }
            }
            let v = potential.eval_big(&x);
            let p = Float::with_val(bits, -v * 2u32).sqrt();
            Ok((x, p))
        }
    }
}

/// Taylor series of q₀ and p₀ about u = 0.
#[derive(Clone, Debug)]
pub struct ApexSeries {
    pub q: PowerSeries,
    pub p: PowerSeries,
    pub apex: Float,
    pub apex_p: Float,
}

/// Series from the recurrence (n+2)(n+1) q_{n+2} = -[V'(q)]_n.
pub fn taylor_at_apex(potential: &Potential, order: usize, bits: u32) -> Result<ApexSeries> {
    if let CriticalClass::Parabolic { .. } = potential.critical_class() {
        return Err(Error::Validation(
            "parabolic separatrices are only available through the closed-form catalog".into(),
        ));
    }
    let (x, y) = find_apex(potential, bits)?;
    let tape = separatrix_tape::<BigComplex>(potential, bits);
    let mut ti = TaylorIntegrator::with_order(tape, -(bits as f64), order);
    let state = [BigComplex::from_real(&x), BigComplex::from_real(&y)];
    ti.compute_jets(&state, &Float::new(bits));
    Ok(ApexSeries {
        q: PowerSeries::from_coeffs(ti.jets(0).to_vec()),
        p: PowerSeries::from_coeffs(ti.jets(1).to_vec()),
        apex: x,
        apex_p: y,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesKind {
    /// series of q₀: singular exponent r - 1
    Position,
    /// series of p₀: singular exponent r
    Momentum,
}

#[derive(Clone, Debug)]
pub struct SingularityFit {
    pub a: f64,
    pub r: Rational,
    pub r_raw: f64,
}

/// Nearest rational with denominator ≤ 8, if within the snap tolerance.
pub fn snap_rational(x: f64) -> Option<Rational> {
    let mut best: Option<(f64, Rational)> = None;
    for d in 1..=SNAP_MAX_DEN {
        let n = (x * d as f64).round() as i64;
        let q = Rational::new(n, d);
        let err = (x - n as f64 / d as f64).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e - 1e-12) {
            best = Some((err, q));
        }
    }
    best.filter(|(e, _)| *e <= SNAP_TOL).map(|(_, q)| q)
}

/// Domb–Sykes style tail fit ln|c_n| ≈ c + γ ln n − n ln a + d/n over the
/// coefficients of one parity.
pub fn locate_singularity(series: &PowerSeries, kind: SeriesKind) -> Result<SingularityFit> {
    let n_max = series.order();
    let logs: Vec<f64> =
        series.coeffs.iter().map(|c| c.log2_abs() * std::f64::consts::LN_2).collect();
    let tail = |par: usize| -> f64 {
        (n_max / 2..=n_max).filter(|n| n % 2 == par).map(|n| logs[n]).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    };
    let parity = if tail(0) >= tail(1) { 0 } else { 1 };
    let idx: Vec<usize> = (2..=n_max).filter(|n| n % 2 == parity && logs[*n].is_finite()).collect();
    if idx.len() < 50 {
        return Err(Error::Numerical(format!(
            "only {} nonzero coefficients of one parity; need at least 50",
            idx.len()
        )));
    }
    let window: Vec<usize> = idx[idx.len() / 2..].to_vec();
    // pure imaginary pair ±ia: coefficients of one parity alternate in sign
    let sign = |n: usize| {
        let c = &series.coeffs[n];
        if c.re.to_f64().abs() >= c.im.to_f64().abs() { c.re.is_sign_positive() } else { c.im.is_sign_positive() }
    };
    let flips = window.windows(2).filter(|w| sign(w[0]) == sign(w[1])).count();
    if flips > 0 {
        return Err(Error::Numerical("dominant singularity not purely imaginary".into()));
    }
    let rows: Vec<Vec<f64>> = window.iter().map(|&n| vec![1.0, (n as f64).ln(), n as f64, 1.0 / n as f64]).collect();
    let obs: Vec<f64> = window.iter().map(|&n| logs[n]).collect();
    let fit = fit_linear_lsq(&rows, &obs, &["c", "ln n", "n", "1/n"])?;
    let a = (-fit.coef[2]).exp();
    let gamma = fit.coef[1];
    let r_raw = match kind {
        SeriesKind::Position => gamma + 2.0,
        SeriesKind::Momentum => gamma + 1.0,
    };
    let r = snap_rational(r_raw).ok_or_else(|| {
        Error::Numerical(format!("singularity order {r_raw:.4} is not close to a rational with denominator ≤ {SNAP_MAX_DEN}"))
    })?;
    Ok(SingularityFit { a, r, r_raw })
}

/// Analytic continuation of (q₀, p₀) from the basepoint: along the real
/// axis to Re u, then vertically to u.
pub fn evaluate_complex(sep: &SeparatrixInfo, u: &BigComplex, delta_min: f64) -> Result<(BigComplex, BigComplex)> {
    let bits = u.prec();
    let a = sep.a.to_f64();
    let im = u.im.to_f64();
    if im.abs() > a - delta_min {
        return Err(Error::Numerical(format!(
            "evaluation point Im u = {im} is within {delta_min} of the singularity at height {a}: path too close to singularity"
        )));
    }
    let tape = separatrix_tape::<BigComplex>(&sep.potential, bits);
    let mut ti = TaylorIntegrator::new(tape, -(bits as f64 - 16.0));
    let mut state = [BigComplex::from_real(&sep.apex), BigComplex::from_real(&sep.apex_p)];
    let mid = BigComplex::from_real(&u.re);
    let start = BigComplex::zero(bits);
    march(&mut ti, &mut state, &start, &mid, a)?;
    march(&mut ti, &mut state, &mid, u, a)?;
    let [q, p] = state;
    Ok((q, p))
}

/// Steps the autonomous flow along the straight segment from u0 to u1,
/// keeping each step ≤ (a - |Im u|)/4.
pub(crate) fn march(
    ti: &mut TaylorIntegrator<BigComplex>,
    state: &mut [BigComplex; 2],
    u0: &BigComplex,
    u1: &BigComplex,
    a: f64,
) -> Result<()> {
    let bits = u0.prec();
    let total = (u1 - u0).abs_f64();
    if total == 0.0 {
        return Ok(());
    }
    let dir = (u1 - u0).scale_f64(1.0 / total);
    let mut pos = u0.clone();
    let t0 = Float::new(bits);
    let mut steps = 0;
    loop {
        let rem = u1 - &pos;
        let left = rem.abs_f64();
        if left == 0.0 {
            break;
        }
        ti.compute_jets(state, &t0);
        let cap = (a - pos.im.to_f64().abs()) / 4.0;
        let h = ti.step_bound().min(cap);
        if !(h > 1e-12) {
            return Err(Error::Numerical(format!(
                "continuation step underflow at u = {:?}",
                pos.to_c64()
            )));
        }
        // exact endpoint on the last step
        let hc = if left <= h { rem } else { dir.scale_f64(h) };
        pos = if left <= h { u1.clone() } else { &pos + &hc };
        ti.eval_at(&hc, state);
        if !state[0].is_finite() || !state[1].is_finite() {
            return Err(Error::Numerical("non-finite value during continuation".into()));
        }
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::Numerical("continuation step limit exceeded".into()));
        }
    }
    Ok(())
}

/// Polynomial extrapolation to t = 0 (Neville).
pub fn extrapolate_to_zero(ts: &[f64], vals: &[BigComplex]) -> BigComplex {
    let n = ts.len();
    let mut p: Vec<BigComplex> = vals.to_vec();
    for k in 1..n {
        for i in 0..n - k {
            // P = (t_{i+k} P_i - t_i P_{i+1}) / (t_{i+k} - t_i) at t = 0
            let num = &p[i].scale_f64(ts[i + k]) - &p[i + 1].scale_f64(ts[i]);
            p[i] = num.scale_f64(1.0 / (ts[i + k] - ts[i]));
        }
    }
    p[0].clone()
}

/// Limit of (−iδ)^s · f(i(a − δ)) as δ → 0, sampled on a geometric δ grid
/// and extrapolated in t = δ^(1/q).
pub fn singular_limit<F>(bits: u32, a: &Float, s: &Float, q: i64, mut f: F) -> Result<BigComplex>
where
    F: FnMut(&BigComplex) -> Result<BigComplex>,
{
    let n = 10;
    let mut ts = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(n);
    for k in 0..n {
        let delta = 0.25 * 0.6f64.powi(k as i32);
        let d = Float::with_val(bits, delta);
        let u = BigComplex::new(Float::new(bits), Float::with_val(bits, a - &d));
        let fac = BigComplex::new(Float::new(bits), -d).powf(s);
        vals.push(&fac * &f(&u)?);
        ts.push(delta.powf(1.0 / q as f64));
    }
    Ok(extrapolate_to_zero(&ts, &vals))
}

/// C₊ from the dominant balance, with its phase chosen by continuation.
pub fn coefficient_cplus(sep_partial: &SeparatrixInfo, bits: u32) -> Result<(BigComplex, f64)> {
    let potential = &sep_partial.potential;
    let r = sep_partial.r;
    let q = *r.denom();
    let rf = crate::model::rational_to_big(&r, bits);
    let cont = singular_limit(bits, &sep_partial.a, &rf, q, |u| Ok(evaluate_complex(sep_partial, u, 1e-4)?.1))?;
    if potential.kind == Kind::Trigonometric {
        return Ok((cont, 0.0));
    }
    let one = Rational::from_integer(1);
    if r <= one {
        return Err(Error::Numerical("polynomial separatrix with r ≤ 1".into()));
    }
    let v_inf = potential.v_infinity();
    // X^{2/(r-1)} = -(r-1)²/(2 v∞), C = -(r-1) X
    let rm1 = crate::model::rational_to_big(&(r - one), bits);
    let kexp = Rational::from_integer(2) / (r - one);
    if !kexp.is_integer() {
        return Err(Error::Numerical("2/(r-1) is not an integer: degree relation violated".into()));
    }
    let k = *kexp.numer();
    let rhs = Float::with_val(bits, rm1.square_ref()) / Float::with_val(bits, 2.0 * v_inf);
    // rhs = -(r-1)²/(2v∞) has modulus |rhs| and argument π (v∞ > 0) or 0
    let modulus = Float::with_val(bits, rhs.abs_ref());
    let rho = Float::with_val(bits, modulus.ln() / k).exp();
    let base_arg = if v_inf > 0.0 { pi(bits) } else { Float::new(bits) };
    let mut best: Option<(f64, BigComplex)> = None;
    for j in 0..k {
        let th = (Float::with_val(bits, &base_arg + pi(bits) * (2 * j) as u32)) / k;
        let (s, c) = th.sin_cos(Float::new(bits));
        let x = BigComplex::new(c * &rho, s * &rho);
        let cand = x.scale(&rm1).scale_f64(-1.0);
        let gap = (&cand - &cont).abs_f64() / cand.abs_f64();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, cand));
        }
    }
    let (gap, c) = best.expect("k ≥ 1 roots");
    if gap > 1e-4 {
        return Err(Error::Numerical(format!(
            "dominant balance and continuation disagree on C₊ (relative gap {gap:.3e})"
        )));
    }
    Ok((c, gap))
}

/// Trigonometric constants Ĉ¹, Ĉ² by continuation.
pub fn trig_constants(sep: &SeparatrixInfo, bits: u32) -> Result<TrigConstants> {
    let m = sep.potential.degree();
    let s = Float::with_val(bits, 2.0 / m as f64);
    let c1 = singular_limit(bits, &sep.a, &s, m as i64, |u| Ok(evaluate_complex(sep, u, 1e-4)?.0.cos()))?;
    let c2 = singular_limit(bits, &sep.a, &s, m as i64, |u| Ok(evaluate_complex(sep, u, 1e-4)?.0.sin()))?;
    Ok(TrigConstants { c1, c2, m })
}

/// Catalog entry when available, the numeric pipeline otherwise.
pub fn analyze_separatrix(potential: &Potential, bits: u32) -> Result<SeparatrixInfo> {
    if let Some(info) = catalog_lookup(potential, bits) {
        return Ok(info);
    }
    numeric_separatrix(potential, bits)
}

/// Series, Domb–Sykes fit, C₊ by balance and continuation.
pub fn numeric_separatrix(potential: &Potential, bits: u32) -> Result<SeparatrixInfo> {
    let series = taylor_at_apex(potential, DEFAULT_SERIES_ORDER, bits)?;
    let fit = match potential.kind {
        Kind::Polynomial => locate_singularity(&series.q, SeriesKind::Position)?,
        Kind::Trigonometric => locate_singularity(&series.p, SeriesKind::Momentum)?,
    };
    let m = potential.degree() as i64;
    match potential.kind {
        Kind::Polynomial => {
            let one = Rational::from_integer(1);
            if fit.r <= one || Rational::from_integer(2) * fit.r / (fit.r - one) != Rational::from_integer(m) {
                return Err(Error::Numerical(format!(
                    "order r = {} inconsistent with potential degree {m}",
                    format_rational(&fit.r)
                )));
            }
        }
        Kind::Trigonometric => {
            if fit.r != Rational::from_integer(1) {
                return Err(Error::Numerical(format!("trigonometric separatrix with r = {} ≠ 1", format_rational(&fit.r))));
            }
        }
    }
    let mut info = SeparatrixInfo {
        a: Float::with_val(bits, fit.a),
        r: fit.r,
        c_plus: BigComplex::zero(bits),
        trig: None,
        source: Source::Numeric,
        apex: series.apex,
        apex_p: series.apex_p,
        potential: potential.clone(),
        c_plus_check: None,
        r_raw: Some(fit.r_raw),
    };
    let (c, gap) = coefficient_cplus(&info, bits)?;
    info.c_plus = c;
    if potential.kind == Kind::Trigonometric {
        let expect = 2.0 / m as f64;
        if (info.c_plus.abs_f64() - expect).abs() > 1e-4 * expect {
            return Err(Error::Numerical(format!(
                "|C₊| = {} differs from 2/M = {expect}",
                info.c_plus.abs_f64()
            )));
        }
        info.trig = Some(trig_constants(&info, bits)?);
    } else {
        info.c_plus_check = Some(gap);
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BITS: u32 = 128;

    #[test]
    fn duffing_series_matches_sech() {
        let s = taylor_at_apex(&Potential::duffing(), 12, BITS).unwrap();
        // √2 sech u = √2 (1 - u²/2 + 5u⁴/24 - 61u⁶/720 + 277u⁸/8064 - 50521u¹⁰/3628800)
        let e = [1.0, -0.5, 5.0 / 24.0, -61.0 / 720.0, 277.0 / 8064.0, -50521.0 / 3628800.0];
        for (k, ek) in e.iter().enumerate() {
            let c = s.q.coeffs[2 * k].re.to_f64();
            assert!((c - ek * 2f64.sqrt()).abs() < 1e-15, "k={k}: {c}");
            assert!(s.q.coeffs[2 * k + 1].abs_f64() < 1e-30);
        }
    }

    #[test]
    fn series_satisfies_ode() {
        let v = Potential::polynomial(&[(2, -0.5), (3, 0.2), (4, 0.3)]).unwrap();
        let s = taylor_at_apex(&v, 30, BITS).unwrap();
        // q'' + V'(q) = 0 up to truncation, checked at u = 0.1 by comparing q'' with -V'(q)
        let u = BigComplex::from_f64(BITS, 0.1, 0.0);
        let q = s.q.eval(&u).re;
        let qpp = s.q.derive().derive().eval(&u).re;
        let resid = qpp + v.deriv_big(&q);
        assert!(resid.to_f64().abs() < 1e-20, "{}", resid.to_f64());
    }

    #[test]
    fn domb_sykes_on_duffing() {
        let s = taylor_at_apex(&Potential::duffing(), 400, BITS).unwrap();
        let f = locate_singularity(&s.q, SeriesKind::Position).unwrap();
        assert!((f.a - std::f64::consts::FRAC_PI_2).abs() < 1e-6, "{}", f.a);
        assert_eq!(f.r, Rational::from_integer(2));
    }

    #[test]
    fn domb_sykes_on_pendulum_momentum() {
        let s = taylor_at_apex(&Potential::pendulum(), 400, BITS).unwrap();
        assert!((s.apex.to_f64() - std::f64::consts::PI).abs() < 1e-12);
        assert!((s.apex_p.to_f64() - 2.0).abs() < 1e-12);
        let f = locate_singularity(&s.p, SeriesKind::Momentum).unwrap();
        assert!((f.a - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert_eq!(f.r, Rational::from_integer(1));
    }

    #[test]
    fn geometric_series_pole_pair() {
        // 1/(1 + u²/4): poles at ±2i
        let coeffs: Vec<BigComplex> = (0..=300)
            .map(|n| if n % 2 == 0 { BigComplex::from_f64(BITS, (-0.25f64).powi(n / 2), 0.0) } else { BigComplex::zero(BITS) })
            .collect();
        let f = locate_singularity(&PowerSeries::from_coeffs(coeffs), SeriesKind::Position).unwrap();
        assert!((f.a - 2.0).abs() < 1e-9);
        assert!((f.r_raw - 2.0).abs() < 1e-6);
    }

    #[test]
    fn off_axis_singularity_is_rejected() {
        // 1/(1 - u e^{iθ}/2) + conj: singularities at 2e^{∓iθ}
        let th = 1.0f64;
        let coeffs: Vec<BigComplex> =
            (0..=300).map(|n| BigComplex::from_f64(BITS, 2.0 * 0.5f64.powi(n) * (n as f64 * th).cos(), 0.0)).collect();
        let e = locate_singularity(&PowerSeries::from_coeffs(coeffs), SeriesKind::Position).unwrap_err();
        assert!(e.to_string().contains("not purely imaginary"));
    }

    #[test]
    fn catalog_constants() {
        let d = catalog_lookup(&Potential::duffing(), BITS).unwrap();
        assert_eq!(d.r, Rational::from_integer(2));
        assert!((d.a.to_f64() - std::f64::consts::FRAC_PI_2).abs() < 1e-16);
        assert!((d.c_plus.im.to_f64() - 2f64.sqrt()).abs() < 1e-16);
        let p = catalog_lookup(&Potential::pendulum(), BITS).unwrap();
        assert_eq!(p.c_plus.to_c64(), num_complex::Complex64::new(0.0, -2.0));
        let other = Potential::polynomial(&[(2, -0.5), (4, 0.3)]).unwrap();
        assert!(catalog_lookup(&other, BITS).is_none());
    }

    #[test]
    fn closed_forms_satisfy_energy_identity() {
        for (v, cf) in [
            (Potential::duffing(), ClosedForm::Duffing),
            (Potential::pendulum(), ClosedForm::Pendulum),
            (Potential::polynomial(&[(4, -0.25), (6, 1.0 / 6.0)]).unwrap(), ClosedForm::ParabolicSextic),
        ] {
            for u in [(0.3, 0.0), (1.2, 0.5), (-0.7, -0.9)] {
                let uu = BigComplex::from_f64(BITS, u.0, u.1);
                let (q, p) = cf.eval(&uu);
                // p²/2 + V(q) via complex evaluation of V
                let vq = complex_v(&v, &q);
                let e = &(&p * &p).scale_f64(0.5) + &vq;
                // V's coefficients are f64: 1/6 carries a 1e-17 representation error
                assert!(e.abs_f64() < 1e-15, "{cf:?} {u:?}: {:?}", e);
            }
        }
    }

    fn complex_v(v: &Potential, q: &BigComplex) -> BigComplex {
        let bits = q.prec();
        let mut acc = BigComplex::zero(bits);
        match v.kind {
            Kind::Polynomial => {
                for (&k, &c) in &v.coefficients {
                    acc = &acc + &q.powi(k as i64).scale_f64(c);
                }
            }
            Kind::Trigonometric => {
                for (&j, &c) in &v.coefficients {
                    acc = &acc + &q.scale_f64(j as f64).cos().scale_f64(c);
                }
            }
        }
        acc
    }

    #[test]
    fn continuation_matches_closed_form() {
        let d = catalog_lookup(&Potential::duffing(), BITS).unwrap();
        // √2 sech(i) = √2 / cos 1
        let (q, _) = evaluate_complex(&d, &BigComplex::from_f64(BITS, 0.0, 1.0), 1e-3).unwrap();
        assert!((q.re.to_f64() - 2f64.sqrt() / 1f64.cos()).abs() < 1e-14);
        for u in [(0.8, 0.0), (0.4, 1.2), (-1.5, -0.6)] {
            let uu = BigComplex::from_f64(BITS, u.0, u.1);
            let (q, p) = evaluate_complex(&d, &uu, 1e-3).unwrap();
            let (qe, pe) = ClosedForm::Duffing.eval(&uu);
            assert!((&q - &qe).abs_f64() < 1e-28 && (&p - &pe).abs_f64() < 1e-28, "{u:?}");
            let (qc, pc) = evaluate_complex(&d, &uu.conj(), 1e-3).unwrap();
            assert!((&qc - &q.conj()).abs_f64() < 1e-28 && (&pc - &p.conj()).abs_f64() < 1e-28);
        }
        assert!(evaluate_complex(&d, &BigComplex::from_f64(BITS, 0.0, 1.5705), 1e-3).is_err());
    }

    #[test]
    fn pendulum_continuation_matches_closed_form() {
        let p = catalog_lookup(&Potential::pendulum(), BITS).unwrap();
        let uu = BigComplex::from_f64(BITS, 0.5, 1.0);
        let (q, pp) = evaluate_complex(&p, &uu, 1e-3).unwrap();
        let (qe, pe) = ClosedForm::Pendulum.eval(&uu);
        assert!((&q - &qe).abs_f64() < 1e-25 && (&pp - &pe).abs_f64() < 1e-25, "{q:?} {qe:?} {pp:?} {pe:?}");
    }

    #[test]
    fn numeric_duffing_pipeline() {
        let info = numeric_separatrix(&Potential::duffing(), BITS).unwrap();
        assert!((info.a.to_f64() - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert_eq!(info.r, Rational::from_integer(2));
        let c = info.c_plus.to_c64();
        assert!(c.re.abs() < 1e-12 && (c.im - 2f64.sqrt()).abs() < 1e-12, "{c}");
        assert!(info.c_plus_check.unwrap() < 1e-8);
    }

    #[test]
    fn scaled_duffing_balance_matches_continuation() {
        // V = -x²/2 + c x⁴/4 has separatrix √(2/c) sech u, so C₊ = i √(2/c)
        let c = 3.0;
        let v = Potential::polynomial(&[(2, -0.5), (4, c / 4.0)]).unwrap();
        let info = numeric_separatrix(&v, BITS).unwrap();
        let got = info.c_plus.to_c64();
        assert!((got.im - (2.0 / c).sqrt()).abs() < 1e-10 && got.re.abs() < 1e-10, "{got}");
        assert!(info.c_plus_check.unwrap() < 1e-8);
    }

    #[test]
    fn numeric_pendulum_pipeline() {
        let info = numeric_separatrix(&Potential::pendulum(), BITS).unwrap();
        assert_eq!(info.r, Rational::from_integer(1));
        let c = info.c_plus.to_c64();
        assert!((c - num_complex::Complex64::new(0.0, -2.0)).norm() < 1e-8, "{c}");
        let t = info.trig.unwrap();
        assert!((t.c1.to_c64() - num_complex::Complex64::new(2.0, 0.0)).norm() < 1e-6);
        assert!((t.c2.to_c64() - num_complex::Complex64::new(0.0, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn local_expansion_error_is_small() {
        let d = catalog_lookup(&Potential::duffing(), BITS).unwrap();
        for delta in [1e-2, 5e-2, 1e-1] {
            let u = BigComplex::from_f64(BITS, 0.0, std::f64::consts::FRAC_PI_2 - delta);
            let (_, p) = d.eval(&u).unwrap();
            let g = (&BigComplex::from_f64(BITS, 0.0, -delta).powi(2) * &p).to_c64();
            assert!((g - d.c_plus.to_c64()).norm() <= 2.0 * delta);
        }
    }
}
