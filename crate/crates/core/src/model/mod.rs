//! Hamiltonian data model, standing-hypothesis checks and regime
//! classification.
//!
//! The system is `H = y²/2 + V(x) + μ ε^η H1(x, y, t/ε)` with
//! `H1 = Σ a_kl(τ) x^k y^l` (polynomial kind) or
//! `H1 = Σ a_kl(τ) trig_k(x) y^l + a(τ) x` (trigonometric kind).

mod json;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::separatrix::SeparatrixInfo;

pub use json::{model_from_json, model_to_json};

pub type Rational = Ratio<i64>;

pub const MAX_POLY_DEGREE: u32 = 16;
pub const MAX_TRIG_HARMONIC: i32 = 16;

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn rational_to_big(r: &Rational, bits: u32) -> Float {
    let mut x = Float::with_val(bits, *r.numer());
    x /= *r.denom();
    x
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Validation(format!("cannot parse rational '{s}'"));
    if let Some((a, b)) = s.split_once('/') {
        let n: i64 = a.trim().parse().map_err(|_| bad())?;
        let d: i64 = b.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ok(Rational::new(n, d))
    } else if let Ok(n) = s.parse::<i64>() {
        Ok(Rational::from_integer(n))
    } else {
        let v: f64 = s.parse().map_err(|_| bad())?;
        rational_from_f64(v)
    }
}

/// Exact rational for a decimal-valued float (denominator ≤ 10⁶).
pub fn rational_from_f64(v: f64) -> Result<Rational> {
    if !v.is_finite() {
        return Err(Error::Validation(format!("non-finite exponent {v}")));
    }
    for den in [1i64, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 16, 20, 25, 32, 50, 64, 100, 1000, 10_000, 100_000, 1_000_000] {
        let n = (v * den as f64).round();
        if (n / den as f64 - v).abs() <= 1e-12 * v.abs().max(1.0) {
            return Ok(Rational::new(n as i64, den));
        }
    }
    Ratio::<i64>::approximate_float(v).ok_or_else(|| Error::Validation(format!("cannot represent {v} as a rational")))
}

/// Real trigonometric polynomial in τ: Σ_j c_j cos jτ + s_j sin jτ.
/// `mean` is kept only so that a nonzero average can be reported.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FourierSeries {
    pub harmonics: BTreeMap<u32, (f64, f64)>,
    pub mean: f64,
}

impl FourierSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, j: u32, cos: f64, sin: f64) -> Self {
        assert!(j >= 1);
        let e = self.harmonics.entry(j).or_insert((0.0, 0.0));
        e.0 += cos;
        e.1 += sin;
        self
    }

    pub fn sin(j: u32, amp: f64) -> Self {
        Self::new().with(j, 0.0, amp)
    }

    pub fn cos(j: u32, amp: f64) -> Self {
        Self::new().with(j, amp, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.harmonics.values().all(|&(c, s)| c == 0.0 && s == 0.0)
    }

    pub fn has_zero_mean(&self) -> bool {
        self.mean == 0.0
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.mean
            + self
                .harmonics
                .iter()
                .map(|(&j, &(c, s))| c * (j as f64 * tau).cos() + s * (j as f64 * tau).sin())
                .sum::<f64>()
    }

    /// Complex-exponential coefficient of e^{ikτ} as (re, im).
    pub fn exp_coeff(&self, k: i64) -> (f64, f64) {
        if k == 0 {
            return (self.mean, 0.0);
        }
        match self.harmonics.get(&(k.unsigned_abs() as u32)) {
            None => (0.0, 0.0),
            // c cos + s sin = (c - i s)/2 e^{ijτ} + (c + i s)/2 e^{-ijτ}
            Some(&(c, s)) => {
                if k > 0 {
                    (c / 2.0, -s / 2.0)
                } else {
                    (c / 2.0, s / 2.0)
                }
            }
        }
    }

    pub fn max_harmonic(&self) -> u32 {
        self.harmonics.keys().copied().max().unwrap_or(0)
    }

    /// Series of τ ↦ f(τ + c).
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = FourierSeries { harmonics: BTreeMap::new(), mean: self.mean };
        for (&j, &(a, b)) in &self.harmonics {
            let (s, co) = (j as f64 * c).sin_cos();
            // a cos(j(τ+c)) + b sin(j(τ+c))
            out.harmonics.insert(j, (a * co + b * s, b * co - a * s));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Polynomial,
    Trigonometric,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CriticalClass {
    Hyperbolic { lambda: f64 },
    Parabolic { m: u32, v_m: f64 },
    /// V''(0) > 0 or V vanishes identically: not admissible
    Elliptic,
}

/// V(x): polynomial Σ c_k x^k or trigonometric Σ c_j cos jx + s_j sin jx.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    pub kind: Kind,
    pub coefficients: BTreeMap<u32, f64>,
    pub sin_coefficients: BTreeMap<u32, f64>,
}

impl Potential {
    pub fn polynomial(coeffs: &[(u32, f64)]) -> Result<Self> {
        let p = Potential {
            kind: Kind::Polynomial,
            coefficients: coeffs.iter().copied().filter(|c| c.1 != 0.0).collect(),
            sin_coefficients: BTreeMap::new(),
        };
        p.check()?;
        Ok(p)
    }

    pub fn trigonometric(cos: &[(u32, f64)], sin: &[(u32, f64)]) -> Result<Self> {
        let p = Potential {
            kind: Kind::Trigonometric,
            coefficients: cos.iter().copied().filter(|c| c.1 != 0.0).collect(),
            sin_coefficients: sin.iter().copied().filter(|c| c.1 != 0.0).collect(),
        };
        p.check()?;
        Ok(p)
    }

    pub fn duffing() -> Self {
        Self::polynomial(&[(2, -0.5), (4, 0.25)]).unwrap()
    }

    pub fn pendulum() -> Self {
        Self::trigonometric(&[(0, -1.0), (1, 1.0)], &[]).unwrap()
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.coefficients.is_empty() && self.sin_coefficients.is_empty() {
            return Err(Error::Validation("potential has no nonzero coefficients".into()));
        }
        match self.kind {
            Kind::Polynomial => {
                if !self.sin_coefficients.is_empty() {
                    return Err(Error::Validation("sin coefficients only apply to trigonometric potentials".into()));
                }
                if let Some(&d) = self.coefficients.keys().last() {
                    if d > MAX_POLY_DEGREE {
                        return Err(Error::Validation(format!("potential degree {d} exceeds {MAX_POLY_DEGREE}")));
                    }
                }
                if self.coefficients.contains_key(&0) || self.coefficients.contains_key(&1) {
                    return Err(Error::Validation(
                        "origin must be a critical point with V(0) = 0 (no constant or linear term)".into(),
                    ));
                }
            }
            Kind::Trigonometric => {
                if self.coefficients.keys().chain(self.sin_coefficients.keys()).any(|&j| j as i32 > MAX_TRIG_HARMONIC) {
                    return Err(Error::Validation(format!("harmonics above {MAX_TRIG_HARMONIC} unsupported")));
                }
                let v0: f64 = self.coefficients.values().sum();
                let dv0: f64 = self.sin_coefficients.iter().map(|(&j, &s)| j as f64 * s).sum();
                let scale = self.coefficients.values().chain(self.sin_coefficients.values()).fold(0.0f64, |m, v| m.max(v.abs()));
                if v0.abs() > 1e-14 * scale || dv0.abs() > 1e-14 * scale {
                    return Err(Error::Validation("origin must be a critical point with V(0) = 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Degree M: polynomial degree, or highest harmonic for the trig kind.
    pub fn degree(&self) -> u32 {
        let a = self.coefficients.keys().copied().max().unwrap_or(0);
        let b = self.sin_coefficients.keys().copied().max().unwrap_or(0);
        a.max(b)
    }

    pub fn v_infinity(&self) -> f64 {
        match self.kind {
            Kind::Polynomial => self.coefficients.get(&self.degree()).copied().unwrap_or(0.0),
            Kind::Trigonometric => 0.0,
        }
    }

    pub fn second_derivative_at_0(&self) -> f64 {
        match self.kind {
            Kind::Polynomial => 2.0 * self.coefficients.get(&2).copied().unwrap_or(0.0),
            Kind::Trigonometric => -self.coefficients.iter().map(|(&j, &c)| (j * j) as f64 * c).sum::<f64>(),
        }
    }

    pub fn critical_class(&self) -> CriticalClass {
        let v2 = self.second_derivative_at_0();
        if v2 < 0.0 {
            return CriticalClass::Hyperbolic { lambda: (-v2).sqrt() };
        }
        if v2 > 0.0 {
            return CriticalClass::Elliptic;
        }
        match self.kind {
            Kind::Polynomial => match self.coefficients.iter().find(|(&k, _)| k >= 3) {
                Some((&m, &c)) => CriticalClass::Parabolic { m, v_m: c },
                None => CriticalClass::Elliptic,
            },
            Kind::Trigonometric => {
                // lowest nonvanishing Taylor coefficient of V at 0
                for m in 3..=24u32 {
                    let d = self.derivative_at_0(m);
                    if d.abs() > 1e-12 {
                        let fact: f64 = (1..=m).map(|i| i as f64).product();
                        return CriticalClass::Parabolic { m, v_m: d / fact };
                    }
                }
                CriticalClass::Elliptic
            }
        }
    }

    fn derivative_at_0(&self, m: u32) -> f64 {
        // d^m/dx^m cos(jx) at 0 = j^m cos(mπ/2); sin(jx) -> j^m sin(mπ/2)
        let cm = [1.0, 0.0, -1.0, 0.0][(m % 4) as usize];
        let sm = [0.0, 1.0, 0.0, -1.0][(m % 4) as usize];
        self.coefficients.iter().map(|(&j, &c)| c * (j as f64).powi(m as i32) * cm).sum::<f64>()
            + self.sin_coefficients.iter().map(|(&j, &s)| s * (j as f64).powi(m as i32) * sm).sum::<f64>()
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.critical_class() {
            CriticalClass::Hyperbolic { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Polynomial => self.coefficients.iter().map(|(&k, &c)| c * x.powi(k as i32)).sum(),
            Kind::Trigonometric => {
                self.coefficients.iter().map(|(&j, &c)| c * (j as f64 * x).cos()).sum::<f64>()
                    + self.sin_coefficients.iter().map(|(&j, &s)| s * (j as f64 * x).sin()).sum::<f64>()
            }
        }
    }

    pub fn eval_big(&self, x: &Float) -> Float {
        let bits = x.prec();
        let mut acc = Float::new(bits);
        match self.kind {
            Kind::Polynomial => {
                for (&k, &c) in &self.coefficients {
                    let xk = Float::with_val(bits, x.pow_u(k));
                    acc += xk * c;
                }
            }
            Kind::Trigonometric => {
                for (&j, &c) in &self.coefficients {
                    acc += Float::with_val(bits, x * j).cos() * c;
                }
                for (&j, &s) in &self.sin_coefficients {
                    acc += Float::with_val(bits, x * j).sin() * s;
                }
            }
        }
        acc
    }

    pub fn deriv_big(&self, x: &Float) -> Float {
        let bits = x.prec();
        let mut acc = Float::new(bits);
        match self.kind {
            Kind::Polynomial => {
                for (&k, &c) in &self.coefficients {
                    let xk = Float::with_val(bits, x.pow_u(k - 1));
                    acc += xk * (c * k as f64);
                }
            }
            Kind::Trigonometric => {
                for (&j, &c) in &self.coefficients {
                    acc -= Float::with_val(bits, x * j).sin() * (c * j as f64);
                }
                for (&j, &s) in &self.sin_coefficients {
                    acc += Float::with_val(bits, x * j).cos() * (s * j as f64);
                }
            }
        }
        acc
    }
}

trait PowU {
    fn pow_u(&self, k: u32) -> Float;
}

impl PowU for Float {
    fn pow_u(&self, k: u32) -> Float {
        use rug::ops::Pow;
        Float::with_val(self.prec(), Pow::pow(self, k))
    }
}

/// One perturbation term. Polynomial kind: x^k y^l. Trigonometric kind:
/// cos(kx) y^l for k ≥ 0 and sin(|k|x) y^l for k < 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub x_power: i32,
    pub y_power: u32,
    pub series: FourierSeries,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationModel {
    pub kind: Kind,
    pub terms: Vec<Term>,
    /// trigonometric kind only: a(τ)·x
    pub linear: Option<FourierSeries>,
}

impl PerturbationModel {
    pub fn polynomial(terms: Vec<Term>) -> Result<Self> {
        let p = PerturbationModel { kind: Kind::Polynomial, terms, linear: None };
        p.check()?;
        Ok(p)
    }

    pub fn single(k: i32, l: u32, series: FourierSeries) -> Self {
        PerturbationModel::polynomial(vec![Term { x_power: k, y_power: l, series }]).unwrap()
    }

    pub(crate) fn check(&self) -> Result<()> {
        for t in &self.terms {
            match self.kind {
                Kind::Polynomial => {
                    if t.x_power < 0 {
                        return Err(Error::Validation(format!("negative x power {} in polynomial perturbation", t.x_power)));
                    }
                    if t.x_power as u32 + t.y_power > MAX_POLY_DEGREE {
                        return Err(Error::Validation(format!(
                            "term x^{} y^{} exceeds total degree {MAX_POLY_DEGREE}",
                            t.x_power, t.y_power
                        )));
                    }
                }
                Kind::Trigonometric => {
                    if t.x_power.abs() > MAX_TRIG_HARMONIC || t.y_power > MAX_POLY_DEGREE {
                        return Err(Error::Validation("trigonometric term outside supported range".into()));
                    }
                }
            }
        }
        if self.kind == Kind::Polynomial && self.linear.is_some() {
            return Err(Error::Validation("linear a(τ)x term is only used with the trigonometric kind".into()));
        }
        Ok(())
    }

    pub fn active_terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| !t.series.is_zero())
    }

    pub fn is_empty(&self) -> bool {
        self.active_terms().next().is_none() && self.linear.as_ref().is_none_or(|s| s.is_zero())
    }

    /// n = min (k + l) over active terms (polynomial kind).
    pub fn order_n(&self) -> Option<u32> {
        self.active_terms().map(|t| t.x_power.unsigned_abs() + t.y_power).min()
    }

    pub fn max_degree_n(&self) -> Option<u32> {
        self.active_terms().map(|t| t.x_power.unsigned_abs() + t.y_power).max()
    }

    pub fn depends_on_y(&self) -> bool {
        self.active_terms().any(|t| t.y_power > 0)
    }

    pub fn max_harmonic(&self) -> u32 {
        self.active_terms()
            .map(|t| t.series.max_harmonic())
            .chain(self.linear.iter().map(|s| s.max_harmonic()))
            .max()
            .unwrap_or(0)
    }

    /// Same perturbation with every series shifted in τ.
    pub fn shifted(&self, c: f64) -> Self {
        PerturbationModel {
            kind: self.kind,
            terms: self
                .terms
                .iter()
                .map(|t| Term { x_power: t.x_power, y_power: t.y_power, series: t.series.shifted(c) })
                .collect(),
            linear: self.linear.as_ref().map(|s| s.shifted(c)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub name: String,
    pub potential: Potential,
    pub perturbation: PerturbationModel,
    pub eta: Rational,
    pub mu: f64,
}

impl SystemModel {
    pub fn new(name: &str, potential: Potential, perturbation: PerturbationModel, eta: Rational, mu: f64) -> Result<Self> {
        if eta < Rational::zero() {
            return Err(Error::Validation(format!("eta must be ≥ 0, got {}", format_rational(&eta))));
        }
        if !mu.is_finite() {
            return Err(Error::Validation("mu must be finite".into()));
        }
        if potential.kind != perturbation.kind {
            return Err(Error::Validation("potential and perturbation kinds differ".into()));
        }
        potential.check()?;
        perturbation.check()?;
        Ok(SystemModel { name: name.to_string(), potential, perturbation, eta, mu })
    }

    /// Duffing oscillator with H1 = x^n sin τ.
    pub fn duffing_power(n: u32, eta: i64, mu: f64) -> Self {
        SystemModel::new(
            &format!("duffing-x{n}-sin"),
            Potential::duffing(),
            PerturbationModel::single(n as i32, 0, FourierSeries::sin(1, 1.0)),
            Rational::from_integer(eta),
            mu,
        )
        .unwrap()
    }

    /// Duffing with H1 = x^4 sin τ + λ x² y cos τ.
    pub fn duffing_lambda(lambda: f64, eta: i64, mu: f64) -> Self {
        let mut terms = vec![Term { x_power: 4, y_power: 0, series: FourierSeries::sin(1, 1.0) }];
        if lambda != 0.0 {
            terms.push(Term { x_power: 2, y_power: 1, series: FourierSeries::cos(1, lambda) });
        }
        SystemModel::new(
            "duffing-lambda",
            Potential::duffing(),
            PerturbationModel::polynomial(terms).unwrap(),
            Rational::from_integer(eta),
            mu,
        )
        .unwrap()
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        let mut m = self.clone();
        m.mu = mu;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisFlag {
    pub name: String,
    pub passed: bool,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    RegularAboveStar,
    RegularEtaZeroEllBelow2r,
    SingularEllAbove2r,
    SingularEllEquals2r,
    BelowSingularOutOfScope,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeReport {
    pub ell: Rational,
    pub r: Rational,
    pub eta_star: Rational,
    pub mu_hat_exponent: Rational,
    pub regime: Regime,
    pub hypothesis_flags: Vec<HypothesisFlag>,
}

impl RegimeReport {
    pub fn all_passed(&self) -> bool {
        self.hypothesis_flags.iter().all(|f| f.passed)
    }
}

fn flag(name: &str, passed: bool, message: impl Into<String>) -> HypothesisFlag {
    HypothesisFlag { name: name.into(), passed, message: message.into() }
}

/// Checks the standing hypotheses that do not need the separatrix.
pub fn validate_hypotheses(model: &SystemModel) -> Vec<HypothesisFlag> {
    let mut flags = Vec::new();
    let class = model.potential.critical_class();
    flags.push(match &class {
        CriticalClass::Hyperbolic { lambda } => flag("critical_point", true, format!("hyperbolic critical point, lambda = {lambda}")),
        CriticalClass::Parabolic { m, v_m } => flag("critical_point", true, format!("parabolic critical point, m = {m}, v_m = {v_m}")),
        CriticalClass::Elliptic => flag("critical_point", false, "origin is not a hyperbolic or parabolic critical point"),
    });
    flags.push(flag("separatrix", true, "separatrix structure is established by the separatrix analysis"));

    let mut bad = Vec::new();
    for t in &model.perturbation.terms {
        if !t.series.has_zero_mean() {
            bad.push(format!("term ({}, {}) has mean {}", t.x_power, t.y_power, t.series.mean));
        }
    }
    if let Some(s) = &model.perturbation.linear {
        if !s.has_zero_mean() {
            bad.push(format!("linear term has mean {}", s.mean));
        }
    }
    flags.push(if bad.is_empty() {
        flag("zero_mean", true, "all Fourier series have zero mean")
    } else {
        flag("zero_mean", false, bad.join("; "))
    });

    let n = model.perturbation.order_n();
    flags.push(match (&class, model.perturbation.kind, n) {
        (_, _, None) => flag("perturbation_order", model.perturbation.linear.is_some(), "no polynomial terms"),
        (CriticalClass::Hyperbolic { .. }, Kind::Polynomial, Some(n)) => {
            flag("perturbation_order", n >= 1, format!("order n = {n} (needs n ≥ 1)"))
        }
        (CriticalClass::Parabolic { m, .. }, Kind::Polynomial, Some(n)) => flag(
            "perturbation_order",
            2 * n as i64 - 2 >= *m as i64,
            format!("2n - 2 = {} vs m = {m}", 2 * n as i64 - 2),
        ),
        (_, Kind::Trigonometric, Some(_)) => flag("perturbation_order", true, "trigonometric perturbation"),
        (CriticalClass::Elliptic, _, Some(_)) => flag("perturbation_order", false, "needs a hyperbolic or parabolic critical point"),
    });
    flags
}

/// Order ℓ of the singularity of H1 on the separatrix.
pub fn perturbation_order_ell(p: &PerturbationModel, r: Rational, m_degree: u32) -> Result<Rational> {
    if p.is_empty() {
        return Err(Error::Validation("no perturbation terms".into()));
    }
    let mut best: Option<Rational> = None;
    let mut take = |v: Rational| {
        best = Some(match best {
            Some(b) if b >= v => b,
            _ => v,
        })
    };
    match p.kind {
        Kind::Polynomial => {
            for t in p.active_terms() {
                let k = Rational::from_integer(t.x_power as i64);
                let l = Rational::from_integer(t.y_power as i64);
                take(k * (r - Rational::from_integer(1)) + l * r);
            }
        }
        Kind::Trigonometric => {
            if m_degree == 0 {
                return Err(Error::Validation("trigonometric potential of degree 0".into()));
            }
            for t in p.active_terms() {
                let k = Rational::from_integer(2 * t.x_power.abs() as i64) / Rational::from_integer(m_degree as i64);
                take(k + Rational::from_integer(t.y_power as i64));
            }
            if p.linear.as_ref().is_some_and(|s| !s.is_zero()) {
                take(Rational::zero());
            }
        }
    }
    best.ok_or_else(|| Error::Validation("no perturbation terms".into()))
}

pub fn eta_star(ell: Rational, r: Rational) -> Rational {
    let d = ell - r * 2;
    if d.is_positive() {
        d
    } else {
        Rational::zero()
    }
}

/// Regime from exact (η, ℓ, r).
pub fn regime_of(eta: Rational, ell: Rational, r: Rational) -> Result<Regime> {
    if eta.is_negative() {
        return Err(Error::Validation("eta must be ≥ 0".into()));
    }
    let d = ell - r * 2;
    let star = eta_star(ell, r);
    Ok(if eta > star {
        Regime::RegularAboveStar
    } else if eta.is_zero() && d.is_negative() {
        Regime::RegularEtaZeroEllBelow2r
    } else if d.is_positive() && eta == d {
        Regime::SingularEllAbove2r
    } else if d.is_zero() && eta.is_zero() {
        Regime::SingularEllEquals2r
    } else {
        Regime::BelowSingularOutOfScope
    })
}

pub fn classify_regime(model: &SystemModel, sep: &SeparatrixInfo) -> Result<RegimeReport> {
    if model.eta.is_negative() {
        return Err(Error::Validation("eta must be ≥ 0".into()));
    }
    let r = sep.r;
    let ell = perturbation_order_ell(&model.perturbation, r, model.potential.degree())?;
    let star = eta_star(ell, r);
    let regime = regime_of(model.eta, ell, r)?;
    let mut flags = validate_hypotheses(model);
    flags.push(flag(
        "eta_range",
        regime != Regime::BelowSingularOutOfScope,
        format!("eta = {} vs eta* = {}", format_rational(&model.eta), format_rational(&star)),
    ));
    Ok(RegimeReport {
        ell,
        r,
        eta_star: star,
        mu_hat_exponent: model.eta - (ell - r * 2),
        regime,
        hypothesis_flags: flags,
    })
}

/// μ̂ = μ ε^{η − (ℓ − 2r)}.
pub fn mu_hat(mu: f64, eps: f64, eta: Rational, ell: Rational, r: Rational) -> f64 {
    let e = eta - (ell - r * 2);
    if e.is_zero() {
        mu
    } else {
        mu * eps.powf(rational_to_f64(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64) -> Rational {
        Rational::from_integer(n)
    }

    #[test]
    fn duffing_hypotheses_pass() {
        let m = SystemModel::duffing_power(4, 0, 1.0);
        let f = validate_hypotheses(&m);
        assert!(f.iter().all(|x| x.passed), "{f:?}");
        assert_eq!(m.potential.lambda(), Some(1.0));
    }

    #[test]
    fn nonzero_mean_fails_hp3() {
        let mut s = FourierSeries::sin(1, 1.0);
        s.mean = 0.3;
        let m = SystemModel::new(
            "bad",
            Potential::duffing(),
            PerturbationModel::single(2, 0, s),
            q(0),
            1.0,
        )
        .unwrap();
        let f = validate_hypotheses(&m);
        assert!(!f.iter().find(|x| x.name == "zero_mean").unwrap().passed);
    }

    #[test]
    fn parabolic_cubic_with_order_two_fails_hp42() {
        let v = Potential::polynomial(&[(3, 1.0)]).unwrap();
        assert_eq!(v.critical_class(), CriticalClass::Parabolic { m: 3, v_m: 1.0 });
        let m = SystemModel::new("p", v, PerturbationModel::single(2, 0, FourierSeries::sin(1, 1.0)), q(0), 1.0).unwrap();
        let f = validate_hypotheses(&m);
        let h = f.iter().find(|x| x.name == "perturbation_order").unwrap();
        assert!(!h.passed);
    }

    #[test]
    fn ell_examples() {
        let r = q(2);
        for n in 1..=5 {
            let m = SystemModel::duffing_power(n, 0, 1.0);
            assert_eq!(perturbation_order_ell(&m.perturbation, r, 4).unwrap(), q(n as i64));
        }
        let m = SystemModel::duffing_lambda(1.0, 0, 1.0);
        assert_eq!(perturbation_order_ell(&m.perturbation, r, 4).unwrap(), q(4));
        let trig = PerturbationModel { kind: Kind::Trigonometric, terms: vec![], linear: Some(FourierSeries::sin(1, 1.0)) };
        assert_eq!(perturbation_order_ell(&trig, q(1), 1).unwrap(), q(0));
        let empty = PerturbationModel { kind: Kind::Polynomial, terms: vec![], linear: None };
        assert!(perturbation_order_ell(&empty, r, 4).unwrap_err().to_string().contains("no perturbation terms"));
    }

    #[test]
    fn regime_examples() {
        let r = q(2);
        assert_eq!(regime_of(q(0), q(4), r).unwrap(), Regime::SingularEllEquals2r);
        assert_eq!(regime_of(q(0), q(1), r).unwrap(), Regime::RegularEtaZeroEllBelow2r);
        assert_eq!(regime_of(q(1), q(6), r).unwrap(), Regime::BelowSingularOutOfScope);
        assert_eq!(regime_of(q(2), q(6), r).unwrap(), Regime::SingularEllAbove2r);
        assert_eq!(regime_of(q(2), q(1), r).unwrap(), Regime::RegularAboveStar);
        assert!(regime_of(q(-1), q(1), r).is_err());
    }

    #[test]
    fn mu_hat_examples() {
        assert_eq!(mu_hat(1.0, 0.3, q(2), q(6), q(2)), 1.0);
        assert!((mu_hat(0.5, 0.1, q(2), q(4), q(2)) - 0.005).abs() < 1e-15);
        assert_eq!(mu_hat(0.7, 0.05, q(0), q(4), q(2)), 0.7);
    }

    #[test]
    fn exp_coeff_reconstructs_series() {
        let s = FourierSeries::new().with(1, 0.3, -0.2).with(3, 0.0, 1.1);
        for tau in [0.0, 0.4, 2.2] {
            let mut v = 0.0;
            for k in -3i64..=3 {
                let (re, im) = s.exp_coeff(k);
                let z = num_complex::Complex64::new(re, im) * num_complex::Complex64::new(0.0, k as f64 * tau).exp();
                v += z.re;
            }
            assert!((v - s.eval(tau)).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn eta_star_nonnegative_and_zero_iff_ell_le_2r(ln in 0i64..40, ld in 1i64..6, rn in 2i64..12, rd in 1i64..4) {
            let ell = Rational::new(ln, ld);
            let r = Rational::new(rn, rd);
            let s = eta_star(ell, r);
            prop_assert!(s >= Rational::zero());
            prop_assert_eq!(s.is_zero(), ell <= r * 2);
        }

        #[test]
        fn ell_ignores_zero_series_terms(k in 0i32..6, l in 0u32..4) {
            let base = SystemModel::duffing_power(3, 0, 1.0).perturbation;
            let mut extra = base.clone();
            extra.terms.push(Term { x_power: k + 5, y_power: l, series: FourierSeries::new() });
            prop_assert_eq!(
                perturbation_order_ell(&base, q(2), 4).unwrap(),
                perturbation_order_ell(&extra, q(2), 4).unwrap()
            );
        }

        #[test]
        fn mu_hat_multiplicative(mu1 in -2.0f64..2.0, mu2 in -2.0f64..2.0, eps in 0.01f64..1.0) {
            let (e, l, r) = (q(3), q(4), q(2));
            let a = mu_hat(mu1 * mu2, eps, e, l, r);
            let b = mu1 * mu_hat(mu2, eps, e, l, r);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn regime_consistent_with_eta_star(ln in 0i64..20, eta in 0i64..8) {
            let ell = q(ln);
            let r = q(2);
            let reg = regime_of(q(eta), ell, r).unwrap();
            let star = eta_star(ell, r);
            prop_assert_eq!(reg == Regime::RegularAboveStar, q(eta) > star);
            prop_assert_eq!(reg == Regime::BelowSingularOutOfScope, q(eta) < ell - r * 2);
        }
    }
}
