//! Multiprecision real and complex scalars.
//!
//! `BigReal` is an MPFR float. `BigComplex` is a plain pair of them; only the
//! handful of elementary functions the library needs are provided.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rug::float::Constant;
use rug::ops::{NegAssign, Pow};
use rug::{Assign, Float};

use crate::error::{Error, Result};

pub type BigReal = Float;

pub const DEFAULT_BITS: u32 = 128;
pub const MIN_BITS: u32 = 53;
pub const MAX_BITS: u32 = 1024;

/// Working precision from `SEPSPLIT_BITS`, or the default.
pub fn default_bits() -> u32 {
    match std::env::var("SEPSPLIT_BITS") {
        Ok(s) => match s.trim().parse::<u32>() {
            Ok(b) if (MIN_BITS..=MAX_BITS).contains(&b) => b,
            _ => DEFAULT_BITS,
        },
        Err(_) => DEFAULT_BITS,
    }
}

pub fn check_bits(bits: u32) -> Result<u32> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(bits)
    } else {
        Err(Error::Validation(format!(
            "precision {bits} bits outside supported range {MIN_BITS}..={MAX_BITS}"
        )))
    }
}

/// Integration tolerance tied to precision.
pub fn tol_int_log2(bits: u32) -> f64 {
    -((bits as f64) - 16.0)
}

pub fn real(bits: u32, v: f64) -> Float {
    Float::with_val(bits, v)
}

pub fn real_ratio(bits: u32, num: i64, den: i64) -> Float {
    let mut x = Float::with_val(bits, num);
    x /= den;
    x
}

pub fn pi(bits: u32) -> Float {
    Float::with_val(bits, Constant::Pi)
}

/// log2 |x|, -inf for zero.
pub fn log2_abs(x: &Float) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    if !x.is_finite() {
        return f64::INFINITY;
    }
    let (m, e) = x.to_f64_exp();
    m.abs().log2() + e as f64
}

#[derive(Clone, PartialEq)]
pub struct BigComplex {
    pub re: Float,
    pub im: Float,
}

impl fmt::Debug for BigComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:e} + {:e}i)", self.re.to_f64(), self.im.to_f64())
    }
}

impl BigComplex {
    pub fn new(re: Float, im: Float) -> Self {
        BigComplex { re, im }
    }

    pub fn zero(bits: u32) -> Self {
        BigComplex::new(Float::new(bits), Float::new(bits))
    }

    pub fn one(bits: u32) -> Self {
        BigComplex::new(Float::with_val(bits, 1), Float::new(bits))
    }

    pub fn i(bits: u32) -> Self {
        BigComplex::new(Float::new(bits), Float::with_val(bits, 1))
    }

    pub fn from_f64(bits: u32, re: f64, im: f64) -> Self {
        BigComplex::new(Float::with_val(bits, re), Float::with_val(bits, im))
    }

    pub fn from_real(x: &Float) -> Self {
        BigComplex::new(x.clone(), Float::new(x.prec()))
    }

    pub fn from_c64(bits: u32, z: Complex64) -> Self {
        Self::from_f64(bits, z.re, z.im)
    }

    pub fn prec(&self) -> u32 {
        self.re.prec()
    }

    pub fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn conj(&self) -> Self {
        BigComplex::new(self.re.clone(), Float::with_val(self.prec(), -&self.im))
    }

    pub fn norm_sqr(&self) -> Float {
        let mut n = Float::with_val(self.prec(), self.re.square_ref());
        n += Float::with_val(self.prec(), self.im.square_ref());
        n
    }

    pub fn abs(&self) -> Float {
        Float::with_val(self.prec(), self.re.hypot_ref(&self.im))
    }

    pub fn arg(&self) -> Float {
        Float::with_val(self.prec(), self.im.atan2_ref(&self.re))
    }

    pub fn abs_f64(&self) -> f64 {
        self.abs().to_f64()
    }

    pub fn log2_abs(&self) -> f64 {
        let a = log2_abs(&self.re);
        let b = log2_abs(&self.im);
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + 0.5 * (1.0 + 2f64.powf(2.0 * (a.min(b) - m))).log2()
    }

    pub fn scale(&self, s: &Float) -> Self {
        let p = self.prec();
        BigComplex::new(Float::with_val(p, &self.re * s), Float::with_val(p, &self.im * s))
    }

    pub fn scale_f64(&self, s: f64) -> Self {
        let p = self.prec();
        BigComplex::new(Float::with_val(p, &self.re * s), Float::with_val(p, &self.im * s))
    }

    /// Multiply by i^n.
    pub fn mul_i_pow(&self, n: i64) -> Self {
        let p = self.prec();
        match n.rem_euclid(4) {
            0 => self.clone(),
            1 => BigComplex::new(Float::with_val(p, -&self.im), self.re.clone()),
            2 => -self.clone(),
            _ => BigComplex::new(self.im.clone(), Float::with_val(p, -&self.re)),
        }
    }

    pub fn recip(&self) -> Self {
        let n = self.norm_sqr();
        let p = self.prec();
        BigComplex::new(Float::with_val(p, &self.re / &n), Float::with_val(p, -&self.im) / &n)
    }

    pub fn div(&self, o: &Self) -> Self {
        self * &o.recip()
    }

    pub fn exp(&self) -> Self {
        let p = self.prec();
        let m = Float::with_val(p, self.re.exp_ref());
        let (s, c) = self.im.clone().sin_cos(Float::new(p));
        BigComplex::new(Float::with_val(p, &m * &c), Float::with_val(p, &m * &s))
    }

    /// Principal logarithm.
    pub fn ln(&self) -> Self {
        let p = self.prec();
        BigComplex::new(Float::with_val(p, self.abs().ln_ref()), self.arg())
    }

    /// Principal power z^w with real exponent.
    pub fn powf(&self, w: &Float) -> Self {
        if self.is_zero() {
            return BigComplex::zero(self.prec());
        }
        self.ln().scale(w).exp()
    }

    pub fn powi(&self, n: i64) -> Self {
        let p = self.prec();
        if n == 0 {
            return BigComplex::one(p);
        }
        let mut base = if n < 0 { self.recip() } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = BigComplex::one(p);
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn sqrt(&self) -> Self {
        let p = self.prec();
        self.powf(&Float::with_val(p, 0.5))
    }

    pub fn sin(&self) -> Self {
        let p = self.prec();
        let (s, c) = self.re.clone().sin_cos(Float::new(p));
        let sh = Float::with_val(p, self.im.sinh_ref());
        let ch = Float::with_val(p, self.im.cosh_ref());
        BigComplex::new(s * ch, c * sh)
    }

    pub fn cos(&self) -> Self {
        let p = self.prec();
        let (s, c) = self.re.clone().sin_cos(Float::new(p));
        let sh = Float::with_val(p, self.im.sinh_ref());
        let ch = Float::with_val(p, self.im.cosh_ref());
        BigComplex::new(c * ch, -(s * sh))
    }

    pub fn sinh(&self) -> Self {
        let p = self.prec();
        let (s, c) = self.im.clone().sin_cos(Float::new(p));
        let sh = Float::with_val(p, self.re.sinh_ref());
        let ch = Float::with_val(p, self.re.cosh_ref());
        BigComplex::new(sh * c, ch * s)
    }

    pub fn cosh(&self) -> Self {
        let p = self.prec();
        let (s, c) = self.im.clone().sin_cos(Float::new(p));
        let sh = Float::with_val(p, self.re.sinh_ref());
        let ch = Float::with_val(p, self.re.cosh_ref());
        BigComplex::new(ch * c, sh * s)
    }

    /// Principal arctangent, (i/2)[ln(1 - iz) - ln(1 + iz)].
    pub fn atan(&self) -> Self {
        let p = self.prec();
        let iz = self.mul_i_pow(1);
        let one = BigComplex::one(p);
        let a = (&one - &iz).ln();
        let b = (&one + &iz).ln();
        (&a - &b).mul_i_pow(1).scale_f64(0.5)
    }

    pub fn set_prec(&mut self, bits: u32) {
        self.re.set_prec(bits);
        self.im.set_prec(bits);
    }
}

impl<'a> Add<&'a BigComplex> for &'a BigComplex {
    type Output = BigComplex;
    fn add(self, o: &BigComplex) -> BigComplex {
        let p = self.prec();
        BigComplex::new(Float::with_val(p, &self.re + &o.re), Float::with_val(p, &self.im + &o.im))
    }
}

impl<'a> Sub<&'a BigComplex> for &'a BigComplex {
    type Output = BigComplex;
    fn sub(self, o: &BigComplex) -> BigComplex {
        let p = self.prec();
        BigComplex::new(Float::with_val(p, &self.re - &o.re), Float::with_val(p, &self.im - &o.im))
    }
}

impl<'a> Mul<&'a BigComplex> for &'a BigComplex {
    type Output = BigComplex;
    fn mul(self, o: &BigComplex) -> BigComplex {
        let p = self.prec();
        let mut re = Float::with_val(p, &self.re * &o.re);
        re -= Float::with_val(p, &self.im * &o.im);
        let mut im = Float::with_val(p, &self.re * &o.im);
        im += Float::with_val(p, &self.im * &o.re);
        BigComplex::new(re, im)
    }
}

impl Add for BigComplex {
    type Output = BigComplex;
    fn add(self, o: BigComplex) -> BigComplex {
        &self + &o
    }
}

impl Sub for BigComplex {
    type Output = BigComplex;
    fn sub(self, o: BigComplex) -> BigComplex {
        &self - &o
    }
}

impl Mul for BigComplex {
    type Output = BigComplex;
    fn mul(self, o: BigComplex) -> BigComplex {
        &self * &o
    }
}

impl Neg for BigComplex {
    type Output = BigComplex;
    fn neg(self) -> BigComplex {
        BigComplex::new(-self.re, -self.im)
    }
}

/// Gamma function of a positive real, at the precision of `x`.
pub fn gamma(x: &Float) -> Float {
    Float::with_val(x.prec(), x.gamma_ref())
}

/// x^y for real x > 0.
pub fn powr(x: &Float, y: &Float) -> Float {
    Float::with_val(x.prec(), x.pow(y))
}

/// Scalars the Taylor tape can run on.
pub trait Scalar: Clone + fmt::Debug + Send + Sync {
    fn zero_with(prec: u32) -> Self;
    fn from_real(x: &Float) -> Self;
    fn prec(&self) -> u32;
    fn set_zero(&mut self);
    fn set_from(&mut self, o: &Self);
    fn add_in(&mut self, o: &Self);
    fn sub_in(&mut self, o: &Self);
    fn neg_in(&mut self);
    /// self = a * b
    fn mul_into(&mut self, a: &Self, b: &Self);
    /// self += a * b, tmp is scratch
    fn mul_acc(&mut self, a: &Self, b: &Self, tmp: &mut Self);
    fn scale_real(&mut self, r: &Float);
    fn scale_int(&mut self, k: i64);
    fn div_uint(&mut self, k: u64);
    fn mag_log2(&self) -> f64;
    fn sin_cos(&self) -> (Self, Self);
    fn is_exact_zero(&self) -> bool;
}

impl Scalar for Float {
    fn zero_with(prec: u32) -> Self {
        Float::new(prec)
    }
    fn from_real(x: &Float) -> Self {
        x.clone()
    }
    fn prec(&self) -> u32 {
        Float::prec(self)
    }
    fn set_zero(&mut self) {
        self.assign(0);
    }
    fn set_from(&mut self, o: &Self) {
        self.assign(o);
    }
    fn add_in(&mut self, o: &Self) {
        *self += o;
    }
    fn sub_in(&mut self, o: &Self) {
        *self -= o;
    }
    fn neg_in(&mut self) {
        self.neg_assign();
    }
    fn mul_into(&mut self, a: &Self, b: &Self) {
        self.assign(a * b);
    }
    fn mul_acc(&mut self, a: &Self, b: &Self, tmp: &mut Self) {
        tmp.assign(a * b);
        *self += &*tmp;
    }
    fn scale_real(&mut self, r: &Float) {
        *self *= r;
    }
    fn scale_int(&mut self, k: i64) {
        *self *= k;
    }
    fn div_uint(&mut self, k: u64) {
        *self /= k;
    }
    fn mag_log2(&self) -> f64 {
        log2_abs(self)
    }
    fn sin_cos(&self) -> (Self, Self) {
        self.clone().sin_cos(Float::new(Float::prec(self)))
    }
    fn is_exact_zero(&self) -> bool {
        self.is_zero()
    }
}

impl Scalar for BigComplex {
    fn zero_with(prec: u32) -> Self {
        BigComplex::zero(prec)
    }
    fn from_real(x: &Float) -> Self {
        BigComplex::from_real(x)
    }
    fn prec(&self) -> u32 {
        BigComplex::prec(self)
    }
    fn set_zero(&mut self) {
        self.re.assign(0);
        self.im.assign(0);
    }
    fn set_from(&mut self, o: &Self) {
        self.re.assign(&o.re);
        self.im.assign(&o.im);
    }
    fn add_in(&mut self, o: &Self) {
        self.re += &o.re;
        self.im += &o.im;
    }
    fn sub_in(&mut self, o: &Self) {
        self.re -= &o.re;
        self.im -= &o.im;
    }
    fn neg_in(&mut self) {
        self.re.neg_assign();
        self.im.neg_assign();
    }
    fn mul_into(&mut self, a: &Self, b: &Self) {
        let mut t = Float::new(self.prec());
        self.re.assign(&a.re * &b.re);
        t.assign(&a.im * &b.im);
        self.re -= &t;
        self.im.assign(&a.re * &b.im);
        t.assign(&a.im * &b.re);
        self.im += &t;
    }
    fn mul_acc(&mut self, a: &Self, b: &Self, tmp: &mut Self) {
        tmp.re.assign(&a.re * &b.re);
        self.re += &tmp.re;
        tmp.re.assign(&a.im * &b.im);
        self.re -= &tmp.re;
        tmp.im.assign(&a.re * &b.im);
        self.im += &tmp.im;
        tmp.im.assign(&a.im * &b.re);
        self.im += &tmp.im;
    }
    fn scale_real(&mut self, r: &Float) {
        self.re *= r;
        self.im *= r;
    }
    fn scale_int(&mut self, k: i64) {
        self.re *= k;
        self.im *= k;
    }
    fn div_uint(&mut self, k: u64) {
        self.re /= k;
        self.im /= k;
    }
    fn mag_log2(&self) -> f64 {
        self.log2_abs()
    }
    fn sin_cos(&self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn is_exact_zero(&self) -> bool {
        self.is_zero()
    }
}
