//! Finite complex Fourier series Σ c_m e^{imτ} at working precision.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rug::Float;

use crate::model::FourierSeries;
use crate::numerics::BigComplex;

#[derive(Clone, Debug, PartialEq)]
pub struct CFourier {
    pub coeffs: BTreeMap<i64, BigComplex>,
    pub bits: u32,
}

impl CFourier {
    pub fn zero(bits: u32) -> Self {
        CFourier { coeffs: BTreeMap::new(), bits }
    }

    pub fn from_series(s: &FourierSeries, bits: u32) -> Self {
        let mut out = CFourier::zero(bits);
        if s.mean != 0.0 {
            out.coeffs.insert(0, BigComplex::from_f64(bits, s.mean, 0.0));
        }
        for &j in s.harmonics.keys() {
            for k in [j as i64, -(j as i64)] {
                let (re, im) = s.exp_coeff(k);
                out.coeffs.insert(k, BigComplex::from_f64(bits, re, im));
            }
        }
        out.prune()
    }

    fn prune(mut self) -> Self {
        self.coeffs.retain(|_, v| !v.is_zero());
        self
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &o.coeffs {
            let e = out.coeffs.entry(*k).or_insert_with(|| BigComplex::zero(self.bits));
            *e = &*e + v;
        }
        out.prune()
    }

    pub fn scale(&self, w: &BigComplex) -> Self {
        CFourier { coeffs: self.coeffs.iter().map(|(k, v)| (*k, v * w)).collect(), bits: self.bits }.prune()
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = CFourier::zero(self.bits);
        for (i, a) in &self.coeffs {
            for (j, b) in &o.coeffs {
                let e = out.coeffs.entry(i + j).or_insert_with(|| BigComplex::zero(self.bits));
                *e = &*e + &(a * b);
            }
        }
        out.prune()
    }

    pub fn mean(&self) -> BigComplex {
        self.coeffs.get(&0).cloned().unwrap_or_else(|| BigComplex::zero(self.bits))
    }

    /// Zero-mean antiderivative in τ (any mean of self is dropped).
    pub fn antiderivative(&self) -> Self {
        let mut out = CFourier::zero(self.bits);
        for (k, v) in &self.coeffs {
            if *k != 0 {
                // c e^{ikτ} -> c/(ik) e^{ikτ}
                let d = BigComplex::new(Float::new(self.bits), Float::with_val(self.bits, *k));
                out.coeffs.insert(*k, v.div(&d));
            }
        }
        out
    }

    pub fn derivative(&self) -> Self {
        let mut out = CFourier::zero(self.bits);
        for (k, v) in &self.coeffs {
            let d = BigComplex::new(Float::new(self.bits), Float::with_val(self.bits, *k));
            out.coeffs.insert(*k, v * &d);
        }
        out.prune()
    }

    pub fn eval(&self, tau: f64) -> Complex64 {
        self.coeffs.iter().map(|(k, v)| v.to_c64() * Complex64::new(0.0, *k as f64 * tau).exp()).sum()
    }

    pub fn coeff_c64(&self, k: i64) -> Complex64 {
        self.coeffs.get(&k).map(|v| v.to_c64()).unwrap_or_default()
    }

    pub fn max_harmonic(&self) -> i64 {
        self.coeffs.keys().map(|k| k.abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.coeffs
                .iter()
                .map(|(k, v)| {
                    let c = v.to_c64();
                    (k.to_string(), serde_json::json!([c.re, c.im]))
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(h: &[(u32, f64, f64)]) -> FourierSeries {
        h.iter().fold(FourierSeries::new(), |s, &(j, c, si)| s.with(j, c, si))
    }

    proptest! {
        #[test]
        fn antiderivative_inverts_derivative(c in prop::collection::vec((1u32..5, -2.0f64..2.0, -2.0f64..2.0), 1..4)) {
            let f = CFourier::from_series(&series(&c), 96);
            let back = f.antiderivative().derivative();
            for tau in [0.0, 0.7, 2.9] {
                prop_assert!((back.eval(tau) - f.eval(tau)).norm() < 1e-12);
            }
            prop_assert!(f.antiderivative().mean().is_zero());
        }

        #[test]
        fn product_matches_pointwise(c in prop::collection::vec((1u32..4, -2.0f64..2.0, -2.0f64..2.0), 1..3),
                                     d in prop::collection::vec((1u32..4, -2.0f64..2.0, -2.0f64..2.0), 1..3),
                                     tau in 0.0f64..6.3) {
            let f = CFourier::from_series(&series(&c), 96);
            let g = CFourier::from_series(&series(&d), 96);
            prop_assert!((f.mul(&g).eval(tau) - f.eval(tau) * g.eval(tau)).norm() < 1e-11);
        }
    }

    #[test]
    fn real_series_roundtrip() {
        let s = series(&[(1, 0.3, -1.0), (2, 0.0, 0.5)]);
        let f = CFourier::from_series(&s, 96);
        for tau in [0.1, 1.3] {
            assert!((f.eval(tau).re - s.eval(tau)).abs() < 1e-14 && f.eval(tau).im.abs() < 1e-14);
        }
    }
}
