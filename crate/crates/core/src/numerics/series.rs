//! Truncated power series with multiprecision complex coefficients.

use rug::Float;

use super::big::{BigComplex, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct PowerSeries {
    pub coeffs: Vec<BigComplex>,
}

impl PowerSeries {
    /// Zero series of the given truncation order (coefficients 0..=order).
    pub fn zero(order: usize, bits: u32) -> Self {
        PowerSeries { coeffs: vec![BigComplex::zero(bits); order + 1] }
    }

    pub fn from_coeffs(coeffs: Vec<BigComplex>) -> Self {
        assert!(!coeffs.is_empty());
        PowerSeries { coeffs }
    }

    pub fn from_real(coeffs: &[Float]) -> Self {
        PowerSeries { coeffs: coeffs.iter().map(BigComplex::from_real).collect() }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn prec(&self) -> u32 {
        self.coeffs[0].prec()
    }

    fn common_order(&self, o: &Self) -> usize {
        self.order().min(o.order())
    }

    pub fn add(&self, o: &Self) -> Self {
        let n = self.common_order(o);
        PowerSeries { coeffs: (0..=n).map(|i| &self.coeffs[i] + &o.coeffs[i]).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let n = self.common_order(o);
        PowerSeries { coeffs: (0..=n).map(|i| &self.coeffs[i] - &o.coeffs[i]).collect() }
    }

    pub fn scale(&self, k: &BigComplex) -> Self {
        PowerSeries { coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.common_order(o);
        let bits = self.prec();
        let mut out = Vec::with_capacity(n + 1);
        let mut tmp = BigComplex::zero(bits);
        for k in 0..=n {
            let mut acc = BigComplex::zero(bits);
            for j in 0..=k {
                acc.mul_acc(&self.coeffs[j], &o.coeffs[k - j], &mut tmp);
            }
            out.push(acc);
        }
        PowerSeries { coeffs: out }
    }

    /// Formal derivative; the result has order one less.
    pub fn derive(&self) -> Self {
        if self.order() == 0 {
            return PowerSeries::zero(0, self.prec());
        }
        PowerSeries {
            coeffs: (1..=self.order()).map(|k| self.coeffs[k].scale_f64(k as f64)).collect(),
        }
    }

    /// self ∘ g for g with zero constant term (Horner in series arithmetic).
    pub fn compose(&self, g: &Self) -> Self {
        assert!(g.coeffs[0].is_zero(), "inner series must vanish at 0");
        let n = self.common_order(g);
        let bits = self.prec();
        let g = PowerSeries { coeffs: g.coeffs[..=n].to_vec() };
        let mut acc = PowerSeries::zero(n, bits);
        for c in self.coeffs[..=n].iter().rev() {
            acc = acc.mul(&g);
            acc.coeffs[0] = &acc.coeffs[0] + c;
        }
        acc
    }

    pub fn eval(&self, z: &BigComplex) -> BigComplex {
        let mut acc = self.coeffs[self.order()].clone();
        for c in self.coeffs[..self.order()].iter().rev() {
            acc = &(&acc * z) + c;
        }
        acc
    }
}
