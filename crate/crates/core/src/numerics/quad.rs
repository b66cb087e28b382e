//! Adaptive Gauss–Legendre quadrature along piecewise-linear complex paths,
//! plus nested Clenshaw–Curtis rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rug::float::Constant;
use rug::{Assign, Float};

use super::big::{log2_abs, BigComplex};
use crate::error::{Error, Result};

/// Nodes and weights on [-1, 1].
#[derive(Debug)]
pub struct Rule {
    pub nodes: Vec<Float>,
    pub weights: Vec<Float>,
}

type RuleCache = Mutex<HashMap<(usize, u32), Arc<Rule>>>;

fn gl_cache() -> &'static RuleCache {
    static C: OnceLock<RuleCache> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

/// n-point Gauss–Legendre rule at the given precision (cached).
pub fn gauss_legendre(n: usize, bits: u32) -> Arc<Rule> {
    if let Some(r) = gl_cache().lock().unwrap().get(&(n, bits)) {
        return r.clone();
    }
    let wp = bits + 32;
    let pi = Float::with_val(wp, Constant::Pi);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = Float::with_val(wp, (i as f64 - 0.25) / (n as f64 + 0.5));
        x *= &pi;
        x = x.cos();
        let mut dp = Float::new(wp);
        for _ in 0..100 {
            // three-term recurrence for P_n and P_n'
            let mut p0 = Float::with_val(wp, 1);
            let mut p1 = x.clone();
            for k in 2..=n {
                let mut p2 = Float::with_val(wp, &x * &p1);
                p2 *= (2 * k - 1) as u32;
                p2 -= Float::with_val(wp, &p0 * (k - 1) as u32);
                p2 /= k as u32;
                p0 = p1;
                p1 = p2;
            }
            // P_n' = n (x P_n - P_{n-1}) / (x^2 - 1)
            let mut den = Float::with_val(wp, x.square_ref());
            den -= 1;
            dp.assign(&x * &p1);
            dp -= &p0;
            dp *= n as u32;
            dp /= &den;
            let dx = Float::with_val(wp, &p1 / &dp);
            x -= &dx;
            if dx.is_zero() || log2_abs(&dx) < -(wp as f64) + 4.0 {
                break;
            }
        }
        let mut w = Float::with_val(wp, x.square_ref());
        w = Float::with_val(wp, 1) - w;
        w *= Float::with_val(wp, dp.square_ref());
        w = Float::with_val(wp, 2) / w;
        let mut xn = Float::new(bits);
        xn.assign(&x);
        let mut wn = Float::new(bits);
        wn.assign(&w);
        nodes.push(xn);
        weights.push(wn);
    }
    let r = Arc::new(Rule { nodes, weights });
    gl_cache().lock().unwrap().insert((n, bits), r.clone());
    r
}

/// Clenshaw–Curtis rule with n+1 points (n even) on [-1, 1].
pub fn clenshaw_curtis(n: usize, bits: u32) -> Rule {
    assert!(n >= 2 && n % 2 == 0);
    let pi = Float::with_val(bits, Constant::Pi);
    let mut nodes = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let th = Float::with_val(bits, &pi * j as u32) / n as u32;
        nodes.push(th.clone().cos());
        let mut s = Float::with_val(bits, 1);
        for k in 1..=n / 2 {
            let b = if k == n / 2 { 1 } else { 2 };
            let mut t = Float::with_val(bits, &th * (2 * k) as u32).cos();
            t *= b;
            t /= (4 * k * k - 1) as u32;
            s -= t;
        }
        let c = if j == 0 || j == n { 1 } else { 2 };
        s *= c;
        s /= n as u32;
        weights.push(s);
    }
    Rule { nodes, weights }
}

#[derive(Clone, Debug)]
pub struct QuadResult {
    pub value: BigComplex,
    pub est_error: f64,
    pub evals: usize,
}

#[derive(Clone, Debug)]
pub struct QuadOptions {
    /// Gauss–Legendre points per panel
    pub points: usize,
    /// initial panels per path segment
    pub initial_panels: usize,
    pub max_panels: usize,
}

impl QuadOptions {
    pub fn for_bits(bits: u32) -> Self {
        QuadOptions { points: ((bits / 6) as usize).clamp(12, 60), initial_panels: 1, max_panels: 200_000 }
    }
}

struct Panel {
    a: BigComplex,
    b: BigComplex,
    value: BigComplex,
    err: f64,
}

fn panel_rule<F>(f: &mut F, a: &BigComplex, b: &BigComplex, rule: &Rule, evals: &mut usize) -> Result<BigComplex>
where
    F: FnMut(&BigComplex) -> Result<BigComplex>,
{
    let bits = a.prec();
    let mid = (a + b).scale_f64(0.5);
    let half = (b - a).scale_f64(0.5);
    let mut acc = BigComplex::zero(bits);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let z = &mid + &half.scale(x);
        let fz = f(&z)?;
        *evals += 1;
        acc = &acc + &fz.scale(w);
    }
    Ok(&acc * &half)
}

/// Integrates `f` along the polyline through `path`, refining panels until
/// the summed bisection error estimate is ≤ 2^tol_log2 · (1 + |result|).
pub fn quad_adaptive<F>(mut f: F, path: &[BigComplex], tol_log2: f64, opts: &QuadOptions) -> Result<QuadResult>
where
    F: FnMut(&BigComplex) -> Result<BigComplex>,
{
    if path.len() < 2 {
        return Err(Error::Validation("quadrature path needs at least two points".into()));
    }
    let bits = path[0].prec();
    let rule = gauss_legendre(opts.points, bits);
    let mut evals = 0usize;
    let mut panels: Vec<Panel> = Vec::new();
    let push_panel = |f: &mut F, a: BigComplex, b: BigComplex, evals: &mut usize| -> Result<Panel> {
        let whole = panel_rule(f, &a, &b, &rule, evals)?;
        let m = (&a + &b).scale_f64(0.5);
        let l = panel_rule(f, &a, &m, &rule, evals)?;
        let r = panel_rule(f, &m, &b, &rule, evals)?;
        let halves = &l + &r;
        let err = (&halves - &whole).abs_f64();
        Ok(Panel { a, b, value: halves, err })
    };
    for w in path.windows(2) {
        let n = opts.initial_panels.max(1);
        let step = (&w[1] - &w[0]).scale_f64(1.0 / n as f64);
        for i in 0..n {
            let a = &w[0] + &step.scale_f64(i as f64);
            let b = if i + 1 == n { w[1].clone() } else { &w[0] + &step.scale_f64((i + 1) as f64) };
            panels.push(push_panel(&mut f, a, b, &mut evals)?);
        }
    }
    let tol = tol_log2.exp2();
    loop {
        let mut total = BigComplex::zero(bits);
        let mut err = 0.0;
        for p in &panels {
            total = &total + &p.value;
            err += p.err;
        }
        let scale = 1.0 + total.abs_f64();
        if err <= tol * scale {
            return Ok(QuadResult { value: total, est_error: err, evals });
        }
        if panels.len() >= opts.max_panels {
            return Err(Error::Numerical(format!(
                "quadrature did not converge: best estimate {:?}, error estimate {err:.3e}",
                total
            )));
        }
        // split every panel whose error is above the mean share
        let thresh = (tol * scale / panels.len() as f64).max(err / (4.0 * panels.len() as f64));
        let mut next = Vec::with_capacity(panels.len() * 2);
        for p in panels.drain(..) {
            if p.err > thresh {
                let m = (&p.a + &p.b).scale_f64(0.5);
                next.push(push_panel(&mut f, p.a, m.clone(), &mut evals)?);
                next.push(push_panel(&mut f, m, p.b, &mut evals)?);
            } else {
                next.push(p);
            }
        }
        panels = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rug::ops::Pow;

    fn line(bits: u32, a: (f64, f64), b: (f64, f64)) -> Vec<BigComplex> {
        vec![BigComplex::from_f64(bits, a.0, a.1), BigComplex::from_f64(bits, b.0, b.1)]
    }

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let r = gauss_legendre(10, 128);
        let mut s = Float::new(128);
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            let x18 = Float::with_val(128, x.pow(18u32));
            s += x18 * w;
        }
        // ∫ x^18 = 2/19
        let e = Float::with_val(128, 2) / 19u32;
        assert!(Float::with_val(128, &s - &e).abs() < 1e-35);
    }

    #[test]
    fn cc_weights_sum_to_two() {
        let r = clenshaw_curtis(16, 128);
        let s: f64 = r.weights.iter().map(|w| w.to_f64()).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sine_over_period_vanishes() {
        let bits = 128;
        let two_pi = Float::with_val(bits, Constant::Pi) * 2u32;
        let path = vec![BigComplex::zero(bits), BigComplex::from_real(&two_pi)];
        let r = quad_adaptive(|z| Ok(z.sin()), &path, -100.0, &QuadOptions::for_bits(bits)).unwrap();
        assert!(r.value.abs_f64() < 1e-28);
    }

    #[test]
    fn sech_integral_is_pi() {
        let bits = 128;
        let path = line(bits, (-40.0, 0.0), (40.0, 0.0));
        let mut o = QuadOptions::for_bits(bits);
        o.initial_panels = 8;
        let r = quad_adaptive(|z| Ok(z.cosh().recip()), &path, -100.0, &o).unwrap();
        // tail beyond |r| = 40 is 4 e^{-40}
        let exact = std::f64::consts::PI - 4.0 * (-40f64).exp();
        assert!((r.value.re.to_f64() - exact).abs() < 1e-15);
    }

    #[test]
    fn shifted_path_of_entire_function_matches_real_line() {
        let bits = 128;
        let f = |z: &BigComplex| Ok((z * z).scale_f64(-1.0).exp());
        let o = QuadOptions::for_bits(bits);
        let real = quad_adaptive(f, &line(bits, (-12.0, 0.0), (12.0, 0.0)), -100.0, &o).unwrap();
        let p = vec![
            BigComplex::from_f64(bits, -12.0, 0.0),
            BigComplex::from_f64(bits, -12.0, 0.7),
            BigComplex::from_f64(bits, 12.0, 0.7),
            BigComplex::from_f64(bits, 12.0, 0.0),
        ];
        let shifted = quad_adaptive(f, &p, -100.0, &o).unwrap();
        assert!((&real.value - &shifted.value).abs_f64() < 1e-25);
        assert!((real.value.re.to_f64() - std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }
}
