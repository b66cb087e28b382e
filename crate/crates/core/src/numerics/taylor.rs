//! Taylor-series ODE integration driven by a recorded expression tape.
//!
//! The vector field is written once as a DAG of elementary operations. Each
//! step computes the Taylor jets of all nodes order by order (automatic
//! differentiation by recurrences), then sums the series.

use rug::{Assign, Float};

use super::big::Scalar;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// One time harmonic c·cos(ωt) + s·sin(ωt).
#[derive(Clone, Debug)]
pub struct Harmonic {
    pub omega: Float,
    pub c: Float,
    pub s: Float,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Var,
    Const,
    Time(Vec<Harmonic>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    /// sin of the argument; the paired cosine lives in the next node
    Sin(NodeId),
    Cos,
}

/// Expression recorder. Variables are created first.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    prec: u32,
    ops: Vec<Op<T>>,
    consts: Vec<Option<T>>,
    n_vars: usize,
    rhs: Vec<Option<NodeId>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(prec: u32, n_vars: usize) -> Self {
        let mut t = Tape { prec, ops: Vec::new(), consts: Vec::new(), n_vars, rhs: vec![None; n_vars] };
        for _ in 0..n_vars {
            t.push(Op::Var, None);
        }
        t
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    fn push(&mut self, op: Op<T>, c: Option<T>) -> NodeId {
        self.ops.push(op);
        self.consts.push(c);
        self.ops.len() - 1
    }

    pub fn var(&self, i: usize) -> NodeId {
        assert!(i < self.n_vars);
        i
    }

    pub fn constant(&mut self, c: T) -> NodeId {
        self.push(Op::Const, Some(c))
    }

    pub fn constant_real(&mut self, c: &Float) -> NodeId {
        self.constant(T::from_real(c))
    }

    fn const_of(&self, n: NodeId) -> Option<&T> {
        self.consts[n].as_ref()
    }

    pub fn time(&mut self, harmonics: Vec<Harmonic>) -> Option<NodeId> {
        if harmonics.is_empty() {
            None
        } else {
            Some(self.push(Op::Time(harmonics), None))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if let (Some(x), Some(y)) = (self.const_of(a), self.const_of(b)) {
            let mut s = x.clone();
            s.add_in(y);
            return self.constant(s);
        }
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if let (Some(x), Some(y)) = (self.const_of(a), self.const_of(b)) {
            let mut s = x.clone();
            s.sub_in(y);
            return self.constant(s);
        }
        self.push(Op::Sub(a, b), None)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_of(a) {
            let mut s = x.clone();
            s.neg_in();
            return self.constant(s);
        }
        self.push(Op::Neg(a), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a).cloned(), self.const_of(b).cloned()) {
            (Some(x), Some(y)) => {
                let mut s = T::zero_with(self.prec);
                s.mul_into(&x, &y);
                self.constant(s)
            }
            (Some(x), None) => self.scale(b, x),
            (None, Some(y)) => self.scale(a, y),
            (None, None) => self.push(Op::Mul(a, b), None),
        }
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        if let Some(x) = self.const_of(a) {
            let mut s = T::zero_with(self.prec);
            s.mul_into(x, &k);
            return self.constant(s);
        }
        if let Op::Scale(inner, k0) = &self.ops[a] {
            let inner = *inner;
            let mut kk = T::zero_with(self.prec);
            kk.mul_into(k0, &k);
            return self.push(Op::Scale(inner, kk), None);
        }
        self.push(Op::Scale(a, k), None)
    }

    pub fn scale_real(&mut self, a: NodeId, k: &Float) -> NodeId {
        self.scale(a, T::from_real(k))
    }

    /// Returns (sin a, cos a).
    pub fn sin_cos(&mut self, a: NodeId) -> (NodeId, NodeId) {
        let s = self.push(Op::Sin(a), None);
        let c = self.push(Op::Cos, None);
        (s, c)
    }

    /// Sets d(var i)/dt. `None` means identically zero.
    pub fn set_rhs(&mut self, i: usize, node: Option<NodeId>) {
        self.rhs[i] = node;
    }

    // Optional-node helpers: None stands for the zero function.
    pub fn add_opt(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Option<NodeId> {
        match (a, b) {
            (Some(x), Some(y)) => Some(self.add(x, y)),
            (x, None) => x,
            (None, y) => y,
        }
    }

    pub fn sub_opt(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Option<NodeId> {
        match (a, b) {
            (Some(x), Some(y)) => Some(self.sub(x, y)),
            (x, None) => x,
            (None, Some(y)) => Some(self.neg(y)),
        }
    }

    pub fn mul_opt(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Option<NodeId> {
        match (a, b) {
            (Some(x), Some(y)) => Some(self.mul(x, y)),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Jet evaluator and stepper for a finished tape.
pub struct TaylorIntegrator<T> {
    tape: Tape<T>,
    order: usize,
    coef: Vec<Vec<T>>,
    tmp: T,
    tmp2: T,
    tol_log2: f64,
    /// variables used for step-size control
    pub control: Vec<usize>,
    pub max_steps: usize,
    pub steps_taken: usize,
}

/// Taylor order matched to a tolerance of 2^tol_log2.
pub fn order_for_tol(tol_log2: f64) -> usize {
    let p = (0.5 * (-tol_log2) * std::f64::consts::LN_2).ceil() as usize + 2;
    p.clamp(8, 400)
}

impl<T: Scalar> TaylorIntegrator<T> {
    pub fn new(tape: Tape<T>, tol_log2: f64) -> Self {
        let order = order_for_tol(tol_log2);
        Self::with_order(tape, tol_log2, order)
    }

    pub fn with_order(tape: Tape<T>, tol_log2: f64, order: usize) -> Self {
        let prec = tape.prec;
        let mut coef = Vec::with_capacity(tape.ops.len());
        for (i, _) in tape.ops.iter().enumerate() {
            let mut v = vec![T::zero_with(prec); order + 1];
            if let Some(c) = &tape.consts[i] {
                v[0] = c.clone();
            }
            coef.push(v);
        }
        let control = (0..tape.n_vars).collect();
        TaylorIntegrator {
            tape,
            order,
            coef,
            tmp: T::zero_with(prec),
            tmp2: T::zero_with(prec),
            tol_log2,
            control,
            max_steps: 2_000_000,
            steps_taken: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn prec(&self) -> u32 {
        self.tape.prec
    }

    pub fn tol_log2(&self) -> f64 {
        self.tol_log2
    }

    /// Taylor coefficients of variable `i` after `compute_jets`.
    pub fn jets(&self, i: usize) -> &[T] {
        &self.coef[i]
    }

    /// Computes all jets about time `t0` for the given state.
    pub fn compute_jets(&mut self, state: &[T], t0: &Float) {
        let prec = self.tape.prec;
        for (i, s) in state.iter().enumerate().take(self.tape.n_vars) {
            self.coef[i][0].set_from(s);
        }
        for (id, op) in self.tape.ops.iter().enumerate() {
            if let Op::Time(hs) = op {
                fill_time(&mut self.coef[id], hs, t0, prec);
            }
        }
        for n in 0..=self.order {
            for id in self.tape.n_vars..self.tape.ops.len() {
                self.eval_node(id, n);
            }
            if n < self.order {
                for i in 0..self.tape.n_vars {
                    match self.tape.rhs[i] {
                        Some(r) => {
                            self.tmp.set_from(&self.coef[r][n]);
                            let dst = &mut self.coef[i][n + 1];
                            dst.set_from(&self.tmp);
                            dst.div_uint((n + 1) as u64);
                        }
                        None => self.coef[i][n + 1].set_zero(),
                    }
                }
            }
        }
    }

    fn eval_node(&mut self, id: NodeId, n: usize) {
        // SAFETY of indices: operands always precede `id`.
        let (before, rest) = self.coef.split_at_mut(id);
        let out = &mut rest[0];
        match &self.tape.ops[id] {
            Op::Var | Op::Const | Op::Time(_) | Op::Cos => {}
            Op::Add(a, b) => {
                out[n].set_from(&before[*a][n]);
                out[n].add_in(&before[*b][n]);
            }
            Op::Sub(a, b) => {
                out[n].set_from(&before[*a][n]);
                out[n].sub_in(&before[*b][n]);
            }
            Op::Neg(a) => {
                out[n].set_from(&before[*a][n]);
                out[n].neg_in();
            }
            Op::Scale(a, k) => {
                out[n].mul_into(&before[*a][n], k);
            }
            Op::Mul(a, b) => {
                let (x, y) = (&before[*a], &before[*b]);
                let acc = &mut out[n];
                acc.set_zero();
                for j in 0..=n {
                    if x[j].is_exact_zero() || y[n - j].is_exact_zero() {
                        continue;
                    }
                    acc.mul_acc(&x[j], &y[n - j], &mut self.tmp);
                }
            }
            Op::Sin(a) => {
                let u = &before[*a];
                // cos partner is the node right after this one
                let (s_part, c_part) = rest.split_at_mut(1);
                let s = &mut s_part[0];
                let c = &mut c_part[0];
                if n == 0 {
                    let (s0, c0) = u[0].sin_cos();
                    s[0] = s0;
                    c[0] = c0;
                } else {
                    let mut sa = T::zero_with(self.tape.prec);
                    let mut ca = T::zero_with(self.tape.prec);
                    for k in 1..=n {
                        if u[k].is_exact_zero() {
                            continue;
                        }
                        self.tmp2.set_from(&u[k]);
                        self.tmp2.scale_int(k as i64);
                        sa.mul_acc(&self.tmp2, &c[n - k], &mut self.tmp);
                        ca.mul_acc(&self.tmp2, &s[n - k], &mut self.tmp);
                    }
                    sa.div_uint(n as u64);
                    ca.div_uint(n as u64);
                    ca.neg_in();
                    s[n] = sa;
                    c[n] = ca;
                }
            }
        }
    }

    /// Largest step magnitude meeting the tolerance, from the last two jets.
    pub fn step_bound(&self) -> f64 {
        let p = self.order;
        let mut h = f64::INFINITY;
        for &i in &self.control {
            let scale = log2_scale(&self.coef[i][0]);
            for j in [p - 1, p] {
                let l = self.coef[i][j].mag_log2();
                if l.is_finite() {
                    let hj = ((self.tol_log2 + scale - l) / j as f64).exp2();
                    h = h.min(hj);
                }
            }
        }
        if !h.is_finite() {
            // polynomial solution: any step is exact
            h = 1e3;
        }
        h * 0.9
    }

    /// Replaces `state` by the Taylor polynomials summed at increment `h`.
    pub fn eval_at(&mut self, h: &T, state: &mut [T]) {
        for (i, s) in state.iter_mut().enumerate().take(self.tape.n_vars) {
            let c = &self.coef[i];
            let mut acc = c[self.order].clone();
            for j in (0..self.order).rev() {
                self.tmp.mul_into(&acc, h);
                acc.set_from(&self.tmp);
                acc.add_in(&c[j]);
            }
            s.set_from(&acc);
        }
    }

    /// Real-time integration from t0 to t1 (either direction).
    pub fn integrate(&mut self, state: &mut [T], t0: &Float, t1: &Float) -> Result<()> {
        let prec = self.tape.prec;
        let mut t = Float::with_val(prec, t0);
        let forward = t1 >= t0;
        let mut remaining = Float::with_val(prec, t1 - &t);
        let mut hf = Float::new(prec);
        let mut steps = 0usize;
        while !remaining.is_zero() {
            self.compute_jets(state, &t);
            let hb = self.step_bound();
            if hb < 1e-14 {
                return Err(Error::Numerical(format!(
                    "step size underflow at t = {:.6e} (h = {hb:.3e})",
                    t.to_f64()
                )));
            }
            if remaining.to_f64().abs() <= hb {
                hf.assign(&remaining);
            } else if forward {
                hf.assign(hb);
            } else {
                hf.assign(-hb);
            }
            self.eval_at(&T::from_real(&hf), state);
            for (i, s) in state.iter().enumerate() {
                if !s.mag_log2().is_finite() && !s.is_exact_zero() {
                    return Err(Error::Numerical(format!(
                        "non-finite state component {i} at t = {:.6e}",
                        t.to_f64()
                    )));
                }
            }
            t += &hf;
            remaining.assign(t1 - &t);
            if forward != (remaining >= 0) {
                remaining.assign(0);
            }
            steps += 1;
            self.steps_taken += 1;
            if steps > self.max_steps {
                return Err(Error::Numerical(format!(
                    "step limit exceeded at t = {:.6e}",
                    t.to_f64()
                )));
            }
        }
        Ok(())
    }
}

fn log2_scale<T: Scalar>(x: &T) -> f64 {
    x.mag_log2().max(0.0)
}

/// Jets of Σ c cos(ωt) + s sin(ωt) about t0.
fn fill_time<T: Scalar>(out: &mut [T], hs: &[Harmonic], t0: &Float, prec: u32) {
    for v in out.iter_mut() {
        v.set_zero();
    }
    let mut acc = Float::new(prec);
    let mut w = Float::new(prec);
    for hm in hs {
        let arg = Float::with_val(prec, &hm.omega * t0);
        let (sn, cs) = arg.sin_cos(Float::new(prec));
        // f(t0 + h) = Σ_n (ω^n/n!) [c cos(θ + nπ/2) + s sin(θ + nπ/2)] h^n
        let mut pw = Float::with_val(prec, 1);
        for (n, slot) in out.iter_mut().enumerate() {
            // cos(θ+nπ/2), sin(θ+nπ/2) cycle through the four sign patterns
            let (cn, snn) = match n % 4 {
                0 => (cs.clone(), sn.clone()),
                1 => (-sn.clone(), cs.clone()),
                2 => (-cs.clone(), -sn.clone()),
                _ => (sn.clone(), -cs.clone()),
            };
            acc.assign(&hm.c * &cn);
            w.assign(&hm.s * &snn);
            acc += &w;
            acc *= &pw;
            let mut add = T::from_real(&acc);
            add.add_in(slot);
            slot.set_from(&add);
            pw *= &hm.omega;
            pw /= (n + 1) as u32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::big::BigComplex;

    fn harmonic_oscillator(prec: u32) -> Tape<Float> {
        // x' = y, y' = -x
        let mut t = Tape::new(prec, 2);
        let y = t.var(1);
        let x = t.var(0);
        let mx = t.neg(x);
        t.set_rhs(0, Some(y));
        t.set_rhs(1, Some(mx));
        t
    }

    #[test]
    fn oscillator_matches_cos_sin() {
        let tape = harmonic_oscillator(128);
        let mut it = TaylorIntegrator::new(tape, -110.0);
        let mut st = vec![Float::with_val(128, 1), Float::with_val(128, 0)];
        let t0 = Float::with_val(128, 0);
        let t1 = Float::with_val(128, 3);
        it.integrate(&mut st, &t0, &t1).unwrap();
        let c = Float::with_val(128, 3).cos();
        let s = -Float::with_val(128, 3).sin();
        assert!(Float::with_val(128, &st[0] - &c).abs() < 1e-30);
        assert!(Float::with_val(128, &st[1] - &s).abs() < 1e-30);
    }

    #[test]
    fn time_harmonic_forcing_integrates_exactly() {
        // x' = 2 cos(3t) + sin(5t)  =>  x = (2/3) sin 3t - cos(5t)/5 + 1/5
        let prec = 128;
        let mut t = Tape::<Float>::new(prec, 1);
        let f = t
            .time(vec![
                Harmonic { omega: Float::with_val(prec, 3), c: Float::with_val(prec, 2), s: Float::new(prec) },
                Harmonic { omega: Float::with_val(prec, 5), c: Float::new(prec), s: Float::with_val(prec, 1) },
            ])
            .unwrap();
        t.set_rhs(0, Some(f));
        let mut it = TaylorIntegrator::new(t, -110.0);
        let mut st = vec![Float::new(prec)];
        let t1 = Float::with_val(prec, 1.7);
        it.integrate(&mut st, &Float::new(prec), &t1).unwrap();
        let exact = 2.0 / 3.0 * 5.1f64.sin() - 8.5f64.cos() / 5.0 + 0.2;
        assert!((st[0].to_f64() - exact).abs() < 1e-14);
    }

    #[test]
    fn sin_cos_node_jets() {
        // x' = cos(x), x(0)=0 -> x = 2 atan(tanh(t/2)) (gudermannian)
        let prec = 128;
        let mut t = Tape::<Float>::new(prec, 1);
        let x = t.var(0);
        let (_s, c) = t.sin_cos(x);
        t.set_rhs(0, Some(c));
        let mut it = TaylorIntegrator::new(t, -110.0);
        let mut st = vec![Float::new(prec)];
        let t1 = Float::with_val(prec, 2);
        it.integrate(&mut st, &Float::new(prec), &t1).unwrap();
        let gd = (Float::with_val(prec, 1).tanh().atan() * 2u32).to_f64();
        assert!((st[0].to_f64() - gd).abs() < 1e-15);
    }

    #[test]
    fn complex_scalar_tape_runs() {
        // x' = x on complex scalars: exp along a complex increment
        let prec = 96;
        let mut t = Tape::<BigComplex>::new(prec, 1);
        let x = t.var(0);
        t.set_rhs(0, Some(x));
        let mut it = TaylorIntegrator::new(t, -80.0);
        let mut st = vec![BigComplex::one(prec)];
        it.compute_jets(&st, &Float::new(prec));
        let h = BigComplex::from_f64(prec, 0.1, 0.2);
        it.eval_at(&h, &mut st);
        let e = num_complex::Complex64::new(0.1, 0.2).exp();
        assert!((st[0].to_c64() - e).norm() < 1e-15);
    }
}
