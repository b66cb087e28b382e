//! Stroboscopic map of the forced flow, with variational equations and
//! the action ∫(y ẋ − H) dt.

use std::collections::HashMap;

use rug::Float;

use crate::error::{Error, Result};
use crate::model::{rational_to_big, FourierSeries, Kind, SystemModel};
use crate::numerics::big::powr;
use crate::numerics::taylor::{Harmonic, NodeId, Tape, TaylorIntegrator};

#[derive(Clone, Debug)]
pub struct PoincareMapSpec {
    pub model: SystemModel,
    pub eps: f64,
    /// section phase τ₀; the section is t = ε τ₀
    pub tau0: f64,
    pub bits: u32,
    pub tol_log2: f64,
}

impl PoincareMapSpec {
    pub fn new(model: SystemModel, eps: f64, tau0: f64, bits: u32) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Validation(format!("eps must be positive, got {eps}")));
        }
        if !(53..=1024).contains(&bits) {
            return Err(Error::Validation(format!("bits must lie in [53, 1024], got {bits}")));
        }
        Ok(PoincareMapSpec { model, eps, tau0, bits, tol_log2: -(bits as f64 - 8.0) })
    }

    /// max(128, ⌈2(a/ε)/ln 2⌉ + 64)
    pub fn schedule_bits(a: f64, eps: f64) -> u32 {
        let need = (2.0 * a / eps / std::f64::consts::LN_2).ceil() as u32 + 64;
        need.max(128)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum XF {
    Pow(u32),
    Cos(u32),
    Sin(u32),
}

/// c · s(t/ε) · f(x) · y^yp
#[derive(Clone, Debug)]
struct Mono {
    c: Float,
    series: Option<usize>,
    xf: XF,
    yp: u32,
}

fn d_dx(ms: &[Mono]) -> Vec<Mono> {
    ms.iter()
        .filter_map(|m| {
            let (f, xf) = match m.xf {
                XF::Pow(0) => return None,
                XF::Pow(k) => (k as f64, XF::Pow(k - 1)),
                XF::Cos(j) => (-(j as f64), XF::Sin(j)),
                XF::Sin(j) => (j as f64, XF::Cos(j)),
            };
            Some(Mono { c: Float::with_val(m.c.prec(), &m.c * f), series: m.series, xf, yp: m.yp })
        })
        .collect()
}

fn d_dy(ms: &[Mono]) -> Vec<Mono> {
    ms.iter()
        .filter(|m| m.yp > 0)
        .map(|m| Mono { c: Float::with_val(m.c.prec(), &m.c * m.yp), series: m.series, xf: m.xf, yp: m.yp - 1 })
        .collect()
}

struct Builder<'a> {
    tape: &'a mut Tape<Float>,
    x: NodeId,
    y: NodeId,
    xpow: HashMap<u32, NodeId>,
    ypow: HashMap<u32, NodeId>,
    trig: HashMap<u32, (NodeId, NodeId)>,
    time: HashMap<usize, Option<NodeId>>,
    series: &'a [FourierSeries],
    eps: Float,
}

impl Builder<'_> {
    fn pow(&mut self, base: NodeId, k: u32, y: bool) -> Option<NodeId> {
        if k == 0 {
            return None;
        }
        if k == 1 {
            return Some(base);
        }
        let cached = if y { self.ypow.get(&k) } else { self.xpow.get(&k) };
        if let Some(&n) = cached {
            return Some(n);
        }
        let half = self.pow(base, k / 2, y).expect("k ≥ 2");
        let mut n = self.tape.mul(half, half);
        if k % 2 == 1 {
            n = self.tape.mul(n, base);
        }
        if y {
            self.ypow.insert(k, n);
        } else {
            self.xpow.insert(k, n);
        }
        Some(n)
    }

    fn xfactor(&mut self, xf: XF) -> Option<NodeId> {
        match xf {
            XF::Pow(k) => self.pow(self.x, k, false),
            XF::Cos(j) | XF::Sin(j) => {
                let (s, c) = match self.trig.get(&j) {
                    Some(&p) => p,
                    None => {
                        let prec = self.tape.prec();
                        let arg = if j == 1 { self.x } else { self.tape.scale_real(self.x, &Float::with_val(prec, j)) };
                        let p = self.tape.sin_cos(arg);
                        self.trig.insert(j, p);
                        p
                    }
                };
                Some(if matches!(xf, XF::Cos(_)) { c } else { s })
            }
        }
    }

    fn time_node(&mut self, i: usize) -> Option<NodeId> {
        if let Some(&n) = self.time.get(&i) {
            return n;
        }
        let prec = self.tape.prec();
        let s = &self.series[i];
        let mut hs = Vec::new();
        if s.mean != 0.0 {
            hs.push(Harmonic { omega: Float::new(prec), c: Float::with_val(prec, s.mean), s: Float::new(prec) });
        }
        for (&j, &(c, sn)) in &s.harmonics {
            if c != 0.0 || sn != 0.0 {
                hs.push(Harmonic {
                    omega: Float::with_val(prec, j) / &self.eps,
                    c: Float::with_val(prec, c),
                    s: Float::with_val(prec, sn),
                });
            }
        }
        let n = self.tape.time(hs);
        self.time.insert(i, n);
        n
    }

    fn emit(&mut self, ms: &[Mono]) -> Option<NodeId> {
        let mut acc = None;
        for m in ms {
            if m.c.is_zero() {
                continue;
            }
            let t = match m.series {
                Some(i) => match self.time_node(i) {
                    Some(n) => Some(n),
                    None => continue,
                },
                None => None,
            };
            let xf = self.xfactor(m.xf);
            let yf = self.pow(self.y, m.yp, true);
            // absent factors are 1 here
            let mut prod: Option<NodeId> = None;
            for f in [t, xf, yf].into_iter().flatten() {
                prod = Some(match prod {
                    Some(p) => self.tape.mul(p, f),
                    None => f,
                });
            }
            let term = match prod {
                Some(n) if m.c == 1 => n,
                Some(n) => self.tape.scale_real(n, &m.c),
                None => self.tape.constant_real(&m.c),
            };
            acc = self.tape.add_opt(acc, Some(term));
        }
        acc
    }
}

/// H = y²/2 + V(x) + μ ε^η H₁(x, y, t/ε) as monomials.
fn hamiltonian(model: &SystemModel, eps: f64, bits: u32) -> (Vec<Mono>, Vec<FourierSeries>) {
    let f = |v: f64| Float::with_val(bits, v);
    let mut ms = vec![Mono { c: f(0.5), series: None, xf: XF::Pow(0), yp: 2 }];
    let pot = &model.potential;
    match pot.kind {
        Kind::Polynomial => {
            for (&k, &c) in &pot.coefficients {
                ms.push(Mono { c: f(c), series: None, xf: XF::Pow(k), yp: 0 });
            }
        }
        Kind::Trigonometric => {
            for (&j, &c) in &pot.coefficients {
                let xf = if j == 0 { XF::Pow(0) } else { XF::Cos(j) };
                ms.push(Mono { c: f(c), series: None, xf, yp: 0 });
            }
            for (&j, &s) in &pot.sin_coefficients {
                if j > 0 {
                    ms.push(Mono { c: f(s), series: None, xf: XF::Sin(j), yp: 0 });
                }
            }
        }
    }
    let m = powr(&Float::with_val(bits, eps), &rational_to_big(&model.eta, bits)) * model.mu;
    let mut series = Vec::new();
    if model.mu != 0.0 {
        let p = &model.perturbation;
        for t in p.active_terms() {
            series.push(t.series.clone());
            let xf = match p.kind {
                Kind::Polynomial => XF::Pow(t.x_power as u32),
                Kind::Trigonometric if t.x_power == 0 => XF::Pow(0),
                Kind::Trigonometric if t.x_power > 0 => XF::Cos(t.x_power as u32),
                Kind::Trigonometric => XF::Sin(t.x_power.unsigned_abs()),
            };
            ms.push(Mono { c: m.clone(), series: Some(series.len() - 1), xf, yp: t.y_power });
        }
        if let Some(s) = &p.linear {
            if !s.is_zero() {
                series.push(s.clone());
                ms.push(Mono { c: m.clone(), series: Some(series.len() - 1), xf: XF::Pow(1), yp: 0 });
            }
        }
    }
    (ms, series)
}

/// Variables: x, y, J, then optionally the two Jacobian columns.
fn flow_tape(model: &SystemModel, eps: f64, bits: u32, variational: bool) -> Tape<Float> {
    let (h, series) = hamiltonian(model, eps, bits);
    let nv = if variational { 7 } else { 3 };
    let mut tape = Tape::new(bits, nv);
    let x = tape.var(0);
    let y = tape.var(1);
    let hx = d_dx(&h);
    let hy = d_dy(&h);
    let (hxx, hxy, hyy) = (d_dx(&hx), d_dy(&hx), d_dy(&hy));
    let mut b = Builder {
        tape: &mut tape,
        x,
        y,
        xpow: HashMap::new(),
        ypow: HashMap::new(),
        trig: HashMap::new(),
        time: HashMap::new(),
        series: &series,
        eps: Float::with_val(bits, eps),
    };
    let n_h = b.emit(&h);
    let n_hx = b.emit(&hx);
    let n_hy = b.emit(&hy);
    let (n_hxx, n_hxy, n_hyy) = if variational { (b.emit(&hxx), b.emit(&hxy), b.emit(&hyy)) } else { (None, None, None) };
    let xdot = n_hy;
    let ydot = n_hx.map(|n| tape.neg(n));
    tape.set_rhs(0, xdot);
    tape.set_rhs(1, ydot);
    // J̇ = y ẋ − H
    let yxd = tape.mul_opt(Some(y), xdot);
    let jdot = tape.sub_opt(yxd, n_h);
    tape.set_rhs(2, jdot);
    if variational {
        for col in 0..2 {
            let a = tape.var(3 + 2 * col);
            let bb = tape.var(4 + 2 * col);
            let t1 = tape.mul_opt(n_hxy, Some(a));
            let t2 = tape.mul_opt(n_hyy, Some(bb));
            let ad = tape.add_opt(t1, t2);
            let t3 = tape.mul_opt(n_hxx, Some(a));
            let t4 = tape.mul_opt(n_hxy, Some(bb));
            let s = tape.add_opt(t3, t4);
            let bd = s.map(|n| tape.neg(n));
            tape.set_rhs(3 + 2 * col, ad);
            tape.set_rhs(4 + 2 * col, bd);
        }
    }
    tape
}

pub type Point = [Float; 2];
pub type Mat2 = [[Float; 2]; 2];

#[derive(Clone, Debug)]
pub struct FlowOut {
    pub z: Point,
    pub jac: Option<Mat2>,
    /// ∫(y ẋ − H) dt over the integration interval (signed by direction)
    pub action: Float,
}

/// Flow engine for one (model, ε, τ₀, bits).
pub struct Flow {
    pub spec: PoincareMapSpec,
    plain: TaylorIntegrator<Float>,
    var: TaylorIntegrator<Float>,
    pub t0: Float,
    pub period: Float,
    /// largest |det J − 1| seen so far
    pub max_det_error: f64,
    pub jacobians: usize,
    pub periods_integrated: u64,
}

impl Flow {
    pub fn new(spec: PoincareMapSpec) -> Result<Self> {
        let bits = spec.bits;
        let plain = TaylorIntegrator::new(flow_tape(&spec.model, spec.eps, bits, false), spec.tol_log2);
        let var = TaylorIntegrator::new(flow_tape(&spec.model, spec.eps, bits, true), spec.tol_log2);
        let pi2 = Float::with_val(bits, rug::float::Constant::Pi) * 2u32;
        let period = pi2 * spec.eps;
        let t0 = Float::with_val(bits, spec.eps) * spec.tau0;
        Ok(Flow { spec, plain, var, t0, period, max_det_error: 0.0, jacobians: 0, periods_integrated: 0 })
    }

    pub fn bits(&self) -> u32 {
        self.spec.bits
    }

    pub fn tol(&self) -> f64 {
        self.spec.tol_log2.exp2()
    }

    /// Flows `z` over `periods` periods (negative: backward) from the section.
    pub fn run(&mut self, z: &Point, periods: i64, jac: bool) -> Result<FlowOut> {
        let bits = self.bits();
        let t1 = Float::with_val(bits, &self.period * periods) + &self.t0;
        let t0 = self.t0.clone();
        self.periods_integrated += periods.unsigned_abs();
        if jac {
            let one = Float::with_val(bits, 1);
            let zero = Float::new(bits);
            let mut st = vec![z[0].clone(), z[1].clone(), zero.clone(), one.clone(), zero.clone(), zero, one];
            self.var.integrate(&mut st, &t0, &t1)?;
            let m = [[st[3].clone(), st[5].clone()], [st[4].clone(), st[6].clone()]];
            let det = Float::with_val(bits, &m[0][0] * &m[1][1]) - Float::with_val(bits, &m[0][1] * &m[1][0]);
            let scale = m.iter().flatten().map(|v| v.to_f64().abs()).fold(1.0, f64::max);
            // cancellation in det grows with the squared entry size
            let err = (det - 1u32).abs().to_f64() / (scale * scale);
            self.max_det_error = self.max_det_error.max(err);
            self.jacobians += 1;
            Ok(FlowOut { z: [st[0].clone(), st[1].clone()], jac: Some(m), action: st[2].clone() })
        } else {
            let mut st = vec![z[0].clone(), z[1].clone(), Float::new(bits)];
            self.plain.integrate(&mut st, &t0, &t1)?;
            Ok(FlowOut { z: [st[0].clone(), st[1].clone()], jac: None, action: st[2].clone() })
        }
    }

    /// Unperturbed energy H₀ at a point.
    pub fn h0(&self, z: &Point) -> Float {
        let bits = self.bits();
        Float::with_val(bits, z[1].square_ref()) / 2u32 + self.spec.model.potential.eval_big(&z[0])
    }
}

/// Stroboscopic map P over one period, with its Jacobian.
pub fn poincare_map(flow: &mut Flow, z: &Point) -> Result<(Point, Mat2)> {
    let o = flow.run(z, 1, true)?;
    Ok((o.z, o.jac.expect("jacobian requested")))
}

/// P⁻¹ by backward integration.
pub fn inverse_map(flow: &mut Flow, z: &Point) -> Result<(Point, Mat2)> {
    let o = flow.run(z, -1, true)?;
    Ok((o.z, o.jac.expect("jacobian requested")))
}

pub(crate) fn det2(m: &Mat2) -> Float {
    Float::with_val(m[0][0].prec(), &m[0][0] * &m[1][1]) - Float::with_val(m[0][0].prec(), &m[0][1] * &m[1][0])
}

pub(crate) fn matvec(m: &Mat2, v: &Point) -> Point {
    let p = v[0].prec();
    [
        Float::with_val(p, &m[0][0] * &v[0]) + Float::with_val(p, &m[0][1] * &v[1]),
        Float::with_val(p, &m[1][0] * &v[0]) + Float::with_val(p, &m[1][1] * &v[1]),
    ]
}

/// Solves [a b] [s t]ᵀ = r for 2-vectors a, b.
pub(crate) fn solve_cols(a: &Point, b: &Point, r: &Point) -> Result<(Float, Float)> {
    let p = r[0].prec();
    let det = Float::with_val(p, &a[0] * &b[1]) - Float::with_val(p, &a[1] * &b[0]);
    if det.is_zero() {
        return Err(Error::Numerical("singular 2×2 system".into()));
    }
    let s = (Float::with_val(p, &r[0] * &b[1]) - Float::with_val(p, &r[1] * &b[0])) / &det;
    let t = (Float::with_val(p, &a[0] * &r[1]) - Float::with_val(p, &a[1] * &r[0])) / &det;
    Ok((s, t))
}

pub(crate) fn norm(v: &Point) -> Float {
    dot(v, v).sqrt()
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    let p = a[0].prec();
    [Float::with_val(p, &a[0] - &b[0]), Float::with_val(p, &a[1] - &b[1])]
}

pub(crate) fn add_scaled(a: &Point, s: &Float, v: &Point) -> Point {
    let p = a[0].prec();
    [Float::with_val(p, &v[0] * s) + &a[0], Float::with_val(p, &v[1] * s) + &a[1]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> Float {
    let p = a[0].prec();
    Float::with_val(p, &a[0] * &b[0]) + Float::with_val(p, &a[1] * &b[1])
}

/// a × b
pub(crate) fn cross(a: &Point, b: &Point) -> Float {
    let p = a[0].prec();
    Float::with_val(p, &a[0] * &b[1]) - Float::with_val(p, &a[1] * &b[0])
}

pub(crate) fn point(bits: u32, x: f64, y: f64) -> Point {
    [Float::with_val(bits, x), Float::with_val(bits, y)]
}
