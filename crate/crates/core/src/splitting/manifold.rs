//! Periodic orbit of the map and its one-dimensional invariant manifolds.

use rug::Float;
use serde::Serialize;

use super::flow::{add_scaled, cross, det2, dot, matvec, norm, point, sub, Flow, Mat2, Point};
use crate::error::{Error, Result};
use crate::model::Kind;
use crate::separatrix::SeparatrixInfo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Unstable,
    Stable,
}

#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    pub point: Point,
    pub monodromy: Mat2,
    /// multiplier Λ > 1; the other one is 1/Λ
    pub multiplier: Float,
    pub unstable: Point,
    pub stable: Point,
    pub residual: f64,
    pub det_error: f64,
    pub newton_iterations: usize,
}

impl PeriodicOrbit {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "point": [self.point[0].to_f64(), self.point[1].to_f64()],
            "multipliers": [self.multiplier.to_f64(), 1.0 / self.multiplier.to_f64()],
            "unstable": [self.unstable[0].to_f64(), self.unstable[1].to_f64()],
            "stable": [self.stable[0].to_f64(), self.stable[1].to_f64()],
            "residual": self.residual,
            "det_error": self.det_error,
            "newton_iterations": self.newton_iterations,
        })
    }
}

fn eigvec(m: &Mat2, lam: &Float) -> Point {
    let p = lam.prec();
    let a = [m[0][1].clone(), Float::with_val(p, lam - &m[0][0])];
    let b = [Float::with_val(p, lam - &m[1][1]), m[1][0].clone()];
    let v = if norm(&a) >= norm(&b) { a } else { b };
    let n = norm(&v);
    [Float::with_val(p, &v[0] / &n), Float::with_val(p, &v[1] / &n)]
}

/// Newton for P(z) = z from the origin.
pub fn find_periodic_orbit(flow: &mut Flow) -> Result<PeriodicOrbit> {
    let bits = flow.bits();
    let res_tol = (-(bits as f64) + 24.0).exp2();
    let mut z = point(bits, 0.0, 0.0);
    let mut iterations = 0;
    let (mut img, mut jac);
    loop {
        let o = flow.run(&z, 1, true)?;
        img = o.z;
        jac = o.jac.expect("jacobian");
        let f = sub(&img, &z);
        let res = norm(&f).to_f64();
        if res <= res_tol || flow.spec.model.mu == 0.0 {
            break;
        }
        if iterations >= 50 {
            return Err(Error::Numerical(format!("periodic orbit Newton did not converge (residual {res:.3e})")));
        }
        // (J − I) Δ = −f
        let one = Float::with_val(bits, 1);
        let a = [Float::with_val(bits, &jac[0][0] - &one), jac[1][0].clone()];
        let b = [jac[0][1].clone(), Float::with_val(bits, &jac[1][1] - &one)];
        let rhs = [Float::with_val(bits, -&f[0]), Float::with_val(bits, -&f[1])];
        let (dx, dy) = super::flow::solve_cols(&a, &b, &rhs)?;
        z[0] += dx;
        z[1] += dy;
        iterations += 1;
    }
    let residual = norm(&sub(&img, &z)).to_f64();
    let det = det2(&jac);
    let det_error = Float::with_val(bits, &det - 1u32).abs().to_f64();
    let tr = Float::with_val(bits, &jac[0][0] + &jac[1][1]);
    let disc = Float::with_val(bits, tr.square_ref()) - Float::with_val(bits, &det * 4u32);
    if disc <= 0 || tr <= 2 {
        return Err(Error::Numerical(format!(
            "hyperbolicity lost: monodromy trace {:.6} gives no real multiplier above one",
            tr.to_f64()
        )));
    }
    let lam = (tr + disc.sqrt()) / 2u32;
    let lam_s = Float::with_val(bits, &det / &lam);
    let unstable = eigvec(&jac, &lam);
    let stable = eigvec(&jac, &lam_s);
    Ok(PeriodicOrbit {
        point: z,
        monodromy: jac,
        multiplier: lam,
        unstable,
        stable,
        residual,
        det_error,
        newton_iterations: iterations,
    })
}

/// Periodic orbit the stable branch of the loop lands on. For the
/// trigonometric kind this is the 2π-translate.
pub fn stable_base(flow: &Flow, orbit: &PeriodicOrbit) -> Point {
    let mut p = orbit.point.clone();
    if flow.spec.model.potential.kind == Kind::Trigonometric {
        p[0] += Float::with_val(flow.bits(), rug::float::Constant::Pi) * 2u32;
    }
    p
}

/// W(φ) = Pⁿ(base + δ₀ Λ^{φ−n} v) with a fixed iteration count n
/// (P⁻¹ for the stable branch), so W is smooth in φ.
#[derive(Clone, Debug)]
pub struct ManifoldParam {
    pub branch: Branch,
    pub base: Point,
    pub dir: Point,
    pub delta0: Float,
    pub ln_lambda: Float,
    pub n_iter: i64,
    /// linear-approximation error at δ₀
    pub seed_error: f64,
}

impl ManifoldParam {
    fn seed(&self, theta: &Float) -> (Point, Point) {
        let bits = theta.prec();
        let r = Float::with_val(bits, &self.ln_lambda * theta).exp() * &self.delta0;
        let z = add_scaled(&self.base, &r, &self.dir);
        let dr = Float::with_val(bits, &r * &self.ln_lambda);
        let dz = [Float::with_val(bits, &self.dir[0] * &dr), Float::with_val(bits, &self.dir[1] * &dr)];
        (z, dz)
    }

    fn sign(&self) -> i64 {
        match self.branch {
            Branch::Unstable => 1,
            Branch::Stable => -1,
        }
    }

    /// Point and, if requested, dW/dφ.
    pub fn eval(&self, flow: &mut Flow, phi: &Float, jac: bool) -> Result<(Point, Option<Point>)> {
        self.eval_with(flow, phi, self.n_iter, jac)
    }

    pub(crate) fn eval_with(&self, flow: &mut Flow, phi: &Float, n: i64, jac: bool) -> Result<(Point, Option<Point>)> {
        let theta = Float::with_val(phi.prec(), phi - n);
        let (z, dz) = self.seed(&theta);
        let o = flow.run(&z, self.sign() * n, jac)?;
        Ok((o.z, o.jac.map(|m| matvec(&m, &dz))))
    }
}

fn linear_error(flow: &mut Flow, base: &Point, dir: &Point, delta: &Float, periods: i64) -> Result<f64> {
    let z = add_scaled(base, delta, dir);
    let w = flow.run(&z, periods, false)?.z;
    Ok(cross(dir, &sub(&w, base)).to_f64().abs())
}

/// Seed displacement δ₀ for which one map step stays within `tol` of the
/// eigenline. Starts at 1e-4 and shrinks until both δ₀ and δ₀/2 pass and
/// the error is seen to scale quadratically.
pub fn choose_delta0(flow: &mut Flow, base: &Point, dir: &Point, branch: Branch, tol: f64) -> Result<(Float, f64)> {
    let bits = flow.bits();
    let periods = if branch == Branch::Unstable { 1 } else { -1 };
    let floor = (-(bits as f64) / 2.0 + 8.0).exp2();
    let mut delta = 1e-4;
    for _ in 0..200 {
        let d = Float::with_val(bits, delta);
        let e1 = linear_error(flow, base, dir, &d, periods)?;
        let e2 = linear_error(flow, base, dir, &Float::with_val(bits, delta / 2.0), periods)?;
        let quadratic = e1 == 0.0 || e2 <= e1 / 3.0 || e1 <= tol * 1e-3;
        if e1 <= tol && quadratic {
            return Ok((d, e1));
        }
        let shrink = if e1 > tol { (e1 / tol).sqrt() * 1.2 } else { 2.0 };
        delta /= shrink.max(2.0);
        if delta < floor {
            break;
        }
    }
    Err(Error::Numerical(format!(
        "manifold seed: linear approximation not within {tol:.3e} above δ = {floor:.3e}"
    )))
}

#[derive(Clone, Debug, Serialize)]
pub struct ArcPoint {
    pub phi: f64,
    pub z: [f64; 2],
}

/// Sampled branch from the periodic orbit to just beyond the apex of the
/// unperturbed loop.
#[derive(Clone, Debug)]
pub struct ManifoldArc {
    pub param: ManifoldParam,
    pub points: Vec<ArcPoint>,
    /// parameter at which the branch crosses the apex normal
    pub apex_phi: f64,
}

impl ManifoldArc {
    /// Cubic interpolation through the four nearest samples.
    pub fn interpolate(&self, phi: f64) -> [f64; 2] {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.phi < phi).clamp(2, pts.len().saturating_sub(2).max(2));
        let lo = i.saturating_sub(2);
        let hi = (lo + 4).min(pts.len());
        let mut out = [0.0; 2];
        for j in lo..hi {
            let mut w = 1.0;
            for k in lo..hi {
                if k != j {
                    w *= (phi - pts[k].phi) / (pts[j].phi - pts[k].phi);
                }
            }
            out[0] += w * pts[j].z[0];
            out[1] += w * pts[j].z[1];
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "branch": self.param.branch,
            "delta0": self.param.delta0.to_f64(),
            "seed_error": self.param.seed_error,
            "apex_phi": self.apex_phi,
            "points": self.points,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GrowOptions {
    pub seeds: usize,
    pub max_gap: f64,
    pub max_angle: f64,
    /// periods past the apex crossing
    pub beyond: i64,
    pub max_periods: i64,
}

impl Default for GrowOptions {
    fn default() -> Self {
        GrowOptions { seeds: 16, max_gap: 0.05, max_angle: 0.2, beyond: 2, max_periods: 20_000 }
    }
}

/// Signed position along the unperturbed loop relative to its apex.
pub(crate) struct ApexFrame {
    apex: [f64; 2],
    tangent: [f64; 2],
}

impl ApexFrame {
    pub(crate) fn new(sep: &SeparatrixInfo) -> Self {
        let xa = sep.apex.to_f64();
        let ya = sep.apex_p.to_f64();
        let dv = sep.potential.deriv_big(&sep.apex).to_f64();
        let (tx, ty) = (ya, -dv);
        let n = tx.hypot(ty);
        ApexFrame { apex: [xa, ya], tangent: [tx / n, ty / n] }
    }

    pub(crate) fn sigma(&self, z: [f64; 2]) -> f64 {
        (z[0] - self.apex[0]) * self.tangent[0] + (z[1] - self.apex[1]) * self.tangent[1]
    }

    fn far(&self, z: [f64; 2], base: [f64; 2]) -> bool {
        let d = (z[0] - base[0]).hypot(z[1] - base[1]);
        let r = (self.apex[0] - base[0]).hypot(self.apex[1] - base[1]);
        d > 0.3 * r
    }
}

fn f2(z: &Point) -> [f64; 2] {
    [z[0].to_f64(), z[1].to_f64()]
}

/// Grows one branch: picks δ₀, iterates a fundamental domain of seeds past
/// the apex and refines where samples are too far apart or turn too fast.
pub fn grow_manifold(
    flow: &mut Flow,
    orbit: &PeriodicOrbit,
    sep: &SeparatrixInfo,
    branch: Branch,
    opts: &GrowOptions,
) -> Result<ManifoldArc> {
    let bits = flow.bits();
    let frame = ApexFrame::new(sep);
    let base = match branch {
        Branch::Unstable => orbit.point.clone(),
        Branch::Stable => stable_base(flow, orbit),
    };
    let mut dir = match branch {
        Branch::Unstable => orbit.unstable.clone(),
        Branch::Stable => orbit.stable.clone(),
    };
    let bf = f2(&base);
    let to_apex = [frame.apex[0] - bf[0], frame.apex[1] - bf[1]];
    if dir[0].to_f64() * to_apex[0] + dir[1].to_f64() * to_apex[1] < 0.0 {
        dir = [Float::with_val(bits, -&dir[0]), Float::with_val(bits, -&dir[1])];
    }
    let tol = (-(bits as f64) / 2.0).exp2();
    let (delta0, seed_error) = choose_delta0(flow, &base, &dir, branch, tol)?;
    let mut param = ManifoldParam {
        branch,
        base,
        dir,
        delta0,
        ln_lambda: orbit.multiplier.clone().ln(),
        n_iter: 0,
        seed_error,
    };
    let step = if branch == Branch::Unstable { 1 } else { -1 };
    // forward along the branch σ increases for the unstable side
    let past = |s: f64| if branch == Branch::Unstable { s >= 0.0 } else { s <= 0.0 };
    let ns = opts.seeds.max(2);
    let mut points = Vec::new();
    let mut cur: Vec<Point> = (0..ns)
        .map(|j| param.seed(&Float::with_val(bits, j as f64 / ns as f64)).0)
        .collect();
    let mut cross_n: Option<i64> = None;
    let mut n = 0i64;
    loop {
        for (j, z) in cur.iter().enumerate() {
            points.push(ArcPoint { phi: n as f64 + j as f64 / ns as f64, z: f2(z) });
        }
        if cross_n.is_none() {
            let z0 = f2(&cur[0]);
            if frame.far(z0, bf) && past(frame.sigma(z0)) {
                cross_n = Some(n);
            }
        }
        if let Some(c) = cross_n {
            if n >= c + opts.beyond {
                break;
            }
        }
        if n >= opts.max_periods {
            return Err(Error::Numerical(format!("{branch:?} branch never reached the apex region")));
        }
        for z in cur.iter_mut() {
            *z = flow.run(z, step, false)?.z;
        }
        n += 1;
    }
    refine(flow, &param, &mut points, opts)?;
    let mut apex_phi = None;
    for w in points.windows(2) {
        let (s0, s1) = (frame.sigma(w[0].z), frame.sigma(w[1].z));
        if frame.far(w[1].z, bf) && !past(s0) && past(s1) {
            apex_phi = Some(w[0].phi + (w[1].phi - w[0].phi) * s0 / (s0 - s1));
            break;
        }
    }
    let apex_phi = apex_phi.ok_or_else(|| Error::Numerical(format!("{branch:?} branch: apex crossing not bracketed")))?;
    param.n_iter = apex_phi.round() as i64;
    Ok(ManifoldArc { param, points, apex_phi })
}

fn refine(flow: &mut Flow, param: &ManifoldParam, pts: &mut Vec<ArcPoint>, opts: &GrowOptions) -> Result<()> {
    let bits = flow.bits();
    for _pass in 0..6 {
        let mut inserts = Vec::new();
        for i in 0..pts.len().saturating_sub(1) {
            let (a, b) = (&pts[i], &pts[i + 1]);
            let gap = (b.z[0] - a.z[0]).hypot(b.z[1] - a.z[1]);
            let turn = if i + 2 < pts.len() {
                let c = &pts[i + 2];
                let (u, v) = ([b.z[0] - a.z[0], b.z[1] - a.z[1]], [c.z[0] - b.z[0], c.z[1] - b.z[1]]);
                (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]).abs()
            } else {
                0.0
            };
            if gap > opts.max_gap || turn > opts.max_angle {
                inserts.push(0.5 * (a.phi + b.phi));
            }
        }
        if inserts.is_empty() {
            return Ok(());
        }
        for phi in inserts {
            let n = phi.floor() as i64;
            let (z, _) = param.eval_with(flow, &Float::with_val(bits, phi), n, false)?;
            let at = pts.partition_point(|p| p.phi < phi);
            pts.insert(at, ArcPoint { phi, z: f2(&z) });
        }
    }
    Ok(())
}

/// Distance from the points of `arc` to the level set H₀ = H₀(orbit).
pub fn energy_drift(flow: &Flow, arc: &ManifoldArc) -> f64 {
    let bits = flow.bits();
    let h_base = flow.h0(&arc.param.base).to_f64();
    arc.points
        .iter()
        .map(|p| (flow.h0(&point(bits, p.z[0], p.z[1])).to_f64() - h_base).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn unit_normal_distance(up: &Point, d: &Point) -> Float {
    cross(up, d) / norm(up)
}

pub(crate) fn tangent_offset(up: &Point, d: &Point) -> Float {
    dot(up, d) / norm(up)
}
