//! Direct measurement of the lobe area between the perturbed invariant
//! manifolds of the stroboscopic map.

mod fit;
mod flow;
mod manifold;

use std::time::Instant;

use rug::Float;
use serde::Serialize;

pub use fit::{fit_scaling, sweep, FitOptions, FitResult, Jackknife};
pub use flow::{inverse_map, poincare_map, Flow, FlowOut, Mat2, Point, PoincareMapSpec};
pub use manifold::{
    choose_delta0, energy_drift, find_periodic_orbit, grow_manifold, stable_base, ArcPoint, Branch, GrowOptions,
    ManifoldArc, ManifoldParam, PeriodicOrbit,
};

use self::flow::{cross, dot, norm, solve_cols, sub};
use self::manifold::{tangent_offset, unit_normal_distance};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::numerics::quad::clenshaw_curtis;
use crate::separatrix::{analyze_separatrix, SeparatrixInfo};

#[derive(Clone, Debug)]
pub struct HomoclinicPoint {
    pub z: Point,
    pub phi: Float,
    pub psi: Float,
    /// sine of the angle between the branches
    pub transversality: f64,
    pub residual: f64,
}

impl HomoclinicPoint {
    pub fn z_f64(&self) -> [f64; 2] {
        [self.z[0].to_f64(), self.z[1].to_f64()]
    }
}

#[derive(Clone, Debug)]
pub struct HomoclinicOptions {
    /// half-width of the scan window in periods
    pub window: f64,
    pub samples_per_period: usize,
}

impl Default for HomoclinicOptions {
    fn default() -> Self {
        HomoclinicOptions { window: 0.75, samples_per_period: 16 }
    }
}

/// Signed normal distance from U(φ) to the stable branch.
struct ScanSample {
    phi: Float,
    psi: Float,
    d: Float,
}

fn normal_sample(
    flow: &mut Flow,
    u: &ManifoldParam,
    s: &ManifoldParam,
    phi: &Float,
    psi0: &Float,
) -> Result<ScanSample> {
    let bits = flow.bits();
    let (zu, up) = u.eval(flow, phi, true)?;
    let up = up.expect("tangent");
    let mut psi = psi0.clone();
    for _ in 0..12 {
        let (zs, sp) = s.eval(flow, &psi, true)?;
        let sp = sp.expect("tangent");
        let dz = sub(&zs, &zu);
        let d = unit_normal_distance(&up, &dz);
        let off = tangent_offset(&up, &dz);
        // curvature turns a tangential offset t into a normal error of order t²
        let off2 = Float::with_val(bits, off.square_ref()).to_f64();
        if off2 <= 1e-6 * d.to_f64().abs() || off.to_f64().abs() < (-(bits as f64) / 2.0).exp2() {
            return Ok(ScanSample { phi: phi.clone(), psi, d });
        }
        let g = dot(&up, &dz);
        let gp = dot(&up, &sp);
        psi -= g / gp;
    }
    Err(Error::Numerical("normal projection onto the stable branch did not converge".into()))
}

fn tangent_error(sin_angle: f64) -> Error {
    Error::Numerical(format!("branches are tangent at the homoclinic point (sin angle {sin_angle:.3e})"))
}

/// Re-evaluates the accepted iterate so the returned point matches (phi, psi).
fn refine_final(flow: &mut Flow, u: &ManifoldParam, s: &ManifoldParam, phi: Float, psi: Float, bits: u32) -> Result<HomoclinicPoint> {
    let (zu, up) = u.eval(flow, &phi, true)?;
    let (zs, sp) = s.eval(flow, &psi, true)?;
    let (up, sp) = (up.expect("tangent"), sp.expect("tangent"));
    let res = norm(&sub(&zu, &zs)).to_f64();
    let sin_angle = (cross(&up, &sp) / norm(&up) / norm(&sp)).to_f64().abs();
    if sin_angle < (-(bits as f64) / 2.0).exp2() {
        return Err(tangent_error(sin_angle));
    }
    Ok(HomoclinicPoint { z: zu, phi, psi, transversality: sin_angle, residual: res })
}

fn refine_homoclinic(
    flow: &mut Flow,
    u: &ManifoldParam,
    s: &ManifoldParam,
    mut phi: Float,
    mut psi: Float,
) -> Result<HomoclinicPoint> {
    let bits = flow.bits();
    let tol = (-(bits as f64) + 24.0).exp2();
    // evaluation noise can sit near `tol`; stagnation below this is accepted
    let floor = (-(bits as f64) / 2.0).exp2();
    let mut best: Option<(f64, Float, Float)> = None;
    let mut stalled = 0;
    for _ in 0..40 {
        let (zu, up) = u.eval(flow, &phi, true)?;
        let (zs, sp) = s.eval(flow, &psi, true)?;
        let (up, sp) = (up.expect("tangent"), sp.expect("tangent"));
        let f = sub(&zu, &zs);
        let res = norm(&f).to_f64();
        let sin_angle = (cross(&up, &sp) / norm(&up) / norm(&sp)).to_f64().abs();
        match &best {
            Some((b, _, _)) if res >= 0.5 * b => stalled += 1,
            _ => {
                stalled = 0;
                best = Some((res, phi.clone(), psi.clone()));
            }
        }
        let accept = res <= tol || (stalled >= 3 && best.as_ref().is_some_and(|b| b.0 <= floor));
        if accept {
            if stalled > 0 {
                let (_, bp, bq) = best.take().expect("set above");
                (phi, psi) = (bp, bq);
                return refine_final(flow, u, s, phi, psi, bits);
            }
            if sin_angle < (-(bits as f64) / 2.0).exp2() {
                return Err(tangent_error(sin_angle));
            }
            return Ok(HomoclinicPoint { z: zu, phi, psi, transversality: sin_angle, residual: res });
        }
        let nsp = [Float::with_val(bits, -&sp[0]), Float::with_val(bits, -&sp[1])];
        let rhs = [Float::with_val(bits, -&f[0]), Float::with_val(bits, -&f[1])];
        let (dphi, dpsi) = solve_cols(&up, &nsp, &rhs)?;
        if dphi.to_f64().abs() > 0.5 || dpsi.to_f64().abs() > 0.5 {
            return Err(Error::Numerical("homoclinic Newton step left the lobe".into()));
        }
        phi += dphi;
        psi += dpsi;
    }
    Err(Error::Numerical("homoclinic Newton did not converge".into()))
}

/// Two adjacent transverse homoclinic points nearest the apex, ordered
/// along the unstable branch.
pub fn find_homoclinics(
    flow: &mut Flow,
    u: &ManifoldArc,
    s: &ManifoldArc,
    opts: &HomoclinicOptions,
) -> Result<[HomoclinicPoint; 2]> {
    let bits = flow.bits();
    let (up, sp) = (&u.param, &s.param);
    let m = (2.0 * opts.window * opts.samples_per_period as f64).round() as usize;
    let h = 2.0 * opts.window / m as f64;
    let mut samples: Vec<ScanSample> = Vec::with_capacity(m + 1);
    let mut max_d = 0.0f64;
    for j in 0..=m {
        let off = -opts.window + j as f64 * h;
        let phi = Float::with_val(bits, u.apex_phi + off);
        // parameters run in opposite directions along the loop
        let guess = match samples.len() {
            0 => Float::with_val(bits, s.apex_phi - off),
            1 => Float::with_val(bits, &samples[0].psi - h),
            k => {
                let (a, b) = (&samples[k - 2].psi, &samples[k - 1].psi);
                Float::with_val(bits, b * 2u32) - a
            }
        };
        let smp = normal_sample(flow, up, sp, &phi, &guess)?;
        max_d = max_d.max(smp.d.to_f64().abs());
        samples.push(smp);
    }
    // roots by linear interpolation of the sign changes
    let mut roots: Vec<(f64, Float, Float)> = Vec::new();
    for w in samples.windows(2) {
        let (d0, d1) = (w[0].d.to_f64(), w[1].d.to_f64());
        if d0 == 0.0 || d0.signum() != d1.signum() {
            let t = if d0 == d1 { 0.0 } else { d0 / (d0 - d1) };
            let phi = Float::with_val(bits, &w[1].phi - &w[0].phi) * t + &w[0].phi;
            let psi = Float::with_val(bits, &w[1].psi - &w[0].psi) * t + &w[0].psi;
            roots.push(((phi.to_f64() - u.apex_phi).abs(), phi, psi));
        }
    }
    if roots.len() < 2 {
        return Err(Error::Numerical(format!(
            "found {} sign change(s) of the branch distance (max |d| = {max_d:.3e}); splitting not resolved",
            roots.len()
        )));
    }
    let i0 = (0..roots.len())
        .min_by(|&a, &b| roots[a].0.total_cmp(&roots[b].0))
        .expect("nonempty");
    let i1 = if i0 + 1 < roots.len() && (i0 == 0 || roots[i0 + 1].0 <= roots[i0 - 1].0) { i0 + 1 } else { i0 - 1 };
    let (a, b) = (i0.min(i1), i0.max(i1));
    let p1 = refine_homoclinic(flow, up, sp, roots[a].1.clone(), roots[a].2.clone())?;
    let p2 = refine_homoclinic(flow, up, sp, roots[b].1.clone(), roots[b].2.clone())?;
    if norm(&sub(&p1.z, &p2.z)).to_f64() < 1e-3 * (h * 2.0 * std::f64::consts::PI * flow.spec.eps) {
        return Err(Error::Numerical("both roots converged to the same homoclinic point".into()));
    }
    Ok([p1, p2])
}

#[derive(Clone, Debug, Serialize)]
pub struct LobeArea {
    /// action-sum value
    pub area: f64,
    /// area with all working digits, as decimal text
    pub area_digits: String,
    pub boundary_area: f64,
    pub quad_error: f64,
    pub truncation_error: f64,
    pub est_error: f64,
    pub forward_iterations: usize,
    pub backward_iterations: usize,
}

struct OrbitSum {
    /// Σ over the steps of (action of point 2 − action of point 1)
    diff: Float,
    ends: [Point; 2],
    steps: usize,
}

fn orbit_sum(flow: &mut Flow, pts: [&Point; 2], target: &Point, dir: i64, stop: f64) -> Result<OrbitSum> {
    let bits = flow.bits();
    let mut z = [pts[0].clone(), pts[1].clone()];
    let mut diff = Float::new(bits);
    let mut steps = 0;
    while z.iter().any(|p| norm(&sub(p, target)).to_f64() > stop) {
        if steps > 20_000 {
            return Err(Error::Numerical("homoclinic orbit does not approach the periodic orbit".into()));
        }
        let o1 = flow.run(&z[0], dir, false)?;
        let o2 = flow.run(&z[1], dir, false)?;
        diff += Float::with_val(bits, &o2.action - &o1.action);
        z = [o1.z, o2.z];
        steps += 1;
    }
    Ok(OrbitSum { diff, ends: z, steps })
}

/// ∫ y dx along the chord from a to b.
fn chord(a: &Point, b: &Point) -> Float {
    let bits = a[0].prec();
    Float::with_val(bits, &a[1] + &b[1]) * Float::with_val(bits, &b[0] - &a[0]) / 2u32
}

/// Lobe area from the action sums along the two homoclinic orbits, checked
/// against a Clenshaw–Curtis integral over segments joining the branches.
pub fn lobe_area(
    flow: &mut Flow,
    orbit: &PeriodicOrbit,
    u: &ManifoldParam,
    s: &ManifoldParam,
    pts: &[HomoclinicPoint; 2],
) -> Result<LobeArea> {
    let bits = flow.bits();
    let b = bits as f64 - 24.0;
    let stop = (-b / 4.0).exp2();
    let p_s = stable_base(flow, orbit);
    let fwd = orbit_sum(flow, [&pts[0].z, &pts[1].z], &p_s, 1, stop)?;
    let bwd = orbit_sum(flow, [&pts[0].z, &pts[1].z], &orbit.point, -1, stop)?;
    // backward steps carry minus the action of the earlier point
    let total = Float::with_val(bits, &fwd.diff - &bwd.diff) + chord(&bwd.ends[0], &bwd.ends[1])
        - chord(&fwd.ends[0], &fwd.ends[1]);
    let action = total.abs();
    let trunc = 10.0 * stop.powi(3) + (-b).exp2() * (fwd.steps + bwd.steps) as f64 * 1e3;

    // segments U(φ) → S(ψ(φ)) with ψ linear in φ sweep the lobe exactly
    let (phi1, phi2) = (&pts[0].phi, &pts[1].phi);
    let (psi1, psi2) = (&pts[0].psi, &pts[1].psi);
    let dphi = Float::with_val(bits, phi2 - phi1);
    let slope = Float::with_val(bits, psi2 - psi1) / &dphi;
    let rule = clenshaw_curtis(32, bits);
    let mut vals = Vec::with_capacity(rule.nodes.len());
    for x in &rule.nodes {
        let t = Float::with_val(bits, x + 1u32) / 2u32;
        let phi = Float::with_val(bits, &dphi * &t) + phi1;
        let psi = Float::with_val(bits, &slope * Float::with_val(bits, &phi - phi1)) + psi1;
        let (zu, up) = u.eval(flow, &phi, true)?;
        let (zs, sp) = s.eval(flow, &psi, true)?;
        let (up, sp) = (up.expect("tangent"), sp.expect("tangent"));
        let vel = [
            Float::with_val(bits, &sp[0] * &slope) + &up[0],
            Float::with_val(bits, &sp[1] * &slope) + &up[1],
        ];
        vals.push(cross(&vel, &sub(&zs, &zu)) / 2u32);
    }
    let half = Float::with_val(bits, &dphi / 2u32);
    let q33: Float = rule.weights.iter().zip(&vals).map(|(w, v)| Float::with_val(bits, w * v)).fold(Float::new(bits), |a, x| a + x);
    let rule17 = clenshaw_curtis(16, bits);
    let q17: Float = rule17
        .weights
        .iter()
        .zip(vals.iter().step_by(2))
        .map(|(w, v)| Float::with_val(bits, w * v))
        .fold(Float::new(bits), |a, x| a + x);
    let boundary = Float::with_val(bits, &q33 * &half).abs();
    let quad_err = Float::with_val(bits, (q33 - q17) * &half).abs().to_f64();
    let a = action.to_f64();
    let disc = (a - boundary.to_f64()).abs();
    let floor = a * (-(bits as f64) / 2.0).exp2() + (-b).exp2();
    let combined = quad_err + trunc + floor;
    if disc > 10.0 * combined.max(1e-12 * a) {
        return Err(Error::Numerical(format!(
            "area methods disagree: action sum {a:.12e}, boundary integral {:.12e} (estimated error {combined:.3e})",
            boundary.to_f64()
        )));
    }
    let digits = ((bits as f64) * std::f64::consts::LOG10_2).floor() as usize;
    Ok(LobeArea {
        area: a,
        area_digits: action.to_string_radix(10, Some(digits.min(60))),
        boundary_area: boundary.to_f64(),
        quad_error: quad_err,
        truncation_error: trunc,
        est_error: (quad_err + trunc).max(disc),
        forward_iterations: fwd.steps,
        backward_iterations: bwd.steps,
    })
}

#[derive(Clone, Debug)]
pub struct MeasureOptions {
    pub tau0: f64,
    /// None: max(128, ⌈2(a/ε)/ln 2⌉ + 64)
    pub bits: Option<u32>,
    pub grow: GrowOptions,
    pub homoclinic: HomoclinicOptions,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions { tau0: 0.0, bits: None, grow: GrowOptions::default(), homoclinic: HomoclinicOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub model: String,
    pub eps: f64,
    pub tau0: f64,
    pub bits: u32,
    pub area: f64,
    pub est_error: f64,
    pub lobe: LobeArea,
    pub homoclinic: [[f64; 2]; 2],
    pub transversality: [f64; 2],
    pub fixed_point: [f64; 2],
    pub multiplier: f64,
    pub delta0: [f64; 2],
    pub max_det_error: f64,
    pub periods_integrated: u64,
    pub seconds: f64,
}

impl Measurement {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

/// Full pipeline at one ε: periodic orbit, both branches, homoclinic pair,
/// lobe area.
pub fn measure(model: &SystemModel, eps: f64, opts: &MeasureOptions) -> Result<Measurement> {
    let start = Instant::now();
    let sep = analyze_separatrix(&model.potential, 128)?;
    let bits = opts.bits.unwrap_or_else(|| PoincareMapSpec::schedule_bits(sep.a_f64(), eps));
    let sep = if bits > 128 { analyze_separatrix(&model.potential, bits)? } else { sep };
    measure_with(model, &sep, eps, bits, opts, start)
}

fn measure_with(
    model: &SystemModel,
    sep: &SeparatrixInfo,
    eps: f64,
    bits: u32,
    opts: &MeasureOptions,
    start: Instant,
) -> Result<Measurement> {
    if model.mu == 0.0 || model.perturbation.is_empty() {
        return Err(Error::Validation("unperturbed system: the branches coincide and there is no lobe".into()));
    }
    let mut flow = Flow::new(PoincareMapSpec::new(model.clone(), eps, opts.tau0, bits)?)?;
    let orbit = find_periodic_orbit(&mut flow)?;
    let u = grow_manifold(&mut flow, &orbit, sep, Branch::Unstable, &opts.grow)?;
    let s = grow_manifold(&mut flow, &orbit, sep, Branch::Stable, &opts.grow)?;
    let pts = find_homoclinics(&mut flow, &u, &s, &opts.homoclinic)?;
    let lobe = lobe_area(&mut flow, &orbit, &u.param, &s.param, &pts)?;
    Ok(Measurement {
        model: model.name.clone(),
        eps,
        tau0: opts.tau0,
        bits,
        area: lobe.area,
        est_error: lobe.est_error,
        homoclinic: [pts[0].z_f64(), pts[1].z_f64()],
        transversality: [pts[0].transversality, pts[1].transversality],
        fixed_point: [orbit.point[0].to_f64(), orbit.point[1].to_f64()],
        multiplier: orbit.multiplier.to_f64(),
        delta0: [u.param.delta0.to_f64(), s.param.delta0.to_f64()],
        max_det_error: flow.max_det_error,
        periods_integrated: flow.periods_integrated,
        seconds: start.elapsed().as_secs_f64(),
        lobe,
    })
}

/// Distance between the branches when μ = 0: both are the same loop, so
/// this measures the numerical noise floor.
pub fn unperturbed_gap(model: &SystemModel, eps: f64, bits: u32) -> Result<f64> {
    let sep = analyze_separatrix(&model.potential, bits)?;
    let m = model.with_mu(0.0);
    let mut flow = Flow::new(PoincareMapSpec::new(m, eps, 0.0, bits)?)?;
    let orbit = find_periodic_orbit(&mut flow)?;
    let g = GrowOptions::default();
    let u = grow_manifold(&mut flow, &orbit, &sep, Branch::Unstable, &g)?;
    let s = grow_manifold(&mut flow, &orbit, &sep, Branch::Stable, &g)?;
    let mut worst = 0.0f64;
    for k in -4..=4 {
        let off = k as f64 / 8.0;
        let phi = Float::with_val(bits, u.apex_phi + off);
        let smp = normal_sample(&mut flow, &u.param, &s.param, &phi, &Float::with_val(bits, s.apex_phi - off))?;
        worst = worst.max(smp.d.to_f64().abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_the_orbit_without_forcing_at_x0() {
        // x⁴ sin τ vanishes to third order at the origin
        let m = SystemModel::duffing_power(4, 0, 0.5);
        let mut f = Flow::new(PoincareMapSpec::new(m, 0.25, 0.0, 128).unwrap()).unwrap();
        let o = find_periodic_orbit(&mut f).unwrap();
        assert!(o.point[0].is_zero() && o.point[1].is_zero());
        let lam = (2.0 * std::f64::consts::PI * 0.25f64).exp();
        assert!((o.multiplier.to_f64() - lam).abs() < 1e-12);
        assert!(o.det_error < 1e-30);
    }

    #[test]
    fn forced_orbit_is_small() {
        let eps = 0.25;
        let m = SystemModel::duffing_power(1, 2, 1.0);
        let mut f = Flow::new(PoincareMapSpec::new(m, eps, 0.0, 128).unwrap()).unwrap();
        let o = find_periodic_orbit(&mut f).unwrap();
        let size = o.point[0].to_f64().abs() + o.point[1].to_f64().abs();
        assert!(size > 0.0 && size <= 2.0 * eps.powi(3), "{size}");
        assert!(o.residual <= (-(128.0f64) + 24.0).exp2());
    }

    #[test]
    fn zero_forcing_is_rejected_for_measurement() {
        let m = SystemModel::duffing_power(1, 2, 0.0);
        assert!(matches!(measure(&m, 0.25, &MeasureOptions::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn unperturbed_branches_coincide() {
        let g = unperturbed_gap(&SystemModel::duffing_power(1, 2, 1.0), 0.3, 128).unwrap();
        assert!(g < 1e-25, "{g}");
    }
}
