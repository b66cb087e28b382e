//! Inner Hamilton–Jacobi equation near the singularity and its Stokes data.
//!
//! With ψ₀ = −1/((2r−1)z^{2r−1}) + μ̂ψ̄ the equation becomes
//! (∂_z + ∂_τ)ψ̄ = N(∂_zψ̄), N(w) = −½μ̂z^{2r}w² − z^{−ℓ} Σ A_l(τ)(1 + μ̂z^{2r}w)^l.
//! The characteristics are horizontal, so each line Im z = −Y is solved on
//! its own: Fourier modes in τ, Chebyshev–Lobatto panels in Re z, and
//! exact exponential weights for e^{−ik(z−s)}. Arithmetic is f64.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::melnikov::{constant_b, functions_aqf, CFourier};
use crate::model::{rational_to_f64, Kind, Rational, SystemModel};
use crate::numerics::quad::gauss_legendre;
use crate::separatrix::SeparatrixInfo;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Unstable,
    Stable,
}

#[derive(Clone, Debug)]
pub struct InnerProblem {
    pub r: Rational,
    pub ell: Rational,
    pub mu_hat: Complex64,
    /// A_l as maps harmonic → coefficient of e^{ikτ}
    pub a: Vec<BTreeMap<i64, Complex64>>,
    pub f1: BTreeMap<i64, Complex64>,
    pub b: Complex64,
    pub c_plus: Complex64,
    pub kf: usize,
    /// the rays run from Re z = ∓length to the overlap
    pub length: f64,
    pub panel_width: f64,
    pub panel_nodes: usize,
    pub kappa: f64,
    pub theta: f64,
}

fn to_map(f: &CFourier) -> BTreeMap<i64, Complex64> {
    f.coeffs.keys().map(|&k| (k, f.coeff_c64(k))).collect()
}

impl InnerProblem {
    pub fn new(r: Rational, ell: Rational, mu_hat: f64, a: Vec<BTreeMap<i64, Complex64>>, kf: usize) -> Result<Self> {
        if ell < r * 2 {
            return Err(Error::Validation(format!(
                "inner problem needs ell ≥ 2r (ell = {}, r = {})",
                ell, r
            )));
        }
        if kf == 0 {
            return Err(Error::Validation("Fourier truncation must be ≥ 1".into()));
        }
        let top = a.iter().flat_map(|m| m.keys()).map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
        if top > kf {
            return Err(Error::Validation(format!("A_l has harmonic {top} beyond the truncation K_F = {kf}")));
        }
        Ok(InnerProblem {
            r,
            ell,
            mu_hat: Complex64::new(mu_hat, 0.0),
            a,
            f1: BTreeMap::new(),
            b: Complex64::new(0.0, 0.0),
            c_plus: Complex64::new(1.0, 0.0),
            kf,
            length: 160.0,
            panel_width: 2.0,
            panel_nodes: 16,
            kappa: 8.0,
            theta: (std::f64::consts::PI / 3.0).tan() / 2.0,
        })
    }

    /// Inner problem of a polynomial model: A_l, F₁, b and C₊ from the
    /// separatrix and the perturbation.
    pub fn from_model(model: &SystemModel, sep: &SeparatrixInfo, mu_hat: f64, kf: usize, bits: u32) -> Result<Self> {
        if model.perturbation.kind == Kind::Trigonometric {
            return Err(Error::Validation("trig inner constants unsupported".into()));
        }
        let f = functions_aqf(model, sep, bits)?;
        let ell = crate::model::perturbation_order_ell(&model.perturbation, sep.r, model.potential.degree())?;
        let mut p = InnerProblem::new(sep.r, ell, mu_hat, f.a.iter().map(to_map).collect(), kf)?;
        p.f1 = f.f.get(1).map(to_map).unwrap_or_default();
        p.b = constant_b(&f, sep.r).to_c64();
        p.c_plus = sep.c_plus.to_c64();
        Ok(p)
    }

    fn two_r(&self) -> f64 {
        rational_to_f64(&(self.r * 2))
    }

    /// Largest |Re z| in the overlap of both sectors at depth y.
    pub fn overlap_half_width(&self, y: f64) -> f64 {
        (y - self.kappa) / self.theta
    }

    fn singular_eq(&self) -> bool {
        self.ell == self.r * 2
    }
}

/// Reference panel on [0, h]: Chebyshev–Lobatto nodes, barycentric
/// weights, differentiation matrix, and per-mode exponential weights.
#[derive(Debug)]
struct Panel {
    h: f64,
    s: Vec<f64>,
    bw: Vec<f64>,
    d: Vec<Vec<f64>>,
    /// fwd[k][j][m] = ∫_0^{s_j} e^{−ik(s_j−s)} L_m(s) ds
    fwd: Vec<Vec<Vec<Complex64>>>,
    /// bwd[k][j][m] = −∫_{s_j}^h e^{−ik(s_j−s)} L_m(s) ds
    bwd: Vec<Vec<Vec<Complex64>>>,
    kf: i64,
}

impl Panel {
    fn new(h: f64, n: usize, kf: i64) -> Self {
        let s: Vec<f64> = (0..n)
            .map(|j| 0.5 * h * (1.0 - (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos()))
            .collect();
        let bw: Vec<f64> = (0..n)
            .map(|j| {
                let sg = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    0.5 * sg
                } else {
                    sg
                }
            })
            .collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i][j] = bw[j] / bw[i] / (s[i] - s[j]);
                }
            }
            d[i][i] = -(0..n).filter(|&j| j != i).map(|j| d[i][j]).sum::<f64>();
        }
        let gl = gauss_legendre(48, 64);
        let gn: Vec<f64> = gl.nodes.iter().map(|x| x.to_f64()).collect();
        let gw: Vec<f64> = gl.weights.iter().map(|x| x.to_f64()).collect();
        let mut p = Panel { h, s, bw, d, fwd: Vec::new(), bwd: Vec::new(), kf };
        let integ = |p: &Panel, k: i64, j: usize, lo: f64, hi: f64| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            if hi <= lo {
                return out;
            }
            for (x, w) in gn.iter().zip(&gw) {
                let t = lo + 0.5 * (hi - lo) * (x + 1.0);
                let e = (-I * k as f64 * (p.s[j] - t)).exp() * (0.5 * (hi - lo) * w);
                for (m, l) in p.lagrange(t).into_iter().enumerate() {
                    out[m] += e * l;
                }
            }
            out
        };
        for k in -kf..=kf {
            let f: Vec<_> = (0..n).map(|j| integ(&p, k, j, 0.0, p.s[j])).collect();
            let b: Vec<_> = (0..n).map(|j| integ(&p, k, j, p.s[j], h).into_iter().map(|v| -v).collect()).collect();
            p.fwd.push(f);
            p.bwd.push(b);
        }
        p
    }

    fn lagrange(&self, t: f64) -> Vec<f64> {
        let n = self.s.len();
        if let Some(j) = self.s.iter().position(|&x| x == t) {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            return v;
        }
        let terms: Vec<f64> = (0..n).map(|j| self.bw[j] / (t - self.s[j])).collect();
        let tot: f64 = terms.iter().sum();
        terms.into_iter().map(|x| x / tot).collect()
    }

    /// Derivatives of the Lagrange basis at t.
    fn lagrange_deriv(&self, t: f64) -> Vec<f64> {
        let l = self.lagrange(t);
        let n = self.s.len();
        // p'(t) = Σ_j l_j(t) (D p)_j is exact for the interpolant
        (0..n).map(|m| (0..n).map(|j| l[j] * self.d[j][m]).sum()).collect()
    }

    fn kidx(&self, k: i64) -> usize {
        (k + self.kf) as usize
    }
}

/// τ-grid transforms for modes −K..K.
struct Dft {
    kf: i64,
    nt: usize,
    e: Vec<Vec<Complex64>>,
}

impl Dft {
    fn new(kf: i64) -> Self {
        let nt = (4 * kf + 4) as usize;
        let e = (0..nt)
            .map(|t| {
                let tau = 2.0 * std::f64::consts::PI * t as f64 / nt as f64;
                (-kf..=kf).map(|k| (I * k as f64 * tau).exp()).collect()
            })
            .collect();
        Dft { kf, nt, e }
    }

    fn tau(&self, t: usize) -> f64 {
        2.0 * std::f64::consts::PI * t as f64 / self.nt as f64
    }

    fn to_grid(&self, modes: &[Complex64]) -> Vec<Complex64> {
        self.e.iter().map(|row| row.iter().zip(modes).map(|(a, b)| a * b).sum()).collect()
    }

    fn to_modes(&self, grid: &[Complex64]) -> Vec<Complex64> {
        let nm = (2 * self.kf + 1) as usize;
        let mut out = vec![Complex64::new(0.0, 0.0); nm];
        for (row, g) in self.e.iter().zip(grid) {
            for (o, e) in out.iter_mut().zip(row) {
                *o += g * e.conj();
            }
        }
        out.iter_mut().for_each(|o| *o /= self.nt as f64);
        out
    }
}

fn series_on_grid(m: &BTreeMap<i64, Complex64>, dft: &Dft) -> Vec<Complex64> {
    (0..dft.nt)
        .map(|t| m.iter().map(|(k, c)| c * (I * *k as f64 * dft.tau(t)).exp()).sum())
        .collect()
}

/// One branch of the inner solution along Im z = −y.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub branch: Branch,
    pub y: f64,
    pub x0: f64,
    pub panels: usize,
    /// c[p][j][k+K]: modes of ψ̄ at panel p, node j
    pub c: Vec<Vec<Vec<Complex64>>>,
    /// modes of ∂_zψ̄
    pub w: Vec<Vec<Vec<Complex64>>>,
    pub iterations: usize,
    pub increment: f64,
    pub mu_hat: Complex64,
    pub two_r: f64,
    pub kf: usize,
    panel: std::sync::Arc<Panel>,
}

impl InnerSolution {
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let h = self.panel.h;
        let t = (x - self.x0) / h;
        if t < -1e-12 || t > self.panels as f64 + 1e-12 {
            return Err(Error::Validation(format!("Re z = {x} is outside the computed ray")));
        }
        let p = (t.floor() as usize).min(self.panels - 1);
        Ok((p, (x - self.x0 - p as f64 * h).clamp(0.0, h)))
    }

    fn interp(&self, data: &[Vec<Vec<Complex64>>], x: f64) -> Result<Vec<Complex64>> {
        let (p, t) = self.locate(x)?;
        let l = self.panel.lagrange(t);
        let nm = 2 * self.kf + 1;
        Ok((0..nm).map(|k| l.iter().zip(&data[p]).map(|(a, row)| row[k] * a).sum()).collect())
    }

    /// Modes of ψ̄ at z = x − iy.
    pub fn psi_bar_modes(&self, x: f64) -> Result<Vec<Complex64>> {
        self.interp(&self.c, x)
    }

    pub fn w_bar_modes(&self, x: f64) -> Result<Vec<Complex64>> {
        self.interp(&self.w, x)
    }

    /// ∂_zψ₀ = z^{−2r} + μ̂ ∂_zψ̄ at (x − iy, τ).
    pub fn w_full(&self, x: f64, tau: f64) -> Result<Complex64> {
        let z = Complex64::new(x, -self.y);
        let m = self.w_bar_modes(x)?;
        let kf = self.kf as i64;
        let wb: Complex64 = (-kf..=kf).zip(&m).map(|(k, c)| c * (I * k as f64 * tau).exp()).sum();
        Ok(z.powf(-self.two_r) + self.mu_hat * wb)
    }

    /// Node positions (Re z) and the ψ̄ modes there.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, &Vec<Complex64>)> + '_ {
        self.c.iter().enumerate().flat_map(move |(p, col)| {
            col.iter()
                .enumerate()
                .map(move |(j, v)| (self.x0 + p as f64 * self.panel.h + self.panel.s[j], v))
        })
    }
}

struct Workspace<'a> {
    prob: &'a InnerProblem,
    dft: Dft,
    a_grid: Vec<Vec<Complex64>>,
    two_r: f64,
    ell: f64,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a InnerProblem) -> Self {
        let dft = Dft::new(prob.kf as i64);
        let a_grid = prob.a.iter().map(|m| series_on_grid(m, &dft)).collect();
        Workspace { prob, dft, a_grid, two_r: prob.two_r(), ell: rational_to_f64(&prob.ell) }
    }

    /// Modes of N(w) at z.
    fn rhs(&self, z: Complex64, w_modes: &[Complex64]) -> Vec<Complex64> {
        let mu = self.prob.mu_hat;
        let z2r = z.powf(self.two_r);
        let zl = z.powf(-self.ell);
        let wg = self.dft.to_grid(w_modes);
        let g: Vec<Complex64> = (0..self.dft.nt)
            .map(|t| {
                let w = wg[t];
                let base = Complex64::new(1.0, 0.0) + mu * z2r * w;
                let mut pw = Complex64::new(1.0, 0.0);
                let mut s = Complex64::new(0.0, 0.0);
                for a in &self.a_grid {
                    s += a[t] * pw;
                    pw *= base;
                }
                -0.5 * mu * z2r * w * w - zl * s
            })
            .collect();
        self.dft.to_modes(&g)
    }
}

/// Decaying solution of (∂_z + ik)c = R at a ray end from its asymptotic
/// expansion; for k = 0 the tail of ∫R is taken as a power law.
fn boundary_value(k: i64, z: Complex64, r: Complex64, r1: Complex64, r2: Complex64) -> Complex64 {
    if k != 0 {
        let ik = I * k as f64;
        r / ik - r1 / (ik * ik) + r2 / (ik * ik * ik)
    } else {
        if r.norm() == 0.0 {
            return r;
        }
        let p = -z * r1 / r;
        if p.re > 1.5 {
            z * r / (1.0 - p)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

fn panel_cache(h: f64, n: usize, kf: i64) -> std::sync::Arc<Panel> {
    use std::sync::{Arc, Mutex, OnceLock};
    type Key = (u64, usize, i64);
    static CACHE: OnceLock<Mutex<Vec<(Key, Arc<Panel>)>>> = OnceLock::new();
    let key = (h.to_bits(), n, kf);
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut g = cache.lock().expect("panel cache");
    if let Some((_, p)) = g.iter().find(|(k, _)| *k == key) {
        return p.clone();
    }
    let p = Arc::new(Panel::new(h, n, kf));
    g.push((key, p.clone()));
    p
}

/// Fixed-point solve of one branch on the line Im z = −y.
/// The unstable ray runs from Re z = −length to +x_end, the stable one
/// from −x_end to +length.
pub fn solve_inner_branch(prob: &InnerProblem, branch: Branch, y: f64, x_end: f64, tol: f64) -> Result<InnerSolution> {
    if !(y > 0.0) {
        return Err(Error::Validation("depth must be positive".into()));
    }
    let h = prob.panel_width;
    let n = prob.panel_nodes;
    let kf = prob.kf as i64;
    let nm = (2 * kf + 1) as usize;
    let panel = panel_cache(h, n, kf);
    let ws = Workspace::new(prob);
    let far = (prob.length / h).ceil() as usize;
    let near = (x_end / h).ceil().max(0.0) as usize;
    let panels = far + near;
    let x0 = match branch {
        Branch::Unstable => -(far as f64) * h,
        Branch::Stable => -(near as f64) * h,
    };
    let zs: Vec<Vec<Complex64>> = (0..panels)
        .map(|p| panel.s.iter().map(|s| Complex64::new(x0 + p as f64 * h + s, -y)).collect())
        .collect();
    let zero = vec![vec![vec![Complex64::new(0.0, 0.0); nm]; n]; panels];
    let mut w = zero.clone();
    let mut c = zero.clone();
    let mut increment = f64::INFINITY;
    let mut first = None;
    let mut iterations = 0;
    for it in 1..=60 {
        iterations = it;
        let rhs: Vec<Vec<Vec<Complex64>>> =
            (0..panels).map(|p| (0..n).map(|j| ws.rhs(zs[p][j], &w[p][j])).collect()).collect();
        let mut cn = zero.clone();
        // boundary at the far end
        let (bp, bj) = match branch {
            Branch::Unstable => (0, 0),
            Branch::Stable => (panels - 1, n - 1),
        };
        let mut edge = vec![Complex64::new(0.0, 0.0); nm];
        for (ki, e) in edge.iter_mut().enumerate() {
            let k = ki as i64 - kf;
            let rv: Vec<Complex64> = (0..n).map(|j| rhs[bp][j][ki]).collect();
            let d1: Vec<Complex64> = (0..n).map(|i| (0..n).map(|m| rv[m] * panel.d[i][m]).sum()).collect();
            let r1 = d1[bj];
            let r2: Complex64 = (0..n).map(|m| d1[m] * panel.d[bj][m]).sum();
            *e = boundary_value(k, zs[bp][bj], rv[bj], r1, r2);
        }
        let order: Vec<usize> = match branch {
            Branch::Unstable => (0..panels).collect(),
            Branch::Stable => (0..panels).rev().collect(),
        };
        for p in order {
            for ki in 0..nm {
                let k = (ki as i64 - kf) as f64;
                let wts = match branch {
                    Branch::Unstable => &panel.fwd[panel.kidx(ki as i64 - kf)],
                    Branch::Stable => &panel.bwd[panel.kidx(ki as i64 - kf)],
                };
                for j in 0..n {
                    let dx = match branch {
                        Branch::Unstable => panel.s[j],
                        Branch::Stable => panel.s[j] - h,
                    };
                    let mut v = (-I * k * dx).exp() * edge[ki];
                    for m in 0..n {
                        v += wts[j][m] * rhs[p][m][ki];
                    }
                    cn[p][j][ki] = v;
                }
            }
            let next = match branch {
                Branch::Unstable => n - 1,
                Branch::Stable => 0,
            };
            edge = cn[p][next].clone();
        }
        let mut wn = zero.clone();
        let mut inc = 0.0f64;
        for p in 0..panels {
            for j in 0..n {
                for ki in 0..nm {
                    let k = (ki as i64 - kf) as f64;
                    wn[p][j][ki] = rhs[p][j][ki] - I * k * cn[p][j][ki];
                    inc = inc.max((cn[p][j][ki] - c[p][j][ki]).norm());
                }
            }
        }
        c = cn;
        w = wn;
        increment = inc;
        if !inc.is_finite() {
            break;
        }
        if it >= 2 {
            let f = *first.get_or_insert(inc);
            if inc > 1e3 * f {
                break;
            }
        }
        if inc < tol {
            break;
        }
    }
    if !(increment < tol) {
        return Err(Error::Numerical(format!(
            "inner fixed-point iteration did not converge (last increment {increment:.3e} after {iterations} iterations); \
             increase the depth/kappa or reduce |mu_hat|"
        )));
    }
    Ok(InnerSolution {
        branch,
        y,
        x0,
        panels,
        c,
        w,
        iterations,
        increment,
        mu_hat: prob.mu_hat,
        two_r: prob.two_r(),
        kf: prob.kf,
        panel,
    })
}

/// Max HJ residual |∂_τψ̄ + ∂_zψ̄ − N(∂_zψ̄)| between collocation nodes, with
/// ∂_zψ̄ taken from the panel interpolant of ψ̄.
pub fn residual(prob: &InnerProblem, sol: &InnerSolution, x_from: f64, x_to: f64) -> Result<f64> {
    let ws = Workspace::new(prob);
    let p = &sol.panel;
    let kf = sol.kf as i64;
    let mut worst = 0.0f64;
    for (pi, col) in sol.c.iter().enumerate() {
        let base = sol.x0 + pi as f64 * p.h;
        for j in 0..p.s.len() - 1 {
            let t = 0.5 * (p.s[j] + p.s[j + 1]);
            let x = base + t;
            if x < x_from || x > x_to {
                continue;
            }
            let l = p.lagrange(t);
            let dl = p.lagrange_deriv(t);
            let nm = col[0].len();
            let cv: Vec<Complex64> = (0..nm).map(|k| l.iter().zip(col).map(|(a, r)| r[k] * a).sum()).collect();
            let dv: Vec<Complex64> = (0..nm).map(|k| dl.iter().zip(col).map(|(a, r)| r[k] * a).sum()).collect();
            let z = Complex64::new(x, -sol.y);
            let n = ws.rhs(z, &dv);
            for ki in 0..nm {
                let k = (ki as i64 - kf) as f64;
                worst = worst.max((dv[ki] + I * k * cv[ki] - n[ki]).norm());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct DifferenceSample {
    pub z: Complex64,
    /// modes of ψ̄^u − ψ̄^s; Δψ₀ = μ̂ times this
    pub delta_bar: Vec<Complex64>,
}

/// Δψ̄ = ψ̄^u − ψ̄^s at Re z = x on the common line (gauge K^u = K^s = 0).
pub fn inner_difference(u: &InnerSolution, s: &InnerSolution, xs: &[f64]) -> Result<Vec<DifferenceSample>> {
    if u.branch != Branch::Unstable || s.branch != Branch::Stable || u.y != s.y {
        return Err(Error::Validation("need an unstable and a stable solution on the same line".into()));
    }
    xs.iter()
        .map(|&x| {
            let a = u.psi_bar_modes(x)?;
            let b = s.psi_bar_modes(x)?;
            Ok(DifferenceSample { z: Complex64::new(x, -u.y), delta_bar: a.iter().zip(&b).map(|(p, q)| p - q).collect() })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StokesData {
    pub chi_minus1: Complex64,
    pub chi_minus2: Option<Complex64>,
    pub f_mu: Complex64,
    pub b: Complex64,
    pub f1: BTreeMap<i64, Complex64>,
    /// rms fit residual relative to |χ^[−1]|
    pub residual: f64,
    /// d ln|Δψ̄| / d(Im z) at Re z = 0
    pub decay_slope: f64,
    pub hj_residual: f64,
    pub depths: Vec<f64>,
}

impl StokesData {
    pub fn to_json(&self) -> serde_json::Value {
        let c = |z: Complex64| serde_json::json!([z.re, z.im]);
        serde_json::json!({
            "chi_minus1": c(self.chi_minus1),
            "chi_minus2": self.chi_minus2.map(c),
            "f_mu": c(self.f_mu),
            "abs_f_mu": self.f_mu.norm(),
            "b": c(self.b),
            "residual": self.residual,
            "hj_residual": self.hj_residual,
            "decay_slope": self.decay_slope,
            "depths": self.depths,
        })
    }
}

fn complex_lsq(rows: &[Vec<Complex64>], obs: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
    let m = rows.len();
    let n = rows[0].len();
    if m < n {
        return Err(Error::Validation("not enough samples for the χ fit".into()));
    }
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(obs);
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("χ fit failed: {e}")))?;
    let res = &a * &sol - &b;
    let rms = (res.iter().map(|r| r.norm_sqr()).sum::<f64>() / m as f64).sqrt();
    Ok((sol.iter().copied().collect(), rms))
}

/// Fits χ^[−1] from Δψ̄·e^{i(z − τ + μ̂ g_model)} averaged over τ, with
/// corrections in powers of 1/z.
pub fn extract_chi(samples: &[DifferenceSample], prob: &InnerProblem) -> Result<StokesData> {
    let kf = prob.kf as i64;
    let dft = Dft::new(kf);
    let mu = prob.mu_hat;
    let f1g = series_on_grid(&prob.f1, &dft);
    let singular_eq = prob.singular_eq();
    let d = if singular_eq { 1.0 } else { rational_to_f64(&(prob.ell - prob.r * 2)).min(1.0) };
    let mut depths: Vec<f64> = samples.iter().map(|s| -s.z.im).collect();
    depths.sort_by(f64::total_cmp);
    depths.dedup();
    if depths.len() < 3 {
        return Err(Error::Validation("χ extraction needs samples at ≥ 3 depths".into()));
    }
    let scale = samples.iter().flat_map(|s| &s.delta_bar).map(|c| c.norm()).fold(0.0, f64::max);
    let mut rows = Vec::new();
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for s in samples {
        let grid = dft.to_grid(&s.delta_bar);
        let z = s.z;
        let (mut acc1, mut acc2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for (t, g) in grid.iter().enumerate() {
            let tau = dft.tau(t);
            let gm = if singular_eq { -f1g[t] - mu * prob.b * z.ln() } else { Complex64::new(0.0, 0.0) };
            let ph = z - tau + mu * gm;
            acc1 += g * (I * ph).exp();
            acc2 += g * (I * 2.0 * ph).exp();
        }
        e1.push(acc1 / dft.nt as f64);
        e2.push(acc2 / dft.nt as f64);
        let zi = z.powf(-d);
        rows.push(vec![Complex64::new(1.0, 0.0), zi, zi * zi]);
    }
    let (coef, rms) = complex_lsq(&rows, &e1)?;
    let chi = coef[0];
    let (coef2, _) = complex_lsq(&rows, &e2)?;
    // exponential trend at Re z = 0
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.z.re == 0.0)
        .map(|s| (-s.z.im, s.delta_bar[(kf + 1) as usize].norm().ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        // ln|Δ| against Im z = −Y
        -sxy / sxx
    } else {
        f64::NAN
    };
    let rel = rms / chi.norm().max(f64::MIN_POSITIVE);
    if rel > 0.1 {
        return Err(Error::Numerical(format!(
            "asymptotic regime not reached, increase Y (fit residual {rel:.3} of |chi|)"
        )));
    }
    let _ = scale;
    Ok(StokesData {
        chi_minus1: chi,
        chi_minus2: Some(coef2[0]),
        f_mu: prob.c_plus * prob.c_plus * chi,
        b: prob.b,
        f1: prob.f1.clone(),
        residual: rel,
        decay_slope: slope,
        hj_residual: 0.0,
        depths,
    })
}

#[derive(Clone, Debug)]
pub struct InnerRun {
    pub depth: f64,
    pub tol: f64,
    pub x_samples: Vec<f64>,
}

impl Default for InnerRun {
    fn default() -> Self {
        InnerRun { depth: 14.0, tol: 1e-13, x_samples: vec![-2.0, -1.0, 0.0, 1.0, 2.0] }
    }
}

/// Solves both branches at depths around `run.depth` and extracts the
/// Stokes constant.
pub fn stokes_constant(prob: &InnerProblem, run: &InnerRun) -> Result<StokesData> {
    let xmax = run.x_samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let depths: Vec<f64> = (-2..=2)
        .map(|d| run.depth + d as f64)
        .filter(|&y| prob.overlap_half_width(y) > xmax)
        .collect();
    if depths.len() < 3 {
        return Err(Error::Validation(format!(
            "depth {} leaves fewer than 3 lines inside the overlap (kappa = {})",
            run.depth, prob.kappa
        )));
    }
    let mut samples = Vec::new();
    let mut hj: f64 = 0.0;
    let mut shallow = 0.0f64;
    let mut psi_scale = 0.0f64;
    for &y in &depths {
        let u = solve_inner_branch(prob, Branch::Unstable, y, xmax, run.tol)?;
        let s = solve_inner_branch(prob, Branch::Stable, y, xmax, run.tol)?;
        hj = hj.max(residual(prob, &u, -xmax, xmax)?).max(residual(prob, &s, -xmax, xmax)?);
        let d = inner_difference(&u, &s, &run.x_samples)?;
        if y == depths[0] {
            shallow = d.iter().flat_map(|s| &s.delta_bar).map(|c| c.norm()).fold(0.0, f64::max);
            psi_scale = u.psi_bar_modes(0.0)?.iter().map(|c| c.norm()).fold(0.0, f64::max);
        }
        samples.extend(d);
    }
    if shallow < psi_scale * 2f64.powi(-37) {
        return Err(Error::Precision(format!(
            "inner difference {shallow:.2e} is at the rounding level of psi_bar ({psi_scale:.2e})"
        )));
    }
    let mut st = extract_chi(&samples, prob)?;
    st.hj_residual = hj;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separatrix::analyze_separatrix;
    use crate::model::Potential;

    fn duffing4(mu_hat: f64) -> InnerProblem {
        let sep = analyze_separatrix(&Potential::duffing(), 128).unwrap();
        InnerProblem::from_model(&SystemModel::duffing_power(4, 0, 1.0), &sep, mu_hat, 8, 128).unwrap()
    }

    #[test]
    fn problem_data_for_duffing_x4() {
        let p = duffing4(1e-3);
        assert_eq!(p.a.len(), 1);
        // A₀ = −2 sin τ = i e^{iτ} − i e^{−iτ}
        assert!((p.a[0][&1] - I).norm() < 1e-14 && (p.a[0][&-1] + I).norm() < 1e-14);
        assert!(p.b.norm() < 1e-14);
        let sep = analyze_separatrix(&Potential::duffing(), 128).unwrap();
        assert!(InnerProblem::from_model(&SystemModel::duffing_power(3, 0, 1.0), &sep, 0.1, 8, 128).is_err());
    }

    #[test]
    fn zero_mu_hat_gives_unperturbed_w() {
        let p = duffing4(0.0);
        let u = solve_inner_branch(&p, Branch::Unstable, 12.0, 2.0, 1e-13).unwrap();
        for x in [-5.0, 0.0, 1.5] {
            let z = Complex64::new(x, -12.0);
            assert!((u.w_full(x, 0.4).unwrap() - z.powf(-4.0)).norm() < 1e-20);
        }
        let s = solve_inner_branch(&p, Branch::Stable, 12.0, 2.0, 1e-13).unwrap();
        let d = inner_difference(&u, &s, &[0.0]).unwrap();
        let dpsi: Vec<Complex64> = d[0].delta_bar.iter().map(|c| c * p.mu_hat).collect();
        assert!(dpsi.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn linear_limit_matches_residue() {
        // μ̂ = 0: Δψ̄ mode 1 is −i e^{−iz} ∫ e^{is}s^{−4} ds = −iπ/3 e^{−iz}
        let p = duffing4(0.0);
        for y in [10.0, 13.0] {
            let u = solve_inner_branch(&p, Branch::Unstable, y, 1.0, 1e-14).unwrap();
            let s = solve_inner_branch(&p, Branch::Stable, y, 1.0, 1e-14).unwrap();
            for x in [-1.0, 0.0, 0.5] {
                let d = inner_difference(&u, &s, &[x]).unwrap();
                let z = Complex64::new(x, -y);
                let expect = -I * std::f64::consts::PI / 3.0 * (-I * z).exp();
                let got = d[0].delta_bar[9];
                assert!((got - expect).norm() < 1e-7 * expect.norm(), "y={y} x={x}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn residual_and_decay() {
        let p = duffing4(0.1);
        let tol = 1e-13;
        let u = solve_inner_branch(&p, Branch::Unstable, 12.0, 2.0, tol).unwrap();
        assert!(u.iterations <= 20, "{}", u.iterations);
        let r = residual(&p, &u, -150.0, 2.0).unwrap();
        eprintln!("hj residual {r:e}");
        assert!(r <= 10.0 * tol, "{r}");
        let ell = 4;
        let mut worst = 0.0f64;
        let mut far = 0.0f64;
        for (x, m) in u.nodes() {
            let z = Complex64::new(x, -12.0);
            let v = m.iter().map(|c| c.norm()).fold(0.0, f64::max) * z.norm().powi(ell);
            worst = worst.max(v);
            if x < -100.0 {
                far = far.max(v);
            }
        }
        assert!(worst < 10.0 && far <= worst);
    }

    #[test]
    fn stokes_constant_duffing_x4_small_mu() {
        let p = duffing4(1e-3);
        let st = stokes_constant(&p, &InnerRun::default()).unwrap();
        let f0 = Complex64::new(0.0, 2.0 * std::f64::consts::PI / 3.0);
        assert!((st.f_mu - f0).norm() < 0.02 * f0.norm(), "{}", st.f_mu);
        assert!((st.decay_slope - 1.0).abs() < 0.05, "{}", st.decay_slope);
        assert!(st.residual < 0.1);
    }

    #[test]
    fn stokes_constant_is_odd_to_first_order() {
        let mu = 0.02;
        let fp = stokes_constant(&duffing4(mu), &InnerRun::default()).unwrap().f_mu;
        let fm = stokes_constant(&duffing4(-mu), &InnerRun::default()).unwrap().f_mu;
        let f0 = stokes_constant(&duffing4(0.0), &InnerRun::default()).unwrap().f_mu;
        // entire in μ̂: f(μ̂) + f(−μ̂) − 2f(0) = O(μ̂²)
        assert!((fp + fm - 2.0 * f0).norm() < 50.0 * mu * mu * f0.norm());
    }

    #[test]
    fn degenerate_lambda_stokes_vanishes() {
        let sep = analyze_separatrix(&Potential::duffing(), 128).unwrap();
        let m = SystemModel::duffing_lambda(-2f64.sqrt(), 0, 1.0);
        let p = InnerProblem::from_model(&m, &sep, 0.0, 8, 128).unwrap();
        let u = solve_inner_branch(&p, Branch::Unstable, 12.0, 1.0, 1e-14).unwrap();
        let s = solve_inner_branch(&p, Branch::Stable, 12.0, 1.0, 1e-14).unwrap();
        let d = inner_difference(&u, &s, &[0.0]).unwrap();
        assert!(d[0].delta_bar[9].norm() < 1e-10);
    }
}
