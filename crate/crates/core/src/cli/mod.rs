//! Command-line front end.

mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::inner::{stokes_constant, InnerProblem, InnerRun};
use crate::melnikov::{asymptotic_constants, melnikov_coefficients, model_mu_hat, predict_area, FSource};
use crate::model::{classify_regime, format_rational, model_from_json, SystemModel};
use crate::numerics::big::{check_bits, default_bits};
use crate::numerics::BigComplex;
use crate::separatrix::analyze_separatrix;
use crate::splitting::{fit_scaling, measure, FitOptions, MeasureOptions};

#[derive(Parser, Debug)]
#[command(name = "sepsplit", version, about = "Exponentially small separatrix splitting laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum FSel {
    /// Melnikov constant f₀
    Melnikov,
    /// inner-equation Stokes constant f(μ̂), singular regimes only
    Inner,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hypotheses, regime and separatrix data as JSON
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Predicted lobe areas as CSV
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// "start:stop:count:{geom|lin}" or a single value
        #[arg(long)]
        eps: String,
        #[arg(long, value_enum, default_value = "melnikov")]
        f_source: FSel,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Melnikov coefficients M^[k] as CSV
    Melnikov {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps: String,
        #[arg(long, default_value_t = 1)]
        k_max: i64,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inner-equation Stokes data as JSON
    Inner {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mu_hat: f64,
        #[arg(long, default_value_t = 14.0)]
        depth: f64,
        #[arg(long, default_value_t = 8)]
        kf: usize,
        #[arg(long, default_value_t = 1e-13)]
        tol: f64,
    },
    /// Direct lobe-area measurement as JSON
    Measure {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0.0)]
        tau0: f64,
        #[arg(long)]
        bits: Option<u32>,
    },
    /// Measurements over an ε grid, appended to a CSV (rows present are skipped)
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tau0: f64,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Fit ln A = c₀ + c₁ ln ε + c₂/ε to a sweep CSV
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fixed_a: Option<f64>,
        #[arg(long)]
        fixed_beta: Option<f64>,
    },
    /// SVG plot of ln(A e^{a/ε}) against ln ε
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses an ε grid "start:stop:count:{geom|lin}" (or one number) into a
/// strictly decreasing list.
pub fn parse_eps_grid(spec: &str) -> crate::Result<Vec<f64>> {
    let bad = |m: &str| Error::Validation(format!("eps grid '{spec}': {m}"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
    let mut v = match parts.as_slice() {
        [one] => vec![num(one)?],
        [a, b, n, kind] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n.parse().map_err(|_| bad("count is not an integer"))?;
            if n == 0 {
                return Err(bad("count must be ≥ 1"));
            }
            if n == 1 {
                vec![a]
            } else {
                match *kind {
                    "geom" => {
                        if !(a > 0.0 && b > 0.0) {
                            return Err(bad("geometric grid needs positive ends"));
                        }
                        let r = (b / a).powf(1.0 / (n - 1) as f64);
                        (0..n).map(|i| if i == n - 1 { b } else { a * r.powi(i as i32) }).collect()
                    }
                    "lin" => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
                    k => return Err(bad(&format!("unknown spacing '{k}'"))),
                }
            }
        }
        _ => return Err(bad("expected start:stop:count:{geom|lin}")),
    };
    if v.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(bad("all values must be positive"));
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    Ok(v)
}

fn load_model(path: &Path) -> anyhow::Result<SystemModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model file {}", path.display()))?;
    Ok(model_from_json(&text)?)
}

fn bits_or_env(b: Option<u32>) -> crate::Result<u32> {
    check_bits(b.unwrap_or_else(default_bits))
}

/// Explicit flag, then SEPSPLIT_BITS, else the measurement schedule.
fn measure_bits(b: Option<u32>) -> crate::Result<Option<u32>> {
    match b {
        Some(b) => Ok(Some(check_bits(b)?)),
        None if std::env::var("SEPSPLIT_BITS").is_ok() => Ok(Some(default_bits())),
        None => Ok(None),
    }
}

fn c2(z: &BigComplex) -> [f64; 2] {
    let v = z.to_c64();
    [v.re, v.im]
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    eps: f64,
    area: f64,
    est_error: f64,
    bits: u32,
    seconds: f64,
}

fn read_sweep(path: &Path) -> anyhow::Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r.with_context(|| format!("malformed row in {}", path.display()))?);
    }
    Ok(rows)
}

/// Hypothesis flags, regime, separatrix data and asymptotic constants.
pub fn analyze_json(m: &SystemModel, bits: u32) -> crate::Result<serde_json::Value> {
    let bits = check_bits(bits)?;
    let sep = analyze_separatrix(&m.potential, bits)?;
    let rep = classify_regime(m, &sep)?;
    let flags: Vec<_> = rep
        .hypothesis_flags
        .iter()
        .map(|f| serde_json::json!({"name": f.name, "passed": f.passed, "message": f.message}))
        .collect();
    let mut v = serde_json::json!({
        "model": m.name,
        "bits": bits,
        "separatrix": sep.to_json(),
        "regime": rep.regime.to_string(),
        "ell": format_rational(&rep.ell),
        "r": format_rational(&rep.r),
        "eta": format_rational(&m.eta),
        "eta_star": format_rational(&rep.eta_star),
        "mu_hat_exponent": format_rational(&rep.mu_hat_exponent),
        "hypotheses": flags,
    });
    match asymptotic_constants(m, &sep, bits) {
        Ok(c) => v["constants"] = c.to_json(),
        Err(e) => v["constants_error"] = serde_json::json!(e.to_string()),
    }
    Ok(v)
}

fn analyze(out: &mut dyn Write, model: &Path, bits: Option<u32>) -> anyhow::Result<()> {
    let m = load_model(model)?;
    let v = analyze_json(&m, bits_or_env(bits)?)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
    Ok(())
}

fn predict(out: &mut dyn Write, model: &Path, eps: &str, fsel: FSel, bits: Option<u32>, path: Option<&Path>) -> anyhow::Result<()> {
    let m = load_model(model)?;
    let grid = parse_eps_grid(eps)?;
    let bits = bits_or_env(bits)?;
    let sep = analyze_separatrix(&m.potential, bits)?;
    let c = asymptotic_constants(&m, &sep, bits)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "eps", "area", "formula", "f_re", "f_im", "f_source", "mu_hat", "error_nu", "error_form", "caveats", "bits",
    ])?;
    for e in grid {
        let mu_hat = model_mu_hat(&m, &c, e);
        let src = match fsel {
            FSel::Inner if m.mu != 0.0 => {
                let p = InnerProblem::from_model(&m, &sep, mu_hat, 8, bits)?;
                FSource::InnerFMu(BigComplex::from_c64(bits, stokes_constant(&p, &InnerRun::default())?.f_mu))
            }
            _ => FSource::MelnikovF0,
        };
        let p = predict_area(&m, &sep, &c, e, &src, bits)?;
        let f = c2(&p.f_used);
        w.write_record([
            e.to_string(),
            format!("{:e}", p.area.to_f64()),
            p.formula_id.as_str().to_string(),
            f[0].to_string(),
            f[1].to_string(),
            if p.f_from_inner { "inner" } else { "melnikov" }.to_string(),
            mu_hat.to_string(),
            format_rational(&p.error_nu),
            format!("{:?}", p.error_form),
            p.caveats().join(";"),
            bits.to_string(),
        ])?;
    }
    emit(out, path, &String::from_utf8(w.into_inner()?)?)
}

fn melnikov(out: &mut dyn Write, model: &Path, eps: &str, k_max: i64, bits: Option<u32>, path: Option<&Path>) -> anyhow::Result<()> {
    let m = load_model(model)?;
    let grid = parse_eps_grid(eps)?;
    let bits = bits_or_env(bits)?;
    let sep = analyze_separatrix(&m.potential, bits)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eps", "k", "re", "im", "est_error", "method", "bits"])?;
    for e in grid {
        for c in melnikov_coefficients(&m, &sep, e, k_max, bits)? {
            let v = c.value.to_c64();
            w.write_record([
                e.to_string(),
                c.k.to_string(),
                format!("{:e}", v.re),
                format!("{:e}", v.im),
                format!("{:e}", c.est_error),
                serde_json::to_value(c.method)?.as_str().unwrap_or("").to_string(),
                bits.to_string(),
            ])?;
        }
    }
    emit(out, path, &String::from_utf8(w.into_inner()?)?)
}

fn sweep(model: &Path, eps: &str, out_path: &Path, tau0: f64, bits: Option<u32>, jobs: usize) -> anyhow::Result<()> {
    let m = load_model(model)?;
    let grid = parse_eps_grid(eps)?;
    let bits = measure_bits(bits)?;
    let done: Vec<f64> = if out_path.exists() { read_sweep(out_path)?.iter().map(|r| r.eps).collect() } else { Vec::new() };
    let todo: Vec<f64> = grid
        .into_iter()
        .filter(|e| !done.iter().any(|d| (d - e).abs() <= 1e-12 * e.abs()))
        .collect();
    let file = fs::OpenOptions::new().create(true).append(true).open(out_path)?;
    let fresh = file.metadata()?.len() == 0;
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(fresh).from_writer(file));
    let failures = Mutex::new(Vec::new());
    let opts = MeasureOptions { tau0, bits, ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| {
        todo.par_iter().for_each(|&e| match measure(&m, e, &opts) {
            Ok(r) => {
                let row = SweepRow { eps: e, area: r.area, est_error: r.est_error, bits: r.bits, seconds: r.seconds };
                let mut w = writer.lock().unwrap();
                let res = w.serialize(&row).and_then(|_| w.flush().map_err(csv::Error::from));
                if let Err(err) = res {
                    failures.lock().unwrap().push((e, Error::Io(std::io::Error::other(err.to_string()))));
                }
            }
            Err(err) => {
                eprintln!("eps {e}: {err}");
                failures.lock().unwrap().push((e, err));
            }
        })
    });
    let mut failures = failures.into_inner().unwrap();
    if let Some((e, err)) = failures.pop() {
        let n = failures.len() + 1;
        return Err(anyhow::Error::new(err).context(format!("{n} sweep point(s) failed, last at eps {e}")));
    }
    Ok(())
}

fn fit(out: &mut dyn Write, input: &Path, fixed_a: Option<f64>, fixed_beta: Option<f64>) -> anyhow::Result<()> {
    let rows = read_sweep(input)?;
    if rows.len() < 4 {
        bail!(Error::Validation(format!("fit needs at least 4 measurements, {} found", rows.len())));
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let area: Vec<f64> = rows.iter().map(|r| r.area).collect();
    let f = fit_scaling(&eps, &area, &FitOptions { fixed_a, fixed_beta })?;
    writeln!(out, "{}", serde_json::to_string_pretty(&f.to_json())?)?;
    Ok(())
}

fn report(input: &Path, model: &Path, out_path: &Path) -> anyhow::Result<()> {
    let m = load_model(model)?;
    let mut rows = read_sweep(input)?;
    if rows.is_empty() {
        bail!(Error::Validation(format!("{} has no measurements", input.display())));
    }
    rows.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    let bits = bits_or_env(None)?;
    let sep = analyze_separatrix(&m.potential, bits)?;
    let a = sep.a_f64();
    let y = |e: f64, area: f64| area.ln() + a / e;
    let mut series = vec![svg::Series {
        label: "measured".into(),
        points: rows.iter().map(|r| (r.eps.ln(), y(r.eps, r.area))).collect(),
        color: "#c0392b",
        markers: true,
    }];
    if let Ok(c) = asymptotic_constants(&m, &sep, bits) {
        let mut pts = Vec::new();
        for r in &rows {
            if let Ok(p) = predict_area(&m, &sep, &c, r.eps, &FSource::MelnikovF0, bits) {
                pts.push((r.eps.ln(), y(r.eps, p.area.to_f64())));
            }
        }
        series.push(svg::Series { label: "prediction".into(), points: pts, color: "#2471a3", markers: false });
    }
    if rows.len() >= 3 {
        let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let area: Vec<f64> = rows.iter().map(|r| r.area).collect();
        if let Ok(f) = fit_scaling(&eps, &area, &FitOptions::default()) {
            let pts = eps.iter().map(|&e| (e.ln(), f.k.ln() + f.beta * e.ln() - f.a_fit / e + a / e)).collect();
            series.push(svg::Series {
                label: format!("fit: a={:.4}, beta={:.3}", f.a_fit, f.beta),
                points: pts,
                color: "#7d7d7d",
                markers: false,
            });
        }
    }
    let plot = svg::Plot {
        title: format!("{}: lobe area", m.name),
        x_label: "ln eps".into(),
        y_label: "ln(A e^(a/eps))".into(),
        series,
    };
    fs::write(out_path, plot.render()).with_context(|| format!("writing {}", out_path.display()))?;
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.cmd {
        Command::Analyze { model, bits } => analyze(out, &model, bits),
        Command::Predict { model, eps, f_source, bits, out: path } => predict(out, &model, &eps, f_source, bits, path.as_deref()),
        Command::Melnikov { model, eps, k_max, bits, out: path } => melnikov(out, &model, &eps, k_max, bits, path.as_deref()),
        Command::Inner { model, mu_hat, depth, kf, tol } => {
            let m = load_model(&model)?;
            let sep = analyze_separatrix(&m.potential, bits_or_env(None)?)?;
            let p = InnerProblem::from_model(&m, &sep, mu_hat, kf, sep.bits())?;
            let run = InnerRun { depth, tol, ..Default::default() };
            let s = stokes_constant(&p, &run)?;
            let mut v = s.to_json();
            v["mu_hat"] = serde_json::json!(mu_hat);
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
            Ok(())
        }
        Command::Measure { model, eps, tau0, bits } => {
            let m = load_model(&model)?;
            let opts = MeasureOptions { tau0, bits: measure_bits(bits)?, ..Default::default() };
            let r = measure(&m, eps, &opts)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&r.to_json())?)?;
            Ok(())
        }
        Command::Sweep { model, eps, out: path, tau0, bits, jobs } => sweep(&model, &eps, &path, tau0, bits, jobs),
        Command::Fit { input, fixed_a, fixed_beta } => fit(out, &input, fixed_a, fixed_beta),
        Command::Report { input, model, out: path } => report(&input, &model, &path),
    }
}

/// Exit status for an error chain: the library error's code if present,
/// otherwise 2 (input problems).
pub fn exit_code_of(err: &anyhow::Error) -> i32 {
    err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::exit_code).unwrap_or(2)
}

/// Runs the command line `argv` (program name first), writing results to
/// `out` and diagnostics to stderr. Returns the process exit status.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_of(&e)
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(argv, &mut lock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn eps_grid_forms() {
        assert_eq!(parse_eps_grid("0.2").unwrap(), vec![0.2]);
        let g = parse_eps_grid("0.3:0.08:6:geom").unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[5] - 0.08).abs() < 1e-15);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        let l = parse_eps_grid("0.1:0.3:3:lin").unwrap();
        assert_eq!(l.len(), 3);
        assert!((l[1] - 0.2).abs() < 1e-15 && l[0] > l[2]);
    }

    #[test]
    fn eps_grid_errors() {
        for bad in ["", "a", "0.1:0.2:0:geom", "0.1:0.2:3:log", "-0.1:0.2:3:geom", "0.1:0.2", "0"] {
            assert!(matches!(parse_eps_grid(bad), Err(Error::Validation(_))), "{bad}");
        }
    }

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let v = anyhow::Error::new(Error::Validation("x".into()));
        let n = anyhow::Error::new(Error::Numerical("x".into())).context("outer");
        assert_eq!(exit_code_of(&v), 2);
        assert_eq!(exit_code_of(&n), 3);
        assert_eq!(exit_code_of(&anyhow!("plain")), 2);
    }

    #[test]
    fn usage_errors_exit_2() {
        let mut sink = Vec::new();
        assert_eq!(run_with(["sepsplit", "frobnicate"], &mut sink), 2);
        assert_eq!(run_with(["sepsplit", "--help"], &mut sink), 0);
    }
}
