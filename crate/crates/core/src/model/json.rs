//! JSON model files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::*;

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FourierJson {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    cos: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    sin: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialJson {
    kind: Kind,
    coefficients: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    sin_coefficients: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermJson {
    x_power: i32,
    #[serde(default)]
    y_power: u32,
    fourier: FourierJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationJson {
    kind: Kind,
    #[serde(default)]
    terms: Vec<TermJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    linear: Option<FourierJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EtaJson {
    Num(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    name: String,
    potential: PotentialJson,
    perturbation: PerturbationJson,
    eta: EtaJson,
    mu: f64,
}

fn key(s: &str) -> Result<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Validation(format!("key '{s}' is not a nonnegative decimal integer")));
    }
    s.parse().map_err(|_| Error::Validation(format!("key '{s}' out of range")))
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("{what} is not finite")))
    }
}

fn fourier_from(j: FourierJson) -> Result<FourierSeries> {
    let mut s = FourierSeries::new();
    for (k, v) in &j.cos {
        let n = key(k)?;
        let v = finite(*v, "Fourier coefficient")?;
        if n == 0 {
            s.mean += v;
        } else if v != 0.0 {
            s.harmonics.entry(n).or_insert((0.0, 0.0)).0 += v;
        }
    }
    for (k, v) in &j.sin {
        let n = key(k)?;
        let v = finite(*v, "Fourier coefficient")?;
        if n == 0 {
            if v != 0.0 {
                return Err(Error::Validation("sin harmonic 0 is meaningless".into()));
            }
        } else if v != 0.0 {
            s.harmonics.entry(n).or_insert((0.0, 0.0)).1 += v;
        }
    }
    Ok(s)
}

fn fourier_to(s: &FourierSeries) -> FourierJson {
    let mut j = FourierJson::default();
    if s.mean != 0.0 {
        j.cos.insert("0".into(), s.mean);
    }
    for (&n, &(c, si)) in &s.harmonics {
        if c != 0.0 {
            j.cos.insert(n.to_string(), c);
        }
        if si != 0.0 {
            j.sin.insert(n.to_string(), si);
        }
    }
    j
}

fn coeff_map(m: &BTreeMap<String, f64>) -> Result<Vec<(u32, f64)>> {
    m.iter().map(|(k, v)| Ok((key(k)?, finite(*v, "potential coefficient")?))).collect()
}

/// Parses and validates a model file.
pub fn model_from_json(text: &str) -> Result<SystemModel> {
    let j: ModelJson = serde_json::from_str(text)?;
    let potential = match j.potential.kind {
        Kind::Polynomial => {
            if !j.potential.sin_coefficients.is_empty() {
                return Err(Error::Validation("sin_coefficients only apply to trigonometric potentials".into()));
            }
            Potential::polynomial(&coeff_map(&j.potential.coefficients)?)?
        }
        Kind::Trigonometric => Potential::trigonometric(
            &coeff_map(&j.potential.coefficients)?,
            &coeff_map(&j.potential.sin_coefficients)?,
        )?,
    };
    let terms = j
        .perturbation
        .terms
        .into_iter()
        .map(|t| Ok(Term { x_power: t.x_power, y_power: t.y_power, series: fourier_from(t.fourier)? }))
        .collect::<Result<Vec<_>>>()?;
    let linear = j.perturbation.linear.map(fourier_from).transpose()?;
    let perturbation = PerturbationModel { kind: j.perturbation.kind, terms, linear };
    let eta = match j.eta {
        EtaJson::Num(v) => rational_from_f64(v)?,
        EtaJson::Text(s) => parse_rational(&s)?,
    };
    SystemModel::new(&j.name, potential, perturbation, eta, finite(j.mu, "mu")?)
}

pub fn model_to_json(m: &SystemModel) -> String {
    let coeffs = |c: &BTreeMap<u32, f64>| c.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
    let eta = if m.eta.is_integer() {
        EtaJson::Num(*m.eta.numer() as f64)
    } else {
        EtaJson::Text(format_rational(&m.eta))
    };
    let j = ModelJson {
        name: m.name.clone(),
        potential: PotentialJson {
            kind: m.potential.kind,
            coefficients: coeffs(&m.potential.coefficients),
            sin_coefficients: coeffs(&m.potential.sin_coefficients),
        },
        perturbation: PerturbationJson {
            kind: m.perturbation.kind,
            terms: m
                .perturbation
                .terms
                .iter()
                .map(|t| TermJson { x_power: t.x_power, y_power: t.y_power, fourier: fourier_to(&t.series) })
                .collect(),
            linear: m.perturbation.linear.as_ref().map(fourier_to),
        },
        eta,
        mu: m.mu,
    };
    serde_json::to_string_pretty(&j).expect("model serialization")
}
