//! JSON files for problems, compensators and feedback laws.
//!
//! Matrices are arrays of rows. A time function is either
//! `{"constant": [[..]]}` or `{"grid": {"count": K, "samples": [M0, .., M(K-1)]}}`
//! with samples uniformly spaced on `[0, T]`; an optional `"times"` array
//! is accepted if it is exactly that uniform grid.
//!
//! ```json
//! {
//!   "T": 1.0, "n": 1, "m": 1, "d": 1,
//!   "x0": [1.0],
//!   "coefficients": {
//!     "A": {"constant": [[0.8]]}, "Atilde": ..., "B": ..., "Btilde": ...,
//!     "channels": [{"C": ..., "Ctilde": ..., "D": ..., "Dtilde": ...}]
//!   },
//!   "weights": {
//!     "Q": ..., "Qtilde": ..., "S": ..., "Stilde": ..., "R": ..., "Rtilde": ...,
//!     "G": [[1.0]], "Gtilde": [[0.0]], "ell": [0.0]
//!   }
//! }
//! ```
//!
//! `A`, `B`, `C`, `D`, `Q`, `R` and `G` are required; tilde terms, `S`
//! and `ell` default to zero or absent. A compensator file holds
//! `{"H": {"F0": [[..]], "Fdot": fn}, "K": {...}}` and a law file
//! `{"Theta": fn, "Theta_hat": fn, "c": fn}` with `c` an `m x 1` function.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::compensator::{CompensatorPair, LambdaFunction};
use crate::error::{Error, Result};
use crate::problem::{validate, Channel, CoefficientSet, ProblemSpec, WeightSet};
use crate::simulation::FeedbackLaw;
use crate::timefn::{TimeFunction, TimeGrid};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    count: usize,
    samples: Vec<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum FnFile {
    Constant(Rows),
    Grid(GridFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    #[serde(rename = "C")]
    c: FnFile,
    #[serde(rename = "Ctilde", default, skip_serializing_if = "Option::is_none")]
    c_tilde: Option<FnFile>,
    #[serde(rename = "D")]
    d: FnFile,
    #[serde(rename = "Dtilde", default, skip_serializing_if = "Option::is_none")]
    d_tilde: Option<FnFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientsFile {
    #[serde(rename = "A")]
    a: FnFile,
    #[serde(rename = "Atilde", default, skip_serializing_if = "Option::is_none")]
    a_tilde: Option<FnFile>,
    #[serde(rename = "B")]
    b: FnFile,
    #[serde(rename = "Btilde", default, skip_serializing_if = "Option::is_none")]
    b_tilde: Option<FnFile>,
    channels: Vec<ChannelFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    #[serde(rename = "Q")]
    q: FnFile,
    #[serde(rename = "Qtilde", default, skip_serializing_if = "Option::is_none")]
    q_tilde: Option<FnFile>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    s: Option<FnFile>,
    #[serde(rename = "Stilde", default, skip_serializing_if = "Option::is_none")]
    s_tilde: Option<FnFile>,
    #[serde(rename = "R")]
    r: FnFile,
    #[serde(rename = "Rtilde", default, skip_serializing_if = "Option::is_none")]
    r_tilde: Option<FnFile>,
    #[serde(rename = "G")]
    g: Rows,
    #[serde(rename = "Gtilde", default, skip_serializing_if = "Option::is_none")]
    g_tilde: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ell: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(rename = "T")]
    horizon: f64,
    n: usize,
    m: usize,
    d: usize,
    x0: Vec<f64>,
    coefficients: CoefficientsFile,
    weights: WeightsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LambdaFile {
    #[serde(rename = "F0")]
    f0: Rows,
    #[serde(rename = "Fdot")]
    fdot: FnFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompensatorFile {
    #[serde(rename = "H")]
    h: LambdaFile,
    #[serde(rename = "K")]
    k: LambdaFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawFile {
    #[serde(rename = "Theta")]
    theta: FnFile,
    #[serde(rename = "Theta_hat")]
    theta_hat: FnFile,
    c: FnFile,
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse(format!(
            "{path}: {inner} (line {}, column {})",
            inner.line(),
            inner.column()
        ))
    })
}

fn matrix(name: &str, rows: &Rows, out: &mut Vec<String>) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 {
        out.push(format!("{name}: empty matrix"));
        return DMatrix::zeros(0, 0);
    }
    if let Some(i) = rows.iter().position(|x| x.len() != c) {
        out.push(format!("{name}: row {i} has {} entries, expected {c}", rows[i].len()));
        return DMatrix::zeros(0, 0);
    }
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn function(name: &str, f: &FnFile, horizon: f64, out: &mut Vec<String>) -> TimeFunction {
    match f {
        FnFile::Constant(rows) => TimeFunction::Constant(matrix(name, rows, out)),
        FnFile::Grid(g) => {
            if g.count != g.samples.len() {
                out.push(format!(
                    "{name}: count is {} but {} samples are given",
                    g.count,
                    g.samples.len()
                ));
            }
            if g.samples.len() < 2 {
                out.push(format!("{name}: a grid needs at least 2 samples"));
                return TimeFunction::Constant(DMatrix::zeros(0, 0));
            }
            if let Some(times) = &g.times {
                check_times(name, times, g.samples.len(), horizon, out);
            }
            let samples: Vec<_> = g
                .samples
                .iter()
                .enumerate()
                .map(|(k, s)| matrix(&format!("{name} sample {k}"), s, out))
                .collect();
            match TimeFunction::sampled(horizon, samples) {
                Ok(f) => f,
                Err(e) => {
                    out.push(format!("{name}: {e}"));
                    TimeFunction::Constant(DMatrix::zeros(0, 0))
                }
            }
        }
    }
}

fn check_times(name: &str, times: &[f64], count: usize, horizon: f64, out: &mut Vec<String>) {
    if times.len() != count {
        out.push(format!("{name}: {} times for {count} samples", times.len()));
        return;
    }
    let Ok(grid) = TimeGrid::new(horizon, count - 1) else {
        return;
    };
    let tol = 1e-12 * horizon.max(1.0);
    if let Some(k) = times.iter().enumerate().position(|(k, t)| (t - grid.t(k)).abs() > tol) {
        out.push(format!(
            "{name}: sample times are not the uniform grid on [0, {horizon}] (node {k}: {} instead of {})",
            times[k],
            grid.t(k)
        ));
    }
}

fn optional(
    name: &str,
    f: &Option<FnFile>,
    shape: (usize, usize),
    horizon: f64,
    out: &mut Vec<String>,
) -> TimeFunction {
    match f {
        Some(f) => function(name, f, horizon, out),
        None => TimeFunction::zeros(shape.0, shape.1),
    }
}

fn fn_file(f: &TimeFunction) -> FnFile {
    match f {
        TimeFunction::Constant(m) => FnFile::Constant(rows_of(m)),
        TimeFunction::Sampled { samples, .. } => FnFile::Grid(GridFile {
            count: samples.len(),
            samples: samples.iter().map(rows_of).collect(),
            times: None,
        }),
    }
}

fn nonzero(f: &TimeFunction) -> Option<FnFile> {
    if f.is_constant() && f.stored()[0].iter().all(|v| *v == 0.0) {
        None
    } else {
        Some(fn_file(f))
    }
}

/// Parses and validates a problem, reporting every violation at once.
pub fn problem_from_json(text: &str) -> Result<ProblemSpec> {
    let file: ProblemFile = parse(text)?;
    let (n, m, d, h) = (file.n, file.m, file.d, file.horizon);
    let mut out = Vec::new();
    if !(h.is_finite() && h > 0.0) {
        out.push(format!("T must be positive, got {h}"));
        return Err(Error::Validation(out));
    }
    let c = &file.coefficients;
    if c.channels.len() != d {
        out.push(format!("channels: d = {d} but {} channels are given", c.channels.len()));
    }
    let coeffs = CoefficientSet {
        n,
        m,
        a: function("A", &c.a, h, &mut out),
        a_tilde: optional("Atilde", &c.a_tilde, (n, n), h, &mut out),
        b: function("B", &c.b, h, &mut out),
        b_tilde: optional("Btilde", &c.b_tilde, (n, m), h, &mut out),
        channels: c
            .channels
            .iter()
            .enumerate()
            .map(|(j, ch)| Channel {
                c: function(&format!("C[{j}]"), &ch.c, h, &mut out),
                c_tilde: optional(&format!("Ctilde[{j}]"), &ch.c_tilde, (n, n), h, &mut out),
                d: function(&format!("D[{j}]"), &ch.d, h, &mut out),
                d_tilde: optional(&format!("Dtilde[{j}]"), &ch.d_tilde, (n, m), h, &mut out),
            })
            .collect(),
    };
    let w = &file.weights;
    let weights = WeightSet {
        q: function("Q", &w.q, h, &mut out),
        q_tilde: optional("Qtilde", &w.q_tilde, (n, n), h, &mut out),
        s: optional("S", &w.s, (n, m), h, &mut out),
        s_tilde: optional("Stilde", &w.s_tilde, (n, m), h, &mut out),
        r: function("R", &w.r, h, &mut out),
        r_tilde: optional("Rtilde", &w.r_tilde, (m, m), h, &mut out),
        g: matrix("G", &w.g, &mut out),
        g_tilde: match &w.g_tilde {
            Some(g) => matrix("Gtilde", g, &mut out),
            None => DMatrix::zeros(n, n),
        },
        ell: w.ell.as_ref().map(|v| DVector::from_column_slice(v)),
    };
    let spec = ProblemSpec {
        horizon: h,
        x0: DVector::from_column_slice(&file.x0),
        coeffs,
        weights,
    };
    if out.is_empty() {
        out = validate(&spec);
    }
    if out.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Validation(out))
    }
}

pub fn problem_to_json(spec: &ProblemSpec) -> Result<String> {
    let c = &spec.coeffs;
    let w = &spec.weights;
    let file = ProblemFile {
        horizon: spec.horizon,
        n: spec.n(),
        m: spec.m(),
        d: spec.d(),
        x0: spec.x0.iter().copied().collect(),
        coefficients: CoefficientsFile {
            a: fn_file(&c.a),
            a_tilde: nonzero(&c.a_tilde),
            b: fn_file(&c.b),
            b_tilde: nonzero(&c.b_tilde),
            channels: c
                .channels
                .iter()
                .map(|ch| ChannelFile {
                    c: fn_file(&ch.c),
                    c_tilde: nonzero(&ch.c_tilde),
                    d: fn_file(&ch.d),
                    d_tilde: nonzero(&ch.d_tilde),
                })
                .collect(),
        },
        weights: WeightsFile {
            q: fn_file(&w.q),
            q_tilde: nonzero(&w.q_tilde),
            s: nonzero(&w.s),
            s_tilde: nonzero(&w.s_tilde),
            r: fn_file(&w.r),
            r_tilde: nonzero(&w.r_tilde),
            g: rows_of(&w.g),
            g_tilde: if w.g_tilde.iter().all(|v| *v == 0.0) {
                None
            } else {
                Some(rows_of(&w.g_tilde))
            },
            ell: w.ell.as_ref().map(|v| v.iter().copied().collect()),
        },
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

fn lambda(name: &str, f: &LambdaFile, horizon: f64, out: &mut Vec<String>) -> Option<LambdaFunction> {
    let f0 = matrix(&format!("{name}.F0"), &f.f0, out);
    let fdot = function(&format!("{name}.Fdot"), &f.fdot, horizon, out);
    if !out.is_empty() {
        return None;
    }
    match LambdaFunction::new(f0, fdot) {
        Ok(l) => Some(l),
        Err(e) => {
            out.push(format!("{name}: {e}"));
            None
        }
    }
}

/// Parses a compensator for a problem of state dimension `n` on `[0, horizon]`.
pub fn compensator_from_json(text: &str, n: usize, horizon: f64) -> Result<CompensatorPair> {
    let file: CompensatorFile = parse(text)?;
    let mut out = Vec::new();
    let h = lambda("H", &file.h, horizon, &mut out);
    let k = lambda("K", &file.k, horizon, &mut out);
    for (name, l) in [("H", &h), ("K", &k)] {
        if let Some(l) = l {
            if l.dim() != n {
                out.push(format!("{name}: expected {n}x{n}, got {}x{}", l.dim(), l.dim()));
            }
        }
    }
    match (h, k) {
        (Some(h), Some(k)) if out.is_empty() => Ok(CompensatorPair { h, k }),
        _ => Err(Error::Validation(out)),
    }
}

pub fn compensator_to_json(comp: &CompensatorPair) -> Result<String> {
    let l = |f: &LambdaFunction| LambdaFile {
        f0: rows_of(f.f0()),
        fdot: fn_file(f.fdot()),
    };
    let file = CompensatorFile {
        h: l(&comp.h),
        k: l(&comp.k),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses a feedback law for a problem with dimensions `(n, m)` on `[0, horizon]`.
pub fn law_from_json(text: &str, n: usize, m: usize, horizon: f64) -> Result<FeedbackLaw> {
    let file: LawFile = parse(text)?;
    let mut out = Vec::new();
    let law = FeedbackLaw {
        theta: function("Theta", &file.theta, horizon, &mut out),
        theta_hat: function("Theta_hat", &file.theta_hat, horizon, &mut out),
        c: function("c", &file.c, horizon, &mut out),
    };
    if out.is_empty() {
        if let Err(e) = law.check_dims(n, m) {
            out.push(e.to_string());
        }
    }
    if out.is_empty() {
        Ok(law)
    } else {
        Err(Error::Validation(out))
    }
}

pub fn law_to_json(law: &FeedbackLaw) -> Result<String> {
    let file = LawFile {
        theta: fn_file(&law.theta),
        theta_hat: fn_file(&law.theta_hat),
        c: fn_file(&law.c),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_problem(path: &Path) -> Result<ProblemSpec> {
    problem_from_json(&read(path)?)
}

pub fn load_compensator(path: &Path, spec: &ProblemSpec) -> Result<CompensatorPair> {
    compensator_from_json(&read(path)?, spec.n(), spec.horizon)
}

pub fn load_law(path: &Path, spec: &ProblemSpec) -> Result<FeedbackLaw> {
    law_from_json(&read(path)?, spec.n(), spec.m(), spec.horizon)
}
