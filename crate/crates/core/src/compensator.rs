//! Relaxed compensators for indefinite weights: absolutely continuous
//! symmetric shifts `(H, K)` of the cost, the shifted weight quadruple,
//! the matrix inequalities characterising admissible shifts and the
//! identities linking the original and shifted problems.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{is_exactly_symmetric, max_abs, min_eigenvalue, symmetrize};
use crate::problem::{check_condition_pd, NodeMargin, ProblemSpec};
use crate::riccati::{solve_denominator, solve_riccati};
use crate::simulation::{propagate_moments, FeedbackLaw};
use crate::timefn::{clamp_time, TimeFunction, TimeGrid};

/// `F(t) = F0 + int_0^t fdot(s) ds` with bounded `fdot`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaFunction {
    f0: DMatrix<f64>,
    fdot: TimeFunction,
    /// Integral of `fdot` up to each sample node (sampled `fdot` only).
    cumulative: Vec<DMatrix<f64>>,
}

impl LambdaFunction {
    pub fn new(f0: DMatrix<f64>, fdot: TimeFunction) -> Result<Self> {
        let n = f0.nrows();
        if !f0.is_square() || fdot.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "F0 is {}x{}, fdot is {:?}",
                f0.nrows(),
                f0.ncols(),
                fdot.shape()
            )));
        }
        if f0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("F0 has a non-finite entry".into()));
        }
        for (k, m) in fdot.stored().iter().enumerate() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMatrix(format!("fdot: non-finite entry at node {k}")));
            }
            if !is_exactly_symmetric(m) {
                return Err(Error::InvalidMatrix(format!("fdot: asymmetric sample at node {k}")));
            }
        }
        if !is_exactly_symmetric(&f0) {
            return Err(Error::InvalidMatrix("F0 is not symmetric".into()));
        }
        let cumulative = match &fdot {
            TimeFunction::Constant(_) => Vec::new(),
            TimeFunction::Sampled { horizon, samples } => {
                let h = horizon / (samples.len() - 1) as f64;
                let mut acc = DMatrix::zeros(n, n);
                let mut out = vec![acc.clone()];
                for w in samples.windows(2) {
                    acc += (&w[0] + &w[1]) * (0.5 * h);
                    out.push(acc.clone());
                }
                out
            }
        };
        Ok(LambdaFunction { f0, fdot, cumulative })
    }

    /// The function with `F(T) = f_end` and derivative `fdot`.
    pub fn anchored_at_end(f_end: DMatrix<f64>, fdot: TimeFunction, horizon: f64) -> Result<Self> {
        let probe = LambdaFunction::new(DMatrix::zeros(f_end.nrows(), f_end.ncols()), fdot)?;
        let f0 = symmetrize(&(f_end - probe.integral(horizon)?));
        LambdaFunction::new(f0, probe.fdot)
    }

    pub fn zero(n: usize) -> Self {
        LambdaFunction {
            f0: DMatrix::zeros(n, n),
            fdot: TimeFunction::zeros(n, n),
            cumulative: Vec::new(),
        }
    }

    pub fn constant(value: DMatrix<f64>) -> Result<Self> {
        let n = value.nrows();
        LambdaFunction::new(value, TimeFunction::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn f0(&self) -> &DMatrix<f64> {
        &self.f0
    }

    pub fn fdot(&self) -> &TimeFunction {
        &self.fdot
    }

    /// `int_0^t fdot`, exact for piecewise-linear samples.
    fn integral(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.fdot {
            TimeFunction::Constant(m) => Ok(m * t),
            TimeFunction::Sampled { horizon, samples } => {
                let t = clamp_time(t, *horizon)?;
                let cells = samples.len() - 1;
                let h = horizon / cells as f64;
                let s = t / h;
                let nearest = s.round();
                if (s - nearest).abs() <= 1e-9 {
                    return Ok(self.cumulative[nearest as usize].clone());
                }
                let i = (s.floor() as usize).min(cells - 1);
                let w = s - i as f64;
                let (a, b) = (&samples[i], &samples[i + 1]);
                Ok(&self.cumulative[i] + (a * w + (b - a) * (0.5 * w * w)) * h)
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(symmetrize(&(&self.f0 + self.integral(t)?)))
    }

    pub fn deriv(&self, t: f64) -> Result<DMatrix<f64>> {
        self.fdot.eval(t)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        LambdaFunction {
            f0: &self.f0 * alpha,
            fdot: self.fdot.scale(alpha),
            cumulative: self.cumulative.iter().map(|m| m * alpha).collect(),
        }
    }

    pub fn add(&self, other: &LambdaFunction) -> Result<Self> {
        LambdaFunction::new(symmetrize(&(&self.f0 + &other.f0)), self.fdot.add(&other.fdot)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorPair {
    pub h: LambdaFunction,
    pub k: LambdaFunction,
}

impl CompensatorPair {
    pub fn zero(n: usize) -> Self {
        CompensatorPair {
            h: LambdaFunction::zero(n),
            k: LambdaFunction::zero(n),
        }
    }

    pub fn neg(&self) -> Self {
        CompensatorPair {
            h: self.h.scale(-1.0),
            k: self.k.scale(-1.0),
        }
    }

    pub fn add(&self, other: &CompensatorPair) -> Result<Self> {
        Ok(CompensatorPair {
            h: self.h.add(&other.h)?,
            k: self.k.add(&other.k)?,
        })
    }
}

/// Shifted weights at one time; the terminal pair does not depend on `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedQuadruple {
    pub q: DMatrix<f64>,
    pub q_hat: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_hat: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
}

pub fn shifted_quadruple(spec: &ProblemSpec, comp: &CompensatorPair, t: f64) -> Result<ShiftedQuadruple> {
    let sn = spec.at(t)?;
    let n = spec.n();
    if comp.h.dim() != n || comp.k.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "compensator has size {}/{}, state dimension is {n}",
            comp.h.dim(),
            comp.k.dim()
        )));
    }
    let h = comp.h.eval(t)?;
    let k = comp.k.eval(t)?;
    let hdot = comp.h.deriv(t)?;
    let kdot = comp.k.deriv(t)?;
    let hat = &sn.hat;

    let mut q = &hdot + &h * &sn.a + sn.a.transpose() * &h + &sn.q;
    let mut s = &h * &sn.b + &sn.s;
    let mut r = sn.r.clone();
    for (c, d) in sn.c.iter().zip(&sn.d) {
        q += c.transpose() * &h * c;
        s += c.transpose() * &h * d;
        r += d.transpose() * &h * d;
    }
    let mut q_hat = &kdot + &k * &hat.a + hat.a.transpose() * &k + &hat.q;
    let mut s_hat = &k * &hat.b + &hat.s;
    let mut r_hat = hat.r.clone();
    for (c, d) in hat.c.iter().zip(&hat.d) {
        q_hat += c.transpose() * &h * c;
        s_hat += c.transpose() * &h * d;
        r_hat += d.transpose() * &h * d;
    }
    let horizon = spec.horizon;
    Ok(ShiftedQuadruple {
        q: symmetrize(&q),
        q_hat: symmetrize(&q_hat),
        s,
        s_hat,
        r: symmetrize(&r),
        r_hat: symmetrize(&r_hat),
        g: symmetrize(&(spec.g() - comp.h.eval(horizon)?)),
        g_hat: symmetrize(&(spec.g_hat() - comp.k.eval(horizon)?)),
    })
}

/// The problem with the same dynamics and the shifted cost. Weights are
/// sampled at the nodes and midpoints of `grid`, so Runge-Kutta solves on
/// `grid` read them exactly.
pub fn shifted_problem(spec: &ProblemSpec, comp: &CompensatorPair, grid: &TimeGrid) -> Result<ProblemSpec> {
    let samples = TimeGrid::new(spec.horizon, 2 * grid.steps())?;
    let quads: Vec<ShiftedQuadruple> = samples
        .times()
        .map(|t| shifted_quadruple(spec, comp, t))
        .collect::<Result<_>>()?;
    let build = |f: &dyn Fn(&ShiftedQuadruple) -> DMatrix<f64>| {
        TimeFunction::sampled(spec.horizon, quads.iter().map(f).collect())
    };
    let mut out = spec.clone();
    let w = &mut out.weights;
    w.q = build(&|x| x.q.clone())?;
    w.q_tilde = build(&|x| symmetrize(&(&x.q_hat - &x.q)))?;
    w.s = build(&|x| x.s.clone())?;
    w.s_tilde = build(&|x| &x.s_hat - &x.s)?;
    w.r = build(&|x| x.r.clone())?;
    w.r_tilde = build(&|x| symmetrize(&(&x.r_hat - &x.r)))?;
    let last = &quads[quads.len() - 1];
    w.g = last.g.clone();
    w.g_tilde = symmetrize(&(&last.g_hat - &last.g));
    Ok(out)
}

/// Clause-by-clause outcome of the compensator inequalities.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RcReport {
    /// `Q^HK - S^HK (R^HK)^{-1} S^HK^T >= -tol` at every node.
    pub h_riccati: bool,
    /// `H(T) <= G` within `tol`.
    pub h_terminal: bool,
    /// `sum D^T H D + R >= delta I` at every node.
    pub h_denominator: bool,
    pub k_riccati: bool,
    pub k_terminal: bool,
    pub k_denominator: bool,
    pub worst_h_riccati: NodeMargin,
    pub worst_h_denominator: NodeMargin,
    pub worst_k_riccati: NodeMargin,
    pub worst_k_denominator: NodeMargin,
    pub h_terminal_min_eig: f64,
    pub k_terminal_min_eig: f64,
}

impl RcReport {
    pub fn pass(&self) -> bool {
        self.h_riccati
            && self.h_terminal
            && self.h_denominator
            && self.k_riccati
            && self.k_terminal
            && self.k_denominator
    }

    pub fn failed_clauses(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut node = |ok: bool, name: &str, m: &NodeMargin| {
            if !ok {
                out.push(format!(
                    "{name}: min eigenvalue {:.6e} at t = {} (node {})",
                    m.min_eig, m.t, m.node
                ));
            }
        };
        node(self.h_riccati, "H Riccati inequality", &self.worst_h_riccati);
        node(
            self.h_denominator,
            "D^T H D + R not uniformly PD",
            &self.worst_h_denominator,
        );
        node(self.k_riccati, "K Riccati inequality", &self.worst_k_riccati);
        node(
            self.k_denominator,
            "D^^T H D^ + R^ not uniformly PD",
            &self.worst_k_denominator,
        );
        if !self.h_terminal {
            out.push(format!(
                "G - H(T) not PSD: min eigenvalue {:.6e}",
                self.h_terminal_min_eig
            ));
        }
        if !self.k_terminal {
            out.push(format!(
                "G^ - K(T) not PSD: min eigenvalue {:.6e}",
                self.k_terminal_min_eig
            ));
        }
        out
    }
}

/// Smallest eigenvalue of the Schur complement `Q - S R^{-1} S^T`, or
/// `-inf` when `R` is not positive definite.
fn complement_margin(q: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>, t: f64) -> Result<f64> {
    match solve_denominator(r, &s.transpose(), t, 0.0) {
        Ok((x, _)) => min_eigenvalue(&(q - s * x)),
        Err(Error::SingularGainDenominator { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

pub fn check_condition_rc(
    spec: &ProblemSpec,
    comp: &CompensatorPair,
    grid: &TimeGrid,
    delta: f64,
    tol: f64,
) -> Result<RcReport> {
    let mut wh = NodeMargin::start();
    let mut wk = NodeMargin::start();
    let mut dh = NodeMargin::start();
    let mut dk = NodeMargin::start();
    let mut gh = f64::INFINITY;
    let mut gk = f64::INFINITY;
    for (node, t) in grid.times().enumerate() {
        let sq = shifted_quadruple(spec, comp, t)?;
        dh.update(node, t, min_eigenvalue(&sq.r)?);
        dk.update(node, t, min_eigenvalue(&sq.r_hat)?);
        wh.update(node, t, complement_margin(&sq.q, &sq.s, &sq.r, t)?);
        wk.update(node, t, complement_margin(&sq.q_hat, &sq.s_hat, &sq.r_hat, t)?);
        if node == 0 {
            gh = min_eigenvalue(&sq.g)?;
            gk = min_eigenvalue(&sq.g_hat)?;
        }
    }
    Ok(RcReport {
        h_riccati: wh.min_eig >= -tol,
        h_terminal: gh >= -tol,
        h_denominator: dh.min_eig - delta >= 0.0,
        k_riccati: wk.min_eig >= -tol,
        k_terminal: gk >= -tol,
        k_denominator: dk.min_eig - delta >= 0.0,
        worst_h_riccati: wh,
        worst_h_denominator: dh,
        worst_k_riccati: wk,
        worst_k_denominator: dk,
        h_terminal_min_eig: gh,
        k_terminal_min_eig: gk,
    })
}

/// `(RC holds, shifted problem satisfies the PD condition)`.
pub fn rc_pd_equivalence(
    spec: &ProblemSpec,
    comp: &CompensatorPair,
    grid: &TimeGrid,
    delta: f64,
    tol: f64,
) -> Result<(bool, bool)> {
    let rc = check_condition_rc(spec, comp, grid, delta, tol)?.pass();
    let shifted = shifted_problem(spec, comp, grid)?;
    let pd = check_condition_pd(&shifted, grid, delta, tol)?.pass();
    Ok((rc, pd))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CostShift {
    pub j: f64,
    pub j_hk: f64,
    /// `<K(0) x0, x0>`
    pub k0_term: f64,
}

impl CostShift {
    /// `|J^HK - J + <K(0) x0, x0>|`
    pub fn defect(&self) -> f64 {
        (self.j_hk - self.j + self.k0_term).abs()
    }
}

/// Evaluates the original and shifted costs of `law` with the moment oracle.
pub fn cost_shift_check(
    spec: &ProblemSpec,
    comp: &CompensatorPair,
    law: &FeedbackLaw,
    grid: &TimeGrid,
) -> Result<CostShift> {
    let j = propagate_moments(spec, law, grid)?.total_cost;
    let shifted = shifted_problem(spec, comp, grid)?;
    let j_hk = propagate_moments(&shifted, law, grid)?.total_cost;
    let k0 = comp.k.eval(0.0)?;
    Ok(CostShift {
        j,
        j_hk,
        k0_term: spec.x0.dot(&(k0 * &spec.x0)),
    })
}

/// Sup-node errors of `P^HK - (P - H)` and `P^^HK - (P^ - K)` from two
/// independent Riccati solves.
pub fn riccati_transform_check(spec: &ProblemSpec, comp: &CompensatorPair, grid: &TimeGrid) -> Result<(f64, f64)> {
    let sol = solve_riccati(spec, *grid)?;
    let shifted = solve_riccati(&shifted_problem(spec, comp, grid)?, *grid)?;
    let mut err = (0.0_f64, 0.0_f64);
    for (k, t) in grid.times().enumerate() {
        let h = comp.h.eval(t)?;
        let kk = comp.k.eval(t)?;
        err.0 = err.0.max(max_abs(&(&shifted.p[k] - (&sol.p[k] - h))));
        err.1 = err.1.max(max_abs(&(&shifted.p_hat[k] - (&sol.p_hat[k] - kk))));
    }
    Ok(err)
}

/// Smallest eigenvalues over the nodes of `P - H` and `P^ - K`.
pub fn compensator_gap(sol: &crate::riccati::RiccatiSolution, comp: &CompensatorPair) -> Result<(f64, f64)> {
    let mut gap = (f64::INFINITY, f64::INFINITY);
    for (k, t) in sol.grid.times().enumerate() {
        gap.0 = gap.0.min(min_eigenvalue(&(&sol.p[k] - comp.h.eval(t)?))?);
        gap.1 = gap.1.min(min_eigenvalue(&(&sol.p_hat[k] - comp.k.eval(t)?))?);
    }
    Ok(gap)
}
