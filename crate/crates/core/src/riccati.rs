//! Backward Riccati system for the deviation block `P` and the mean block
//! `P^`, the linear adjoint `phi` for a linear terminal weight, feedback
//! gains and self-check residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{max_abs, min_eigenvalue, symmetrize};
use crate::problem::{ProblemSpec, Snapshot};
use crate::timefn::{clamp_time, TimeGrid};

pub const DEFAULT_STEPS: usize = 2000;
/// Gain denominators with a smaller eigenvalue are treated as singular.
pub const MARGIN_FLOOR: f64 = 1e-10;

/// `(N, L)` with `N = sum_j D_j^T P D_j + R` and `L = P B + sum_j C_j^T P D_j + S`.
fn denominators(s: &Snapshot, p: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut n = s.r.clone();
    let mut l = p * &s.b + &s.s;
    for (c, d) in s.c.iter().zip(&s.d) {
        let pd = p * d;
        n += d.transpose() * &pd;
        l += c.transpose() * &pd;
    }
    (symmetrize(&n), l)
}

/// `(N^, L^)` with `N^ = sum_j D^_j^T P D^_j + R^` and `L^ = P^ B^ + sum_j C^_j^T P D^_j + S^`.
fn hat_denominators(s: &Snapshot, p: &DMatrix<f64>, p_hat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = &s.hat;
    let mut n = h.r.clone();
    let mut l = p_hat * &h.b + &h.s;
    for (c, d) in h.c.iter().zip(&h.d) {
        let pd = p * d;
        n += d.transpose() * &pd;
        l += c.transpose() * &pd;
    }
    (symmetrize(&n), l)
}

/// Solves `N X = rhs` for symmetric `N` whose smallest eigenvalue exceeds `floor`.
pub(crate) fn solve_denominator(
    n: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    t: f64,
    floor: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let margin = min_eigenvalue(n)?;
    if !(margin > floor) {
        return Err(Error::SingularGainDenominator { t, margin });
    }
    let x = match n.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => n
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(Error::SingularGainDenominator { t, margin })?,
    };
    Ok((x, margin))
}

fn gamma_from(s: &Snapshot, p: &DMatrix<f64>, t: f64, floor: f64) -> Result<(DMatrix<f64>, f64)> {
    let (n, l) = denominators(s, p);
    let (x, margin) = solve_denominator(&n, &l.transpose(), t, floor)?;
    Ok((-x, margin))
}

fn gamma_hat_from(
    s: &Snapshot,
    p: &DMatrix<f64>,
    p_hat: &DMatrix<f64>,
    t: f64,
    floor: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let (n, l) = hat_denominators(s, p, p_hat);
    let (x, margin) = solve_denominator(&n, &l.transpose(), t, floor)?;
    Ok((-x, margin))
}

/// `Gamma(t, P) = -N^{-1} L^T`.
pub fn gain_gamma(spec: &ProblemSpec, t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(gamma_from(&spec.at(t)?, p, t, 0.0)?.0)
}

/// `Gamma^(t, P, P^) = -N^^{-1} L^^T`.
pub fn gain_gamma_hat(spec: &ProblemSpec, t: f64, p: &DMatrix<f64>, p_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(gamma_hat_from(&spec.at(t)?, p, p_hat, t, 0.0)?.0)
}

/// Right-hand side of the Riccati pair at one time, with its by-products.
pub(crate) struct RiccatiRhs {
    pub p_dot: DMatrix<f64>,
    pub p_hat_dot: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub margin: f64,
    pub margin_hat: f64,
}

pub(crate) fn riccati_rhs(
    s: &Snapshot,
    p: &DMatrix<f64>,
    p_hat: &DMatrix<f64>,
    t: f64,
    floor: f64,
) -> Result<RiccatiRhs> {
    let (gamma, margin) = gamma_from(s, p, t, floor)?;
    let (gamma_hat, margin_hat) = gamma_hat_from(s, p, p_hat, t, floor)?;

    // L N^{-1} L^T = -L Gamma
    let (_, l) = denominators(s, p);
    let mut f = p * &s.a + s.a.transpose() * p + &s.q + &l * &gamma;
    for c in &s.c {
        f += c.transpose() * p * c;
    }
    let h = &s.hat;
    let (_, l_hat) = hat_denominators(s, p, p_hat);
    let mut f_hat = p_hat * &h.a + h.a.transpose() * p_hat + &h.q + &l_hat * &gamma_hat;
    for c in &h.c {
        f_hat += c.transpose() * p * c;
    }
    Ok(RiccatiRhs {
        p_dot: -symmetrize(&f),
        p_hat_dot: -symmetrize(&f_hat),
        gamma,
        gamma_hat,
        margin,
        margin_hat,
    })
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub p: Vec<DMatrix<f64>>,
    pub p_hat: Vec<DMatrix<f64>>,
    /// Time derivatives at the nodes, used for Hermite interpolation.
    pub p_dot: Vec<DMatrix<f64>>,
    pub p_hat_dot: Vec<DMatrix<f64>>,
    pub phi: Option<Vec<DVector<f64>>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub gamma_hat: Vec<DMatrix<f64>>,
    /// `<P^(0) x0, x0>`; `None` when the cost has a linear terminal term.
    pub value0: Option<f64>,
    /// Smallest eigenvalues of the two gain denominators at each node.
    pub margins: Vec<(f64, f64)>,
}

/// `P(t)` and `P^(t)` evaluated off the grid.
#[derive(Debug, Clone)]
pub struct RiccatiState {
    pub p: DMatrix<f64>,
    pub p_hat: DMatrix<f64>,
    pub phi: Option<DVector<f64>>,
}

impl RiccatiSolution {
    /// Builds a solution from given node trajectories (for instance closed
    /// forms), filling gains, margins and derivatives.
    pub fn from_trajectories(
        spec: &ProblemSpec,
        grid: TimeGrid,
        p: Vec<DMatrix<f64>>,
        p_hat: Vec<DMatrix<f64>>,
        phi: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if p.len() != grid.nodes() || p_hat.len() != grid.nodes() {
            return Err(Error::DimensionMismatch(format!(
                "trajectories have {} and {} nodes, grid has {}",
                p.len(),
                p_hat.len(),
                grid.nodes()
            )));
        }
        let mut sol = RiccatiSolution {
            grid,
            p_dot: Vec::with_capacity(grid.nodes()),
            p_hat_dot: Vec::with_capacity(grid.nodes()),
            gamma: Vec::with_capacity(grid.nodes()),
            gamma_hat: Vec::with_capacity(grid.nodes()),
            margins: Vec::with_capacity(grid.nodes()),
            p: p.into_iter().map(|m| symmetrize(&m)).collect(),
            p_hat: p_hat.into_iter().map(|m| symmetrize(&m)).collect(),
            phi,
            value0: None,
        };
        for k in 0..grid.nodes() {
            let t = grid.t(k);
            let rhs = riccati_rhs(&spec.at(t)?, &sol.p[k], &sol.p_hat[k], t, MARGIN_FLOOR)?;
            sol.push_node(rhs);
        }
        sol.value0 = initial_value(spec, &sol.p_hat[0]);
        Ok(sol)
    }

    fn push_node(&mut self, rhs: RiccatiRhs) {
        self.p_dot.push(rhs.p_dot);
        self.p_hat_dot.push(rhs.p_hat_dot);
        self.gamma.push(rhs.gamma);
        self.gamma_hat.push(rhs.gamma_hat);
        self.margins.push((rhs.margin, rhs.margin_hat));
    }

    pub fn min_margins(&self) -> (f64, f64) {
        self.margins.iter().fold((f64::INFINITY, f64::INFINITY), |acc, m| {
            (acc.0.min(m.0), acc.1.min(m.1))
        })
    }

    /// Cell index and fractional position of `t`; node times snap exactly.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let t = clamp_time(t, self.grid.horizon())?;
        let steps = self.grid.steps();
        let s = t / self.grid.horizon() * steps as f64;
        let nearest = s.round();
        if (s - nearest).abs() <= 1e-9 {
            let k = nearest as usize;
            return Ok(if k == steps { (steps - 1, 1.0) } else { (k, 0.0) });
        }
        let k = (s.floor() as usize).min(steps - 1);
        Ok((k, s - k as f64))
    }

    /// Linear interpolation of `P`, `P^` and `phi`; exact at nodes.
    pub fn state_at(&self, t: f64) -> Result<RiccatiState> {
        let (k, w) = self.locate(t)?;
        let lerp = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            if w == 0.0 {
                a.clone()
            } else if w == 1.0 {
                b.clone()
            } else {
                a * (1.0 - w) + b * w
            }
        };
        let phi = self.phi.as_ref().map(|phi| {
            if w == 0.0 {
                phi[k].clone()
            } else if w == 1.0 {
                phi[k + 1].clone()
            } else {
                &phi[k] * (1.0 - w) + &phi[k + 1] * w
            }
        });
        Ok(RiccatiState {
            p: lerp(&self.p[k], &self.p[k + 1]),
            p_hat: lerp(&self.p_hat[k], &self.p_hat[k + 1]),
            phi,
        })
    }

    /// Cubic Hermite interpolation of `(P, P^)` from node values and derivatives.
    pub fn hermite_at(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (k, s) = self.locate(t)?;
        if s == 0.0 {
            return Ok((self.p[k].clone(), self.p_hat[k].clone()));
        }
        if s == 1.0 {
            return Ok((self.p[k + 1].clone(), self.p_hat[k + 1].clone()));
        }
        let h = self.grid.dt();
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = (s3 - 2.0 * s2 + s) * h;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = (s3 - s2) * h;
        let interp = |y: &[DMatrix<f64>], dy: &[DMatrix<f64>]| {
            symmetrize(&(&y[k] * h00 + &dy[k] * h10 + &y[k + 1] * h01 + &dy[k + 1] * h11))
        };
        Ok((interp(&self.p, &self.p_dot), interp(&self.p_hat, &self.p_hat_dot)))
    }
}

fn initial_value(spec: &ProblemSpec, p_hat0: &DMatrix<f64>) -> Option<f64> {
    if spec.weights.ell.is_some() {
        None
    } else {
        Some(spec.x0.dot(&(p_hat0 * &spec.x0)))
    }
}

/// Classical RK4 backward from `P(T) = G`, `P^(T) = G^`. Both matrices are
/// integrated as one joint state.
pub fn solve_riccati(spec: &ProblemSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    if grid.steps() < 10 {
        return Err(Error::DomainError(format!(
            "the Riccati grid needs at least 10 steps, got {}",
            grid.steps()
        )));
    }
    let nodes = grid.nodes();
    let h = grid.dt();
    let mut p = vec![DMatrix::zeros(0, 0); nodes];
    let mut p_hat = vec![DMatrix::zeros(0, 0); nodes];
    let mut rhs_at: Vec<Option<RiccatiRhs>> = (0..nodes).map(|_| None).collect();
    p[nodes - 1] = spec.g();
    p_hat[nodes - 1] = spec.g_hat();

    for k in (0..grid.steps()).rev() {
        let (t1, t0) = (grid.t(k + 1), grid.t(k));
        let tm = 0.5 * (t0 + t1);
        let snap_mid = spec.at(tm)?;
        let (y, yh) = (&p[k + 1], &p_hat[k + 1]);

        let k1 = riccati_rhs(&spec.at(t1)?, y, yh, t1, MARGIN_FLOOR)?;
        let k2 = riccati_rhs(
            &snap_mid,
            &(y - &k1.p_dot * (0.5 * h)),
            &(yh - &k1.p_hat_dot * (0.5 * h)),
            tm,
            MARGIN_FLOOR,
        )?;
        let k3 = riccati_rhs(
            &snap_mid,
            &(y - &k2.p_dot * (0.5 * h)),
            &(yh - &k2.p_hat_dot * (0.5 * h)),
            tm,
            MARGIN_FLOOR,
        )?;
        let k4 = riccati_rhs(
            &spec.at(t0)?,
            &(y - &k3.p_dot * h),
            &(yh - &k3.p_hat_dot * h),
            t0,
            MARGIN_FLOOR,
        )?;
        let step = (&k1.p_dot + &k2.p_dot * 2.0 + &k3.p_dot * 2.0 + &k4.p_dot) * (h / 6.0);
        let step_hat = (&k1.p_hat_dot + &k2.p_hat_dot * 2.0 + &k3.p_hat_dot * 2.0 + &k4.p_hat_dot) * (h / 6.0);
        p[k] = symmetrize(&(y - step));
        p_hat[k] = symmetrize(&(yh - step_hat));
        if p[k].iter().chain(p_hat[k].iter()).any(|v| !v.is_finite()) {
            return Err(Error::SingularGainDenominator {
                t: t0,
                margin: f64::NAN,
            });
        }
        rhs_at[k + 1] = Some(k1);
    }
    rhs_at[0] = Some(riccati_rhs(&spec.at(0.0)?, &p[0], &p_hat[0], 0.0, MARGIN_FLOOR)?);

    let mut sol = RiccatiSolution {
        grid,
        p_dot: Vec::with_capacity(nodes),
        p_hat_dot: Vec::with_capacity(nodes),
        gamma: Vec::with_capacity(nodes),
        gamma_hat: Vec::with_capacity(nodes),
        margins: Vec::with_capacity(nodes),
        value0: initial_value(spec, &p_hat[0]),
        p,
        p_hat,
        phi: None,
    };
    for rhs in rhs_at {
        sol.push_node(rhs.expect("every node visited"));
    }
    Ok(sol)
}

/// `-(A^ + B^ Gamma^)^T phi` at time `t` given `(P, P^)` there.
fn phi_rhs(s: &Snapshot, p: &DMatrix<f64>, p_hat: &DMatrix<f64>, phi: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let (gamma_hat, _) = gamma_hat_from(s, p, p_hat, t, MARGIN_FLOOR)?;
    let closed = &s.hat.a + &s.hat.b * gamma_hat;
    Ok(-(closed.transpose() * phi))
}

/// Integrates `phi' + (A^ + B^ Gamma^)^T phi = 0`, `phi(T) = ell`, backward
/// with RK4 and stores it into `sol`.
pub fn solve_phi(spec: &ProblemSpec, sol: &mut RiccatiSolution) -> Result<()> {
    let ell = spec.weights.ell.clone().ok_or(Error::MissingLinearTerm)?;
    let grid = sol.grid;
    let h = grid.dt();
    let mut phi = vec![DVector::zeros(0); grid.nodes()];
    phi[grid.steps()] = ell;
    for k in (0..grid.steps()).rev() {
        let (t1, t0) = (grid.t(k + 1), grid.t(k));
        let tm = 0.5 * (t0 + t1);
        let snap_mid = spec.at(tm)?;
        let (pm, phm) = sol.hermite_at(tm)?;
        let y = &phi[k + 1];
        let k1 = phi_rhs(&spec.at(t1)?, &sol.p[k + 1], &sol.p_hat[k + 1], y, t1)?;
        let k2 = phi_rhs(&snap_mid, &pm, &phm, &(y - &k1 * (0.5 * h)), tm)?;
        let k3 = phi_rhs(&snap_mid, &pm, &phm, &(y - &k2 * (0.5 * h)), tm)?;
        let k4 = phi_rhs(&spec.at(t0)?, &sol.p[k], &sol.p_hat[k], &(y - &k3 * h), t0)?;
        phi[k] = y - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    sol.phi = Some(phi);
    Ok(())
}

/// Riccati solve followed by `phi` when the cost has a linear terminal term.
pub fn solve_full(spec: &ProblemSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    let mut sol = solve_riccati(spec, grid)?;
    if spec.weights.ell.is_some() {
        solve_phi(spec, &mut sol)?;
    }
    Ok(sol)
}

/// `-(sum_j D^_j^T P D^_j + R^)^{-1} B^^T phi(t)`.
pub fn feedback_offset(t: f64, sol: &RiccatiSolution, spec: &ProblemSpec) -> Result<DVector<f64>> {
    if sol.phi.is_none() {
        return Err(Error::MissingLinearTerm);
    }
    let st = sol.state_at(t)?;
    let s = spec.at(t)?;
    offset_from(&s, &st.p, st.phi.as_ref().expect("phi present"), t)
}

pub(crate) fn offset_from(s: &Snapshot, p: &DMatrix<f64>, phi: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let (n_hat, _) = hat_denominators(s, p, p);
    let rhs = s.hat.b.transpose() * phi;
    let rhs = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let (x, _) = solve_denominator(&n_hat, &rhs, t, 0.0)?;
    Ok(-DVector::from_column_slice(x.as_slice()))
}

/// Sup-norm residuals of the three ODEs at interior nodes, using central
/// differences for the derivatives.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Residuals {
    pub p: f64,
    pub p_hat: f64,
    pub phi: f64,
}

pub fn riccati_residual(spec: &ProblemSpec, sol: &RiccatiSolution) -> Result<Residuals> {
    let grid = sol.grid;
    if grid.steps() < 4 {
        return Err(Error::DomainError("residual needs at least 3 interior nodes".into()));
    }
    let h2 = 2.0 * grid.dt();
    let mut res = Residuals {
        p: 0.0,
        p_hat: 0.0,
        phi: 0.0,
    };
    for k in 1..grid.steps() {
        let t = grid.t(k);
        let s = spec.at(t)?;
        let rhs = riccati_rhs(&s, &sol.p[k], &sol.p_hat[k], t, 0.0)?;
        let dp = (&sol.p[k + 1] - &sol.p[k - 1]) / h2;
        let dph = (&sol.p_hat[k + 1] - &sol.p_hat[k - 1]) / h2;
        res.p = res.p.max(max_abs(&(dp - &rhs.p_dot)));
        res.p_hat = res.p_hat.max(max_abs(&(dph - &rhs.p_hat_dot)));
        if let Some(phi) = &sol.phi {
            let dphi = (&phi[k + 1] - &phi[k - 1]) / h2;
            let f = phi_rhs(&s, &sol.p[k], &sol.p_hat[k], &phi[k], t)?;
            res.phi = res.phi.max((dphi - f).amax());
        }
    }
    Ok(res)
}

/// Implicit (backward) Euler reference for `(P(0), P^(0))`, solved by
/// fixed-point iteration at each step. Only initial values are kept so that
/// very fine grids fit in memory.
pub fn backward_euler_initial(spec: &ProblemSpec, steps: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let grid = TimeGrid::new(spec.horizon, steps)?;
    let h = grid.dt();
    let mut p = spec.g();
    let mut p_hat = spec.g_hat();
    for k in (0..steps).rev() {
        let t0 = grid.t(k);
        let s = spec.at(t0)?;
        let f = riccati_rhs(&s, &p, &p_hat, t0, MARGIN_FLOOR)?;
        let mut y = &p - &f.p_dot * h;
        let mut yh = &p_hat - &f.p_hat_dot * h;
        for _ in 0..50 {
            let f = riccati_rhs(&s, &y, &yh, t0, MARGIN_FLOOR)?;
            let ny = &p - &f.p_dot * h;
            let nyh = &p_hat - &f.p_hat_dot * h;
            let change = max_abs(&(&ny - &y)).max(max_abs(&(&nyh - &yh)));
            let scale = 1.0 + max_abs(&ny).max(max_abs(&nyh));
            y = ny;
            yh = nyh;
            if change <= 1e-15 * scale {
                break;
            }
        }
        p = symmetrize(&y);
        p_hat = symmetrize(&yh);
    }
    Ok((p, p_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CoefficientSet, WeightSet};
    use crate::random::random_pd_problem;
    use crate::timefn::TimeFunction;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_problem() -> ProblemSpec {
        let mut w = WeightSet::zeros(2, 1);
        w.r = TimeFunction::constant(DMatrix::identity(1, 1));
        w.g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        w.g_tilde = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let mut c = CoefficientSet::zeros(2, 1, 1);
        c.channels[0].d = TimeFunction::constant(DMatrix::from_row_slice(2, 1, &[1.0, 0.3]));
        ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_vec(vec![1.0, -1.0]),
            coeffs: c,
            weights: w,
        }
    }

    /// Scalar mean-variance layout with constant market data.
    fn scalar_mv(r: f64, b: f64) -> ProblemSpec {
        let mut c = CoefficientSet::zeros(1, 1, 1);
        c.a = TimeFunction::scalar(r);
        c.b = TimeFunction::scalar(b);
        c.channels[0].d = TimeFunction::scalar(1.0);
        let mut w = WeightSet::zeros(1, 1);
        w.g = DMatrix::from_element(1, 1, 0.5);
        w.g_tilde = DMatrix::from_element(1, 1, -0.5);
        w.ell = Some(DVector::from_element(1, -0.5));
        ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_element(1, 1.0),
            coeffs: c,
            weights: w,
        }
    }

    #[test]
    fn constant_solution_when_rhs_vanishes() {
        let spec = constant_problem();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let sol = solve_riccati(&spec, grid).unwrap();
        for k in 0..grid.nodes() {
            assert_eq!(sol.p[k], spec.g());
            assert_eq!(sol.p_hat[k], spec.g_hat());
        }
        let res = riccati_residual(&spec, &sol).unwrap();
        assert!(res.p <= 1e-12 && res.p_hat <= 1e-12);
    }

    #[test]
    fn zero_numerator_gives_zero_gain() {
        let spec = constant_problem();
        let g = gain_gamma(&spec, 0.5, &DMatrix::identity(2, 2)).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_denominator_reported() {
        let mut spec = scalar_mv(0.05, 0.3);
        spec.coeffs.channels[0].d = TimeFunction::scalar(0.0);
        let err = gain_gamma(&spec, 0.2, &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SingularGainDenominator { t, .. } if t == 0.2));
        assert!(solve_riccati(&spec, TimeGrid::new(1.0, 20).unwrap()).is_err());
    }

    #[test]
    fn scalar_mv_matches_exponentials() {
        let (r, b) = (0.05, 0.3);
        let spec = scalar_mv(r, b);
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let sol = solve_full(&spec, grid).unwrap();
        for (k, t) in grid.times().enumerate() {
            let p = 0.5 * ((2.0 * r - b * b) * (1.0 - t)).exp();
            let phi = -0.5 * (r * (1.0 - t)).exp();
            assert_relative_eq!(sol.p[k][(0, 0)], p, epsilon = 1e-12);
            assert_eq!(sol.p_hat[k][(0, 0)], 0.0);
            assert_relative_eq!(sol.phi.as_ref().unwrap()[k][0], phi, epsilon = 1e-12);
            assert_relative_eq!(sol.gamma[k][(0, 0)], -b, epsilon = 1e-12);
        }
        let off = feedback_offset(0.0, &sol, &spec).unwrap();
        assert_relative_eq!(off[0], b * (b * b - r).exp(), epsilon = 1e-10);
        assert!(sol.value0.is_none());
        let res = riccati_residual(&spec, &sol).unwrap();
        assert!(res.p <= 1e-6 && res.phi <= 1e-6, "{res:?}");
    }

    #[test]
    fn phi_requires_linear_term() {
        let spec = constant_problem();
        let mut sol = solve_riccati(&spec, TimeGrid::new(1.0, 20).unwrap()).unwrap();
        assert_eq!(solve_phi(&spec, &mut sol), Err(Error::MissingLinearTerm));
        assert!(feedback_offset(0.0, &sol, &spec).is_err());
    }

    #[test]
    fn zero_ell_gives_zero_phi() {
        let mut spec = scalar_mv(0.05, 0.3);
        spec.weights.ell = Some(DVector::zeros(1));
        let sol = solve_full(&spec, TimeGrid::new(1.0, 100).unwrap()).unwrap();
        assert!(sol.phi.unwrap().iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn backward_euler_converges_first_order() {
        let spec = scalar_mv(0.05, 0.3);
        let exact = 0.5 * (0.1_f64 - 0.09).exp();
        let e1 = (backward_euler_initial(&spec, 100).unwrap().0[(0, 0)] - exact).abs();
        let e2 = (backward_euler_initial(&spec, 200).unwrap().0[(0, 0)] - exact).abs();
        assert!((e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = random_pd_problem(&mut rng, 2, 2, 2);
        let mut last = f64::INFINITY;
        for steps in [50, 100, 200] {
            let sol = solve_riccati(&spec, TimeGrid::new(1.0, steps).unwrap()).unwrap();
            let r = riccati_residual(&spec, &sol).unwrap();
            let worst = r.p.max(r.p_hat);
            if last > 1e-10 {
                assert!(last / worst >= 3.0, "{last} -> {worst}");
            }
            last = worst;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pd_problems_have_psd_solutions(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, 2, 2, 2);
            let grid = TimeGrid::new(1.0, 200).unwrap();
            let sol = solve_riccati(&spec, grid).unwrap();
            prop_assert_eq!(&sol.p[grid.steps()], &spec.g());
            prop_assert_eq!(&sol.p_hat[grid.steps()], &spec.g_hat());
            for k in 0..grid.nodes() {
                prop_assert!(crate::matrix::is_exactly_symmetric(&sol.p[k]));
                prop_assert!(min_eigenvalue(&sol.p[k]).unwrap() >= -1e-9);
                prop_assert!(min_eigenvalue(&sol.p_hat[k]).unwrap() >= -1e-9);
                let t = grid.t(k);
                prop_assert_eq!(&sol.gamma[k], &gain_gamma(&spec, t, &sol.p[k]).unwrap());
                prop_assert!(sol.margins[k].0 > 0.0 && sol.margins[k].1 > 0.0);
            }
        }
    }
}
