//! Forward machinery: affine feedback laws, the mean ODE, exact second
//! moments with the cost they imply, and Monte Carlo path simulation.

mod paths;
pub mod rng;

pub use paths::{
    estimate_cost, simulate_particle_system, simulate_paths, MeanField, PathEnsemble, SamplePath, SimOptions,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{min_eigenvalue, symmetrize};
use crate::problem::{ProblemSpec, Snapshot};
use crate::riccati::{offset_from, riccati_rhs, RiccatiSolution};
use crate::timefn::{TimeFunction, TimeGrid};

/// `u(t) = Theta(t) (X - E[X]) + Theta^(t) E[X] + c(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    /// `m x n`
    pub theta: TimeFunction,
    /// `m x n`
    pub theta_hat: TimeFunction,
    /// `m x 1`
    pub c: TimeFunction,
}

/// A feedback law evaluated at one time.
#[derive(Debug, Clone)]
pub struct LawAt {
    pub theta: DMatrix<f64>,
    pub theta_hat: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl FeedbackLaw {
    pub fn zero(n: usize, m: usize) -> Self {
        FeedbackLaw {
            theta: TimeFunction::zeros(m, n),
            theta_hat: TimeFunction::zeros(m, n),
            c: TimeFunction::zeros(m, 1),
        }
    }

    pub fn at(&self, t: f64) -> Result<LawAt> {
        let c = self.c.eval(t)?;
        Ok(LawAt {
            theta: self.theta.eval(t)?,
            theta_hat: self.theta_hat.eval(t)?,
            c: DVector::from_column_slice(c.as_slice()),
        })
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.theta.shape() != (m, n) || self.theta_hat.shape() != (m, n) || self.c.shape() != (m, 1) {
            return Err(Error::DimensionMismatch(format!(
                "law has Theta {:?}, Theta^ {:?}, c {:?}; problem needs {m}x{n} gains and {m}x1 offset",
                self.theta.shape(),
                self.theta_hat.shape(),
                self.c.shape()
            )));
        }
        Ok(())
    }

    /// Pointwise sum of two laws (for perturbations).
    pub fn add(&self, other: &FeedbackLaw) -> Result<Self> {
        Ok(FeedbackLaw {
            theta: self.theta.add(&other.theta)?,
            theta_hat: self.theta_hat.add(&other.theta_hat)?,
            c: self.c.add(&other.c)?,
        })
    }

    /// Largest entry of `Theta`, `Theta^` or `c` over the stored data.
    pub fn sup_norm(&self) -> f64 {
        [&self.theta, &self.theta_hat, &self.c]
            .iter()
            .flat_map(|f| f.stored().iter())
            .map(crate::matrix::max_abs)
            .fold(0.0, f64::max)
    }

    /// The optimal law `Theta = Gamma`, `Theta^ = Gamma^`, `c = D(phi)`,
    /// sampled at the nodes and midpoints of the solution grid.
    pub fn optimal(spec: &ProblemSpec, sol: &RiccatiSolution) -> Result<Self> {
        if spec.weights.ell.is_some() && sol.phi.is_none() {
            return Err(Error::MissingLinearTerm);
        }
        let grid = sol.grid;
        let fine = TimeGrid::new(grid.horizon(), 2 * grid.steps())?;
        let h = grid.dt();
        let (n, m) = (spec.n(), spec.m());

        let phi_dot: Option<Vec<DVector<f64>>> = match &sol.phi {
            Some(phi) => Some(
                (0..grid.nodes())
                    .map(|k| {
                        let s = spec.at(grid.t(k))?;
                        let closed = &s.hat.a + &s.hat.b * &sol.gamma_hat[k];
                        Ok(-(closed.transpose() * &phi[k]))
                    })
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };

        let mut theta = Vec::with_capacity(fine.nodes());
        let mut theta_hat = Vec::with_capacity(fine.nodes());
        let mut offset = Vec::with_capacity(fine.nodes());
        for j in 0..fine.nodes() {
            let t = fine.t(j);
            let k = j / 2;
            if j % 2 == 0 {
                theta.push(sol.gamma[k].clone());
                theta_hat.push(sol.gamma_hat[k].clone());
                offset.push(match &sol.phi {
                    Some(phi) => {
                        let c = offset_from(&spec.at(t)?, &sol.p[k], &phi[k], t)?;
                        DMatrix::from_column_slice(m, 1, c.as_slice())
                    }
                    None => DMatrix::zeros(m, 1),
                });
                continue;
            }
            let (p, p_hat) = sol.hermite_at(t)?;
            let s = spec.at(t)?;
            let rhs = riccati_rhs(&s, &p, &p_hat, t, 0.0)?;
            theta.push(rhs.gamma);
            theta_hat.push(rhs.gamma_hat);
            offset.push(match (&sol.phi, &phi_dot) {
                (Some(phi), Some(dphi)) => {
                    let mid = (&phi[k] + &phi[k + 1]) * 0.5 + (&dphi[k] - &dphi[k + 1]) * (h / 8.0);
                    let c = offset_from(&s, &p, &mid, t)?;
                    DMatrix::from_column_slice(m, 1, c.as_slice())
                }
                _ => DMatrix::zeros(m, 1),
            });
        }
        debug_assert!(theta.iter().all(|g| g.shape() == (m, n)));
        Ok(FeedbackLaw {
            theta: TimeFunction::sampled(grid.horizon(), theta)?,
            theta_hat: TimeFunction::sampled(grid.horizon(), theta_hat)?,
            c: TimeFunction::sampled(grid.horizon(), offset)?,
        })
    }
}

/// `E[X(t)]` at the grid nodes.
#[derive(Debug, Clone)]
pub struct MeanPath {
    pub grid: TimeGrid,
    pub m: Vec<DVector<f64>>,
}

fn mean_rhs(spec: &ProblemSpec, law: &FeedbackLaw, t: f64, m: &DVector<f64>) -> Result<DVector<f64>> {
    let s = spec.at(t)?;
    let l = law.at(t)?;
    let ubar = &l.theta_hat * m + &l.c;
    Ok(&s.hat.a * m + &s.hat.b * ubar)
}

/// RK4 solution of `m' = A^ m + B^ (Theta^ m + c)`, `m(0) = x0`.
pub fn propagate_mean(spec: &ProblemSpec, law: &FeedbackLaw, grid: &TimeGrid) -> Result<MeanPath> {
    law.check_dims(spec.n(), spec.m())?;
    let h = grid.dt();
    let mut m = Vec::with_capacity(grid.nodes());
    m.push(spec.x0.clone());
    for k in 0..grid.steps() {
        let (t0, t1) = (grid.t(k), grid.t(k + 1));
        let tm = 0.5 * (t0 + t1);
        let y = &m[k];
        let k1 = mean_rhs(spec, law, t0, y)?;
        let k2 = mean_rhs(spec, law, tm, &(y + &k1 * (0.5 * h)))?;
        let k3 = mean_rhs(spec, law, tm, &(y + &k2 * (0.5 * h)))?;
        let k4 = mean_rhs(spec, law, t1, &(y + &k3 * h))?;
        m.push(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }
    Ok(MeanPath { grid: *grid, m })
}

/// Forward Euler recursion for the mean: the exact expectation of the
/// Euler-Maruyama scheme on the same grid.
pub fn propagate_mean_euler(spec: &ProblemSpec, law: &FeedbackLaw, grid: &TimeGrid) -> Result<MeanPath> {
    law.check_dims(spec.n(), spec.m())?;
    let h = grid.dt();
    let mut m = Vec::with_capacity(grid.nodes());
    m.push(spec.x0.clone());
    for k in 0..grid.steps() {
        let f = mean_rhs(spec, law, grid.t(k), &m[k])?;
        m.push(&m[k] + f * h);
    }
    Ok(MeanPath { grid: *grid, m })
}

/// Exact mean, covariance and accumulated cost of the closed-loop state.
#[derive(Debug, Clone)]
pub struct MomentState {
    pub grid: TimeGrid,
    pub m: Vec<DVector<f64>>,
    pub v: Vec<DMatrix<f64>>,
    /// Integral of the running cost from 0 to each node.
    pub running_cost: Vec<f64>,
    pub total_cost: f64,
}

impl MomentState {
    pub fn min_covariance_eigenvalue(&self) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for v in &self.v {
            worst = worst.min(min_eigenvalue(v)?);
        }
        Ok(worst)
    }
}

struct MomentRhs {
    dm: DVector<f64>,
    dv: DMatrix<f64>,
    dc: f64,
}

fn moment_rhs(s: &Snapshot, l: &LawAt, m: &DVector<f64>, v: &DMatrix<f64>) -> MomentRhs {
    let ubar = &l.theta_hat * m + &l.c;
    let dm = &s.hat.a * m + &s.hat.b * &ubar;

    let f = &s.a + &s.b * &l.theta;
    let mut dv = &f * v + v * f.transpose();
    for j in 0..s.c.len() {
        let mj = &s.c[j] + &s.d[j] * &l.theta;
        let vj = &s.hat.c[j] * m + &s.hat.d[j] * &ubar;
        dv += &mj * v * mj.transpose() + &vj * vj.transpose();
    }

    let s_theta = &s.s * &l.theta;
    let deviation = &s.q + (&s_theta + s_theta.transpose()) + l.theta.transpose() * &s.r * &l.theta;
    let dc = (deviation * v).trace()
        + m.dot(&(&s.hat.q * m))
        + 2.0 * m.dot(&(&s.hat.s * &ubar))
        + ubar.dot(&(&s.hat.r * &ubar));
    MomentRhs {
        dm,
        dv: symmetrize(&dv),
        dc,
    }
}

/// Joint RK4 integration of `(m, V, running cost)` and the terminal cost.
pub fn propagate_moments(spec: &ProblemSpec, law: &FeedbackLaw, grid: &TimeGrid) -> Result<MomentState> {
    law.check_dims(spec.n(), spec.m())?;
    let n = spec.n();
    let h = grid.dt();
    let mut m = Vec::with_capacity(grid.nodes());
    let mut v = Vec::with_capacity(grid.nodes());
    let mut cost = Vec::with_capacity(grid.nodes());
    m.push(spec.x0.clone());
    v.push(DMatrix::zeros(n, n));
    cost.push(0.0);
    let mut start = (spec.at(0.0)?, law.at(0.0)?);
    for k in 0..grid.steps() {
        let (t0, t1) = (grid.t(k), grid.t(k + 1));
        let tm = 0.5 * (t0 + t1);
        let mid = (spec.at(tm)?, law.at(tm)?);
        let end = (spec.at(t1)?, law.at(t1)?);
        let (ym, yv) = (&m[k], &v[k]);
        let k1 = moment_rhs(&start.0, &start.1, ym, yv);
        let k2 = moment_rhs(&mid.0, &mid.1, &(ym + &k1.dm * (0.5 * h)), &(yv + &k1.dv * (0.5 * h)));
        let k3 = moment_rhs(&mid.0, &mid.1, &(ym + &k2.dm * (0.5 * h)), &(yv + &k2.dv * (0.5 * h)));
        let k4 = moment_rhs(&end.0, &end.1, &(ym + &k3.dm * h), &(yv + &k3.dv * h));
        start = end;
        let w = h / 6.0;
        m.push(ym + (&k1.dm + &k2.dm * 2.0 + &k3.dm * 2.0 + &k4.dm) * w);
        v.push(symmetrize(&(yv + (&k1.dv + &k2.dv * 2.0 + &k3.dv * 2.0 + &k4.dv) * w)));
        cost.push(cost[k] + (k1.dc + 2.0 * k2.dc + 2.0 * k3.dc + k4.dc) * w);
    }
    let (mt, vt) = (&m[grid.steps()], &v[grid.steps()]);
    let mut terminal = (spec.g() * vt).trace() + mt.dot(&(spec.g_hat() * mt));
    if let Some(ell) = &spec.weights.ell {
        terminal += 2.0 * ell.dot(mt);
    }
    let total_cost = cost[grid.steps()] + terminal;
    Ok(MomentState {
        grid: *grid,
        m,
        v,
        running_cost: cost,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CoefficientSet, WeightSet};
    use crate::random::{random_law, random_pd_problem};
    use crate::riccati::solve_full;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_is_constant_without_drift() {
        let spec = ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_vec(vec![1.0, 2.0]),
            coeffs: CoefficientSet::zeros(2, 1, 1),
            weights: WeightSet::zeros(2, 1),
        };
        let law = random_law(&mut ChaCha8Rng::seed_from_u64(0), 2, 1, 1.0);
        let mp = propagate_mean(&spec, &law, &TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert!(mp.m.iter().all(|m| m == &spec.x0));
        let ms = propagate_moments(&spec, &law, &TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert_eq!(ms.total_cost, 0.0);
    }

    #[test]
    fn scalar_mean_matches_exponential() {
        let mut c = CoefficientSet::zeros(1, 1, 1);
        c.a = TimeFunction::scalar(0.3);
        c.a_tilde = TimeFunction::scalar(0.2);
        let spec = ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_element(1, 2.0),
            coeffs: c,
            weights: WeightSet::zeros(1, 1),
        };
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let mp = propagate_mean(&spec, &FeedbackLaw::zero(1, 1), &grid).unwrap();
        for (k, t) in grid.times().enumerate() {
            assert_relative_eq!(mp.m[k][0], 2.0 * (0.5 * t).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_variance_matches_closed_form() {
        // dX = a X dt + sigma dW: Var = sigma^2 (e^{2at} - 1) / (2a).
        let (a, sigma) = (0.4, 0.7);
        let mut c = CoefficientSet::zeros(1, 1, 1);
        c.a = TimeFunction::scalar(a);
        c.channels[0].d_tilde = TimeFunction::scalar(1.0);
        let mut w = WeightSet::zeros(1, 1);
        w.g = DMatrix::from_element(1, 1, 1.0);
        let spec = ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_element(1, 0.0),
            coeffs: c,
            weights: w,
        };
        let law = FeedbackLaw {
            c: TimeFunction::scalar(sigma),
            ..FeedbackLaw::zero(1, 1)
        };
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let ms = propagate_moments(&spec, &law, &grid).unwrap();
        let var = sigma * sigma * ((2.0 * a).exp() - 1.0) / (2.0 * a);
        assert_relative_eq!(ms.v[200][(0, 0)], var, epsilon = 1e-10);
        assert_relative_eq!(ms.total_cost, var, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn optimal_cost_equals_value(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, 2, 2, 2);
            let grid = TimeGrid::new(1.0, 500).unwrap();
            let sol = solve_full(&spec, grid).unwrap();
            let law = FeedbackLaw::optimal(&spec, &sol).unwrap();
            let ms = propagate_moments(&spec, &law, &grid).unwrap();
            prop_assert!((ms.total_cost - sol.value0.unwrap()).abs() <= 1e-6);
            prop_assert!(ms.min_covariance_eigenvalue().unwrap() >= -1e-10);
        }
    }
}
