//! Scalar trade-off between speed and variance: drift
//! `aX + a~EX + bu + b~Eu`, diffusion `u`, running cost
//! `alpha |X - EX|^2 - beta u^2` and terminal cost `gamma X(T)^2`.
//! For `beta > 0` the control weight is negative and the problem is
//! handled with the compensator `H = gamma`, `K` explicit.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quad::{pieces, require_scalar, scalar_fn, Antiderivative};
use super::{Check, VerificationReport};
use crate::compensator::{check_condition_rc, CompensatorPair, LambdaFunction};
use crate::error::{Error, Result};
use crate::export::Table;
use crate::hamiltonian::{adjoint_path, decouple_adjoint, stationarity_residual};
use crate::matrix::{DEFAULT_PD_DELTA, DEFAULT_PSD_TOL};
use crate::problem::{check_condition_pd, Channel, CoefficientSet, ProblemSpec, WeightSet};
use crate::riccati::{backward_euler_initial, gain_gamma, gain_gamma_hat, solve_riccati, RiccatiSolution};
use crate::simulation::SamplePath;
use crate::timefn::{TimeFunction, TimeGrid};

/// Samples of `K'` stored in the compensator.
const K_SAMPLES: usize = 4001;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedParams {
    pub a: TimeFunction,
    pub a_tilde: TimeFunction,
    pub b: TimeFunction,
    pub b_tilde: TimeFunction,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub x0: f64,
}

impl SpeedParams {
    /// Constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        a: f64,
        a_tilde: f64,
        b: f64,
        b_tilde: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        horizon: f64,
        x0: f64,
    ) -> Self {
        SpeedParams {
            a: TimeFunction::scalar(a),
            a_tilde: TimeFunction::scalar(a_tilde),
            b: TimeFunction::scalar(b),
            b_tilde: TimeFunction::scalar(b_tilde),
            alpha,
            beta,
            gamma,
            horizon,
            x0,
        }
    }

    /// `T = 1, x = 1, a = 0.8, a~ = 0.6, b = 0.4, b~ = 0.1, alpha = 0.5, beta = 0.2, gamma = 1`.
    pub fn reference() -> Self {
        Self::constant(0.8, 0.6, 0.4, 0.1, 0.5, 0.2, 1.0, 1.0, 1.0)
    }

    fn check(&self) -> Result<()> {
        for (name, f) in [
            ("a", &self.a),
            ("a~", &self.a_tilde),
            ("b", &self.b),
            ("b~", &self.b_tilde),
        ] {
            require_scalar(name, f, self.horizon)?;
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::DomainError(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.gamma > self.beta.max(0.0)) {
            return Err(Error::DomainError(format!(
                "gamma must exceed max(beta, 0); gamma = {}, beta = {}",
                self.gamma, self.beta
            )));
        }
        Ok(())
    }

    fn at(f: &TimeFunction, t: f64) -> Result<f64> {
        Ok(f.eval(t)?[(0, 0)])
    }

    fn probe_grid(&self) -> Result<TimeGrid> {
        let p = [&self.a, &self.a_tilde, &self.b, &self.b_tilde]
            .iter()
            .map(|f| pieces(f))
            .max()
            .unwrap_or(1);
        TimeGrid::new(self.horizon, 2 * p)
    }
}

#[derive(Debug, Clone)]
pub struct SpeedExample {
    pub spec: ProblemSpec,
    /// Points where `a < b^2 gamma / (2 (gamma - beta))`.
    pub warnings: Vec<String>,
}

/// `Q = Q^ = alpha`, `R = -beta`, `G = gamma`, `D = 1`; all other weights zero.
pub fn build_speed_example(params: &SpeedParams) -> Result<SpeedExample> {
    params.check()?;
    let k = TimeFunction::scalar;
    let coeffs = CoefficientSet {
        n: 1,
        m: 1,
        a: params.a.clone(),
        a_tilde: params.a_tilde.clone(),
        b: params.b.clone(),
        b_tilde: params.b_tilde.clone(),
        channels: vec![Channel {
            c: k(0.0),
            c_tilde: k(0.0),
            d: k(1.0),
            d_tilde: k(0.0),
        }],
    };
    let mut weights = WeightSet::zeros(1, 1);
    weights.q = k(params.alpha);
    weights.q_tilde = k(0.0);
    weights.r = k(-params.beta);
    weights.g = DMatrix::from_element(1, 1, params.gamma);
    let spec = ProblemSpec {
        horizon: params.horizon,
        x0: DVector::from_element(1, params.x0),
        coeffs,
        weights,
    };
    let mut warnings = Vec::new();
    for t in params.probe_grid()?.times() {
        let a = SpeedParams::at(&params.a, t)?;
        let b = SpeedParams::at(&params.b, t)?;
        let bound = b * b * params.gamma / (2.0 * (params.gamma - params.beta));
        if a < bound {
            warnings.push(format!(
                "a({t}) = {a} is below b^2 gamma / (2 (gamma - beta)) = {bound}"
            ));
        }
    }
    Ok(SpeedExample { spec, warnings })
}

/// `K = 1 / beta~` with
/// `beta~(t) = (1/gamma) exp(-2 int_t^T a^) + int_t^T c(s) exp(-2 int_t^s a^) ds`
/// and `c = b^^2 / (gamma - beta)`.
#[derive(Clone)]
pub struct SpeedK {
    gamma: f64,
    horizon: f64,
    a_hat: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    c: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    int_a: Antiderivative,
    int_c: Antiderivative,
}

impl std::fmt::Debug for SpeedK {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpeedK")
            .field("gamma", &self.gamma)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SpeedK {
    pub fn new(params: &SpeedParams) -> Result<Self> {
        params.check()?;
        if !(params.gamma > params.beta) {
            return Err(Error::DomainError(format!(
                "K needs gamma > beta; gamma = {}, beta = {}",
                params.gamma, params.beta
            )));
        }
        let horizon = params.horizon;
        let (a, at, b, bt) = (
            scalar_fn(&params.a, horizon),
            scalar_fn(&params.a_tilde, horizon),
            scalar_fn(&params.b, horizon),
            scalar_fn(&params.b_tilde, horizon),
        );
        let align = [&params.a, &params.a_tilde, &params.b, &params.b_tilde]
            .iter()
            .map(|f| pieces(f))
            .max()
            .unwrap_or(1);
        let a_hat: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |t| a(t) + at(t));
        let denom = params.gamma - params.beta;
        let c: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |t| (b(t) + bt(t)).powi(2) / denom);
        let int_a = Antiderivative::new(a_hat.clone(), horizon, align);
        let ia = int_a.clone();
        let cc = c.clone();
        let int_c = Antiderivative::new(Arc::new(move |s| cc(s) * (-2.0 * ia.at(s)).exp()), horizon, align);
        Ok(SpeedK {
            gamma: params.gamma,
            horizon,
            a_hat,
            c,
            int_a,
            int_c,
        })
    }

    pub fn beta_tilde(&self, t: f64) -> f64 {
        let e = (2.0 * self.int_a.at(t)).exp();
        e * ((-2.0 * self.int_a.at(self.horizon)).exp() / self.gamma + self.int_c.between(t, self.horizon))
    }

    pub fn value(&self, t: f64) -> f64 {
        1.0 / self.beta_tilde(t)
    }

    /// `K' = -2 a^ K + c K^2`.
    pub fn derivative(&self, t: f64) -> f64 {
        let k = self.value(t);
        -2.0 * (self.a_hat)(t) * k + (self.c)(t) * k * k
    }
}

/// `H = gamma` and the explicit `K`, stored through its derivative on a
/// fine grid and anchored at `K(T) = gamma`.
pub fn speed_compensator(params: &SpeedParams) -> Result<CompensatorPair> {
    let k = SpeedK::new(params)?;
    let fdot = TimeFunction::from_fn(params.horizon, K_SAMPLES, |t| {
        DMatrix::from_element(1, 1, k.derivative(t))
    })?;
    Ok(CompensatorPair {
        h: LambdaFunction::constant(DMatrix::from_element(1, 1, params.gamma))?,
        k: LambdaFunction::anchored_at_end(DMatrix::from_element(1, 1, params.gamma), fdot, params.horizon)?,
    })
}

/// `(u, E u)` from `u = -[b P (x - xbar) + b^ P^ xbar] / (P - beta)`.
pub fn speed_feedback(params: &SpeedParams, sol: &RiccatiSolution, t: f64, x: f64, xbar: f64) -> Result<(f64, f64)> {
    let st = sol.state_at(t)?;
    let (p, ph) = (st.p[(0, 0)], st.p_hat[(0, 0)]);
    let b = SpeedParams::at(&params.b, t)?;
    let bh = b + SpeedParams::at(&params.b_tilde, t)?;
    let ubar = -bh * ph * xbar / (p - params.beta);
    Ok((-b * p * (x - xbar) / (p - params.beta) + ubar, ubar))
}

/// `u = (b Y + b~ E Y + Z) / beta`, defined for `beta != 0`.
pub fn speed_open_loop(params: &SpeedParams, t: f64, y: f64, ybar: f64, z: f64) -> Result<f64> {
    if params.beta == 0.0 {
        return Err(Error::DomainError("the open-loop form needs beta != 0".into()));
    }
    let b = SpeedParams::at(&params.b, t)?;
    let bt = SpeedParams::at(&params.b_tilde, t)?;
    Ok((b * y + bt * ybar + z) / params.beta)
}

/// The five panels: `(P, P^)`, `(X, EX)`, `u`, `(Y, EY)` and `(Z, EZ)`
/// along one path.
pub fn speed_figure(spec: &ProblemSpec, sol: &RiccatiSolution, path: &SamplePath) -> Result<Vec<(String, Table)>> {
    let adj = adjoint_path(spec, sol, path)?;
    let grid = path.grid;
    let table = |cols: &[&str], f: &dyn Fn(usize) -> Vec<f64>| Table {
        columns: cols.iter().map(|c| c.to_string()).collect(),
        rows: (0..grid.nodes())
            .map(|k| {
                let mut row = vec![grid.t(k)];
                row.extend(f(k));
                row
            })
            .collect(),
    };
    Ok(vec![
        (
            "riccati".into(),
            table(&["t", "P", "P_hat"], &|k| vec![sol.p[k][(0, 0)], sol.p_hat[k][(0, 0)]]),
        ),
        (
            "state".into(),
            table(&["t", "X", "EX"], &|k| vec![path.x[k][0], path.xbar[k][0]]),
        ),
        (
            "control".into(),
            table(&["t", "u", "Eu"], &|k| vec![path.u[k][0], path.ubar[k][0]]),
        ),
        (
            "adjoint_y".into(),
            table(&["t", "Y", "EY"], &|k| vec![adj.y[k][0], adj.ybar[k][0]]),
        ),
        (
            "adjoint_z".into(),
            table(&["t", "Z", "EZ"], &|k| vec![adj.z[k][0][0], adj.zbar[k][0][0]]),
        ),
    ])
}

/// Worst difference between the open-loop and feedback forms over random
/// states, together with the difference from the generic gains.
pub fn speed_form_agreement(
    params: &SpeedParams,
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut open, mut generic) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let t = rng.random_range(0.0..params.horizon);
        let (x, xbar) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (u, ubar) = speed_feedback(params, sol, t, x, xbar)?;
        let st = sol.state_at(t)?;
        let g = gain_gamma(spec, t, &st.p)?[(0, 0)];
        let gh = gain_gamma_hat(spec, t, &st.p, &st.p_hat)?[(0, 0)];
        generic = generic.max((g * (x - xbar) + gh * xbar - u).abs());
        if params.beta != 0.0 {
            let v = |s: f64| DVector::from_element(1, s);
            let a = decouple_adjoint(spec, sol, &v(x), &v(xbar), &v(u), &v(ubar), t)?;
            let m = decouple_adjoint(spec, sol, &v(xbar), &v(xbar), &v(ubar), &v(ubar), t)?;
            let ol = speed_open_loop(params, t, a.y[0], m.y[0], a.z[0][0])?;
            open = open.max((ol - u).abs());
        }
    }
    Ok((open, generic))
}

/// Checks of the example; `reference_steps` adds the comparison of
/// `(P(0), P^(0))` against backward Euler with that many steps.
pub fn verify_speed(
    params: &SpeedParams,
    grid: TimeGrid,
    reference_steps: Option<usize>,
) -> Result<(VerificationReport, RiccatiSolution)> {
    let ex = build_speed_example(params)?;
    let spec = &ex.spec;
    let sol = solve_riccati(spec, grid)?;
    let gap = sol
        .p
        .iter()
        .map(|p| p[(0, 0)] - params.beta)
        .fold(f64::INFINITY, f64::min);
    let mut checks = vec![Check::above("min P - beta", gap, 0.0)];

    if params.beta > 0.0 {
        let pd = check_condition_pd(spec, &grid, DEFAULT_PD_DELTA, DEFAULT_PSD_TOL)?;
        checks.push(Check::flag("condition PD fails (indefinite weight)", !pd.pass()));
    }
    if params.gamma > params.beta {
        let comp = speed_compensator(params)?;
        let rc = check_condition_rc(spec, &comp, &grid, DEFAULT_PD_DELTA, DEFAULT_PSD_TOL)?;
        checks.push(Check::flag("compensator (H, K) satisfies RC", rc.pass()));
    }

    let (open, generic) = speed_form_agreement(params, spec, &sol, 100, 1)?;
    if params.beta != 0.0 {
        checks.push(Check::at_most("open-loop form equals feedback form", open, 1e-6));
    }
    checks.push(Check::at_most("feedback form equals generic gains", generic, 1e-10));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let states: Vec<_> = (0..1000)
        .map(|_| {
            let t = rng.random_range(0.0..params.horizon);
            let x = DVector::from_element(1, rng.random_range(-2.0..2.0));
            let xbar = DVector::from_element(1, rng.random_range(-2.0..2.0));
            (t, x, xbar)
        })
        .collect();
    checks.push(Check::at_most(
        "stationarity at random states",
        stationarity_residual(spec, &sol, &states)?,
        1e-5,
    ));

    if let Some(steps) = reference_steps {
        let (p0, ph0) = backward_euler_initial(spec, steps)?;
        checks.push(Check::at_most(
            "P(0) matches backward Euler reference",
            (sol.p[0][(0, 0)] - p0[(0, 0)]).abs(),
            1e-6,
        ));
        checks.push(Check::at_most(
            "P_hat(0) matches backward Euler reference",
            (sol.p_hat[0][(0, 0)] - ph0[(0, 0)]).abs(),
            1e-6,
        ));
    }
    let report = VerificationReport {
        example: "speed".into(),
        checks,
        warnings: ex.warnings,
    };
    Ok((report, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::adjoint_bsde_residual;
    use crate::simulation::{simulate_paths, FeedbackLaw, SimOptions};

    #[test]
    fn reference_parameters_are_accepted() {
        let ex = build_speed_example(&SpeedParams::reference()).unwrap();
        assert!(ex.warnings.is_empty());
        let s = ex.spec.at(0.5).unwrap();
        assert_eq!(s.hat.q[(0, 0)], 0.5);
        assert_eq!(s.r[(0, 0)], -0.2);
    }

    #[test]
    fn coefficient_condition_is_a_warning() {
        let mut p = SpeedParams::reference();
        p.a = TimeFunction::scalar(0.05);
        let ex = build_speed_example(&p).unwrap();
        assert!(!ex.warnings.is_empty());
    }

    #[test]
    fn bad_gamma_rejected() {
        let mut p = SpeedParams::reference();
        p.gamma = 0.1;
        assert!(matches!(speed_compensator(&p), Err(Error::DomainError(_))));
        assert!(build_speed_example(&p).is_err());
    }

    #[test]
    fn pd_depends_on_sign_of_beta() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let mut p = SpeedParams::reference();
        let spec = build_speed_example(&p).unwrap().spec;
        assert!(!check_condition_pd(&spec, &grid, 1e-6, 1e-9).unwrap().pass());
        p.beta = -0.2;
        let spec = build_speed_example(&p).unwrap().spec;
        assert!(check_condition_pd(&spec, &grid, 1e-6, 1e-9).unwrap().pass());
    }

    #[test]
    fn k_closed_form() {
        let p = SpeedParams::reference();
        let k = SpeedK::new(&p).unwrap();
        assert!((k.value(1.0) - 1.0).abs() < 1e-14);
        // constant coefficients: beta~ = e^{-2 a^ (T-t)}/gamma + c (1 - e^{-2 a^ (T-t)}) / (2 a^)
        let (ah, c) = (1.4f64, 0.25 / 0.8);
        for t in [0.0, 0.3, 0.9] {
            let e = (-2.0 * ah * (1.0 - t)).exp();
            let bt = e + c * (1.0 - e) / (2.0 * ah);
            assert!((k.value(t) - 1.0 / bt).abs() < 1e-12, "{t}");
        }
        let comp = speed_compensator(&p).unwrap();
        for t in [0.0, 0.37, 1.0] {
            let e = (comp.k.eval(t).unwrap()[(0, 0)] - k.value(t)).abs();
            assert!(e < 1e-7, "{t} {e}");
        }
        assert_eq!(comp.k.eval(1.0).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn rc_passes_for_reference() {
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (report, sol) = verify_speed(&SpeedParams::reference(), grid, Some(20_000)).unwrap();
        for c in &report.checks {
            if c.name.contains("backward Euler") {
                // first order reference on a coarse grid
                assert!(c.value < 5e-3, "{c:?}");
            } else {
                assert!(c.pass, "{c:?}");
            }
        }
        assert!(sol.p.windows(2).all(|w| w[0][(0, 0)] > 0.0));
    }

    #[test]
    fn zero_beta_feedback_is_defined() {
        let mut p = SpeedParams::reference();
        p.beta = 0.0;
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let (report, sol) = verify_speed(&p, grid, None).unwrap();
        assert!(report.pass(), "{report:?}");
        assert!(sol.p.iter().all(|v| v[(0, 0)] > 0.0));
        let spec = build_speed_example(&p).unwrap().spec;
        let law = FeedbackLaw::optimal(&spec, &sol).unwrap();
        let opts = SimOptions {
            paths: 1,
            seed: 3,
            retain: true,
        };
        let ens = simulate_paths(&spec, &law, &grid, opts).unwrap();
        let r = adjoint_bsde_residual(&spec, &sol, &ens.path(0).unwrap()).unwrap();
        assert!(r < 0.05, "{r}");
    }

    #[test]
    fn figure_has_five_panels() {
        let p = SpeedParams::reference();
        let spec = build_speed_example(&p).unwrap().spec;
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let sol = solve_riccati(&spec, grid).unwrap();
        let law = FeedbackLaw::optimal(&spec, &sol).unwrap();
        let opts = SimOptions {
            paths: 1,
            seed: 0,
            retain: true,
        };
        let path = simulate_paths(&spec, &law, &grid, opts).unwrap().path(0).unwrap();
        let panels = speed_figure(&spec, &sol, &path).unwrap();
        assert_eq!(panels.len(), 5);
        for (_, t) in &panels {
            assert_eq!(t.rows.len(), 201);
        }
        // EZ = P E u
        let z = &panels[4].1;
        let u = &panels[2].1;
        for k in 0..201 {
            assert!((z.rows[k][2] - sol.p[k][(0, 0)] * u.rows[k][2]).abs() < 1e-12);
        }
    }
}
