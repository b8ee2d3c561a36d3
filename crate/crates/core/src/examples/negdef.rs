//! Scalar problem with negative definite control weight: drift
//! `alpha X + alpha~ EX` without control, diffusion `beta u`, running cost
//! `gamma X^2 + gamma~ (EX)^2 - theta u^2`, terminal cost `G X(T)^2`.
//! The optimal feedback is zero.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::quad::{pieces, require_scalar, scalar_fn, Antiderivative, ScalarFn};
use super::{Check, ClosedFormBundle, VerificationReport};
use crate::error::{Error, Result};
use crate::hamiltonian::{adjoint_bsde_residual, decouple_adjoint};
use crate::problem::{Channel, CoefficientSet, ProblemSpec, WeightSet};
use crate::riccati::{riccati_residual, solve_riccati, RiccatiSolution};
use crate::simulation::{propagate_moments, FeedbackLaw, SamplePath};
use crate::timefn::{TimeFunction, TimeGrid};

/// Uniform probes of the `theta` bound, besides the coefficient knots.
const BOUND_PROBES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NegdefParams {
    pub alpha: TimeFunction,
    pub alpha_tilde: TimeFunction,
    pub beta: TimeFunction,
    pub gamma: TimeFunction,
    pub gamma_tilde: TimeFunction,
    pub theta: TimeFunction,
    pub g: f64,
    pub horizon: f64,
    pub x0: f64,
}

impl NegdefParams {
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        alpha: f64,
        alpha_tilde: f64,
        beta: f64,
        gamma: f64,
        gamma_tilde: f64,
        theta: f64,
        g: f64,
        horizon: f64,
        x0: f64,
    ) -> Self {
        let k = TimeFunction::scalar;
        NegdefParams {
            alpha: k(alpha),
            alpha_tilde: k(alpha_tilde),
            beta: k(beta),
            gamma: k(gamma),
            gamma_tilde: k(gamma_tilde),
            theta: k(theta),
            g,
            horizon,
            x0,
        }
    }

    /// `alpha = 0.3, alpha~ = 0.2, beta = 1, gamma = 0.5, gamma~ = 0.3,
    /// theta = 0.4, G = 1, T = 1, x = 1`.
    pub fn reference() -> Self {
        Self::constant(0.3, 0.2, 1.0, 0.5, 0.3, 0.4, 1.0, 1.0, 1.0)
    }

    fn functions(&self) -> [(&'static str, &TimeFunction); 6] {
        [
            ("alpha", &self.alpha),
            ("alpha~", &self.alpha_tilde),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("gamma~", &self.gamma_tilde),
            ("theta", &self.theta),
        ]
    }

    fn align(&self) -> usize {
        self.functions().iter().map(|(_, f)| pieces(f)).max().unwrap_or(1)
    }

    fn check(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::DomainError(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        for (name, f) in self.functions() {
            require_scalar(name, f, self.horizon)?;
        }
        if !(self.g >= 0.0) {
            return Err(Error::DomainError(format!("G must be non-negative, got {}", self.g)));
        }
        Ok(())
    }
}

/// Exact references:
/// `P(t) = G e^{2 int_t^T alpha} + int_t^T gamma(s) e^{2 int_t^s alpha} ds`,
/// `P^` the same with `alpha + alpha~` and `gamma + gamma~`,
/// `EX = x e^{int_0^t (alpha + alpha~)}`, `X = x e^{int_0^t alpha} (1 + int_0^t alpha~(s) e^{int_0^s alpha~} ds)`,
/// `Y = P (X - EX) + P^ EX`, `Z = 0`, `u = 0`.
#[derive(Clone)]
pub struct NegdefClosedForms {
    params: NegdefParams,
    /// `int_0^t alpha`
    a1: Antiderivative,
    /// `int_0^t (alpha + alpha~)`
    a2: Antiderivative,
    /// `int_0^t gamma e^{2 a1}`
    j1: Antiderivative,
    /// `int_0^t (gamma + gamma~) e^{2 a2}`
    j2: Antiderivative,
    /// `int_0^t alpha~ e^{a3}`
    j3: Antiderivative,
    /// `int_0^t (gamma + gamma~) EX^2`
    cost: Antiderivative,
}

impl std::fmt::Debug for NegdefClosedForms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NegdefClosedForms")
            .field("params", &self.params)
            .finish()
    }
}

pub fn negdef_closed_forms(params: &NegdefParams) -> Result<NegdefClosedForms> {
    params.check()?;
    let (h, align) = (params.horizon, params.align());
    let f = |tf: &TimeFunction| scalar_fn(tf, h);
    let (alpha, alpha_t, gamma, gamma_t) = (
        f(&params.alpha),
        f(&params.alpha_tilde),
        f(&params.gamma),
        f(&params.gamma_tilde),
    );
    let anti = |g: ScalarFn| Antiderivative::new(g, h, align);
    let a1 = anti(alpha.clone());
    let a2 = {
        let (a, at) = (alpha.clone(), alpha_t.clone());
        anti(Arc::new(move |t| a(t) + at(t)))
    };
    let a3 = anti(alpha_t.clone());
    let j1 = {
        let (g, a1) = (gamma.clone(), a1.clone());
        anti(Arc::new(move |t| g(t) * (2.0 * a1.at(t)).exp()))
    };
    let gsum: ScalarFn = {
        let (g, gt) = (gamma.clone(), gamma_t.clone());
        Arc::new(move |t| g(t) + gt(t))
    };
    let j2 = {
        let (g, a2) = (gsum.clone(), a2.clone());
        anti(Arc::new(move |t| g(t) * (2.0 * a2.at(t)).exp()))
    };
    let j3 = {
        let (at, a3) = (alpha_t.clone(), a3.clone());
        anti(Arc::new(move |t| at(t) * a3.at(t).exp()))
    };
    let cost = {
        let (g, a2, x0) = (gsum.clone(), a2.clone(), params.x0);
        anti(Arc::new(move |t| g(t) * (x0 * a2.at(t).exp()).powi(2)))
    };
    Ok(NegdefClosedForms {
        params: params.clone(),
        a1,
        a2,
        j1,
        j2,
        j3,
        cost,
    })
}

impl NegdefClosedForms {
    pub fn p(&self, t: f64) -> f64 {
        let big_t = self.params.horizon;
        (-2.0 * self.a1.at(t)).exp() * (self.params.g * (2.0 * self.a1.at(big_t)).exp() + self.j1.between(t, big_t))
    }

    pub fn p_hat(&self, t: f64) -> f64 {
        let big_t = self.params.horizon;
        (-2.0 * self.a2.at(t)).exp() * (self.params.g * (2.0 * self.a2.at(big_t)).exp() + self.j2.between(t, big_t))
    }

    pub fn mean(&self, t: f64) -> f64 {
        self.params.x0 * self.a2.at(t).exp()
    }

    /// Product form of the state; equal to the mean since the state is
    /// deterministic under the zero control.
    pub fn state(&self, t: f64) -> f64 {
        self.params.x0 * self.a1.at(t).exp() * (1.0 + self.j3.at(t))
    }

    pub fn y(&self, t: f64) -> f64 {
        let m = self.mean(t);
        self.p(t) * (self.state(t) - m) + self.p_hat(t) * m
    }

    pub fn z(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn control(&self, _t: f64) -> f64 {
        0.0
    }

    /// Cost of the zero control:
    /// `int_0^T (gamma + gamma~) EX^2 + G EX(T)^2`.
    pub fn zero_law_cost(&self) -> f64 {
        let big_t = self.params.horizon;
        self.cost.at(big_t) + self.params.g * self.mean(big_t).powi(2)
    }

    pub fn value(&self) -> f64 {
        self.p_hat(0.0) * self.params.x0 * self.params.x0
    }

    /// Smallest `beta^2 P - theta` over the probe times, with its location.
    pub fn theta_margin(&self) -> Result<(f64, f64, f64, f64)> {
        let probes = (2 * self.params.align()).max(BOUND_PROBES);
        let grid = TimeGrid::new(self.params.horizon, probes)?;
        let mut worst = (f64::INFINITY, 0.0, 0.0, 0.0);
        for t in grid.times() {
            let beta = self.params.beta.eval(t)?[(0, 0)];
            let theta = self.params.theta.eval(t)?[(0, 0)];
            let bound = beta * beta * self.p(t);
            if bound - theta < worst.0 {
                worst = (bound - theta, t, theta, bound);
            }
        }
        Ok(worst)
    }

    pub fn bundle(&self, grid: &TimeGrid) -> ClosedFormBundle {
        let s = |f: &dyn Fn(f64) -> f64| grid.times().map(|t| DMatrix::from_element(1, 1, f(t))).collect();
        ClosedFormBundle {
            grid: *grid,
            series: vec![
                ("P".into(), s(&|t| self.p(t))),
                ("P_hat".into(), s(&|t| self.p_hat(t))),
                ("EX".into(), s(&|t| self.mean(t))),
                ("X".into(), s(&|t| self.state(t))),
                ("Y".into(), s(&|t| self.y(t))),
                ("Z".into(), s(&|t| self.z(t))),
            ],
        }
    }

    pub fn as_solution(&self, spec: &ProblemSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        RiccatiSolution::from_trajectories(
            spec,
            grid,
            grid.times().map(|t| one(self.p(t))).collect(),
            grid.times().map(|t| one(self.p_hat(t))).collect(),
            None,
        )
    }

    /// The explicit state as a path with zero control and zero increments.
    pub fn as_path(&self, grid: TimeGrid) -> SamplePath {
        let v = |x: f64| DVector::from_element(1, x);
        SamplePath {
            grid,
            x: grid.times().map(|t| v(self.state(t))).collect(),
            u: vec![v(0.0); grid.nodes()],
            xbar: grid.times().map(|t| v(self.mean(t))).collect(),
            ubar: vec![v(0.0); grid.nodes()],
            dw: vec![v(0.0); grid.steps()],
        }
    }
}

/// `A = alpha`, `A~ = alpha~`, `B = 0`, `D = beta`, `Q = gamma`,
/// `Q~ = gamma~`, `R = -theta`, `G` terminal. Requires
/// `0 < theta < beta^2 P` on a fine probe grid.
pub fn build_negdef_example(params: &NegdefParams) -> Result<ProblemSpec> {
    let cf = negdef_closed_forms(params)?;
    let probes = TimeGrid::new(params.horizon, (2 * params.align()).max(BOUND_PROBES))?;
    for t in probes.times() {
        let theta = params.theta.eval(t)?[(0, 0)];
        if !(theta > 0.0) {
            return Err(Error::ThetaBoundViolated { t, theta, bound: 0.0 });
        }
    }
    let (margin, t, theta, bound) = cf.theta_margin()?;
    if !(margin > 0.0) {
        return Err(Error::ThetaBoundViolated { t, theta, bound });
    }
    let zero = TimeFunction::scalar(0.0);
    let coeffs = CoefficientSet {
        n: 1,
        m: 1,
        a: params.alpha.clone(),
        a_tilde: params.alpha_tilde.clone(),
        b: zero.clone(),
        b_tilde: zero.clone(),
        channels: vec![Channel {
            c: zero.clone(),
            c_tilde: zero.clone(),
            d: params.beta.clone(),
            d_tilde: zero,
        }],
    };
    let mut weights = WeightSet::zeros(1, 1);
    weights.q = params.gamma.clone();
    weights.q_tilde = params.gamma_tilde.clone();
    weights.r = params.theta.scale(-1.0);
    weights.g = DMatrix::from_element(1, 1, params.g);
    Ok(ProblemSpec {
        horizon: params.horizon,
        x0: DVector::from_element(1, params.x0),
        coeffs,
        weights,
    })
}

pub fn verify_negdef(
    params: &NegdefParams,
    grid: TimeGrid,
) -> Result<(VerificationReport, RiccatiSolution, ClosedFormBundle)> {
    let spec = build_negdef_example(params)?;
    let cf = negdef_closed_forms(params)?;
    let sol = solve_riccati(&spec, grid)?;
    let mut dp = 0.0f64;
    let mut dph = 0.0f64;
    let mut gains = 0.0f64;
    let mut dy = 0.0f64;
    let mut z = 0.0f64;
    let mut open = 0.0f64;
    for (k, t) in grid.times().enumerate() {
        dp = dp.max((sol.p[k][(0, 0)] - cf.p(t)).abs());
        dph = dph.max((sol.p_hat[k][(0, 0)] - cf.p_hat(t)).abs());
        gains = gains.max(sol.gamma[k].amax()).max(sol.gamma_hat[k].amax());
        let v = |x: f64| DVector::from_element(1, x);
        let a = decouple_adjoint(&spec, &sol, &v(cf.state(t)), &v(cf.mean(t)), &v(0.0), &v(0.0), t)?;
        dy = dy.max((a.y[0] - cf.y(t)).abs());
        z = z.max(a.z[0][0].abs());
        let beta = params.beta.eval(t)?[(0, 0)];
        let theta = params.theta.eval(t)?[(0, 0)];
        open = open.max((beta / theta * a.z[0][0] - cf.control(t)).abs());
    }
    let cf_sol = cf.as_solution(&spec, grid)?;
    let res = riccati_residual(&spec, &cf_sol)?;
    let bsde = adjoint_bsde_residual(&spec, &cf_sol, &cf.as_path(grid))?;
    let zero_cost = propagate_moments(&spec, &FeedbackLaw::zero(1, 1), &grid)?.total_cost;
    let checks = vec![
        Check::at_most("P matches closed form", dp, 1e-6),
        Check::at_most("P_hat matches closed form", dph, 1e-6),
        Check::at_most("feedback gains vanish", gains, 1e-10),
        Check::at_most("Z vanishes", z, 1e-12),
        Check::at_most("decoupled Y matches closed form", dy, 1e-5),
        Check::at_most("open-loop control vanishes", open, 1e-12),
        Check::at_most("closed forms solve the Riccati system", res.p.max(res.p_hat), 1e-5),
        Check::at_most("backward equation defect along the explicit state", bsde, 1e-5),
        Check::at_most(
            "zero-control cost matches closed form",
            (zero_cost - cf.zero_law_cost()).abs(),
            1e-6,
        ),
        Check::at_most(
            "value equals zero-control cost",
            (cf.value() - cf.zero_law_cost()).abs(),
            1e-6,
        ),
    ];
    let report = VerificationReport {
        example: "negative-definite".into(),
        checks,
        warnings: Vec::new(),
    };
    Ok((report, sol, cf.bundle(&grid)))
}
