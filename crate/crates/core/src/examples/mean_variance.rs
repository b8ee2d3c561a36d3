//! Mean-variance portfolio selection: wealth `X` in a market with a
//! riskless rate `r` and `m` stocks, cost `(nu/2) Var X(T) - E X(T)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quad::{pieces, require_horizon, require_scalar, scalar_fn, Antiderivative};
use super::{Check, ClosedFormBundle, VerificationReport};
use crate::error::{Error, Result};
use crate::hamiltonian::stationarity_residual;
use crate::matrix::min_eigenvalue;
use crate::problem::{check_condition_pd, Channel, CoefficientSet, ProblemSpec, WeightSet};
use crate::riccati::{feedback_offset, riccati_residual, solve_full, RiccatiSolution};
use crate::timefn::{TimeFunction, TimeGrid};

/// Samples used for the control coefficient when the market varies in time.
const MARKET_SAMPLES: usize = 4001;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    /// Riskless rate, scalar.
    pub r: TimeFunction,
    /// Appreciation rates, `m x 1`.
    pub mu: TimeFunction,
    /// Volatility, `m x m`.
    pub sigma: TimeFunction,
    /// Required lower bound on `sigma sigma^T`.
    pub delta: f64,
}

impl MarketModel {
    pub fn constant(r: f64, mu: &[f64], sigma: DMatrix<f64>, delta: f64) -> Self {
        MarketModel {
            r: TimeFunction::scalar(r),
            mu: TimeFunction::constant(DMatrix::from_column_slice(mu.len(), 1, mu)),
            sigma: TimeFunction::constant(sigma),
            delta,
        }
    }

    pub fn assets(&self) -> usize {
        self.mu.shape().0
    }

    fn is_constant(&self) -> bool {
        self.r.is_constant() && self.mu.is_constant() && self.sigma.is_constant()
    }

    /// Market price of risk `b = sigma^{-1} (mu - r 1)`.
    pub fn excess(&self, t: f64) -> Result<DVector<f64>> {
        let r = self.r.eval(t)?[(0, 0)];
        let mu = self.mu.eval(t)?;
        let sigma = self.sigma.eval(t)?;
        let rhs = DVector::from_iterator(mu.nrows(), mu.iter().map(|v| v - r));
        sigma
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateVolatility { t, margin: 0.0 })
    }

    /// Checks shapes and `sigma sigma^T >= delta I` at the samples of sigma
    /// and their midpoints.
    pub fn check(&self, horizon: f64) -> Result<()> {
        let m = self.assets();
        require_scalar("r", &self.r, horizon)?;
        if m == 0 || self.mu.shape() != (m, 1) || self.sigma.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "market: mu is {:?}, sigma is {:?}",
                self.mu.shape(),
                self.sigma.shape()
            )));
        }
        require_horizon("mu", &self.mu, horizon)?;
        require_horizon("sigma", &self.sigma, horizon)?;
        let probes = 2 * pieces(&self.sigma).max(pieces(&self.mu)).max(pieces(&self.r)) + 1;
        let grid = TimeGrid::new(horizon, probes - 1)?;
        for t in grid.times() {
            let s = self.sigma.eval(t)?;
            let margin = min_eigenvalue(&(&s * s.transpose()))?;
            if !(margin > 0.0 && margin >= self.delta) {
                return Err(Error::DegenerateVolatility { t, margin });
            }
        }
        Ok(())
    }
}

fn row(b: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, b.len(), b.as_slice())
}

/// State `n = 1`, controls and noises one per asset: `A = r`, `B = b^T`,
/// `D_j = e_j^T`, `G = nu/2`, `G~ = -nu/2` and linear terminal term `-1/2`.
pub fn build_mean_variance(market: &MarketModel, nu: f64, horizon: f64, x0: f64) -> Result<ProblemSpec> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::DomainError(format!("nu must be positive, got {nu}")));
    }
    market.check(horizon)?;
    let m = market.assets();
    let b = if market.is_constant() {
        TimeFunction::constant(row(&market.excess(0.0)?))
    } else {
        let grid = TimeGrid::new(horizon, MARKET_SAMPLES - 1)?;
        let samples = grid
            .times()
            .map(|t| market.excess(t).map(|b| row(&b)))
            .collect::<Result<Vec<_>>>()?;
        TimeFunction::sampled(horizon, samples)?
    };
    let mut coeffs = CoefficientSet::zeros(1, m, m);
    coeffs.a = market.r.clone();
    coeffs.b = b;
    coeffs.channels = (0..m)
        .map(|j| {
            let mut ch = Channel::zeros(1, m);
            let mut row = DMatrix::zeros(1, m);
            row[(0, j)] = 1.0;
            ch.d = TimeFunction::constant(row);
            ch
        })
        .collect();
    let mut weights = WeightSet::zeros(1, m);
    weights.g = DMatrix::from_element(1, 1, nu / 2.0);
    weights.g_tilde = DMatrix::from_element(1, 1, -nu / 2.0);
    weights.ell = Some(DVector::from_element(1, -0.5));
    Ok(ProblemSpec {
        horizon,
        x0: DVector::from_element(1, x0),
        coeffs,
        weights,
    })
}

/// Exact solution: `P = (nu/2) exp(int_t^T (2r - |b|^2))`, `P^ = 0`,
/// `phi = -(1/2) exp(int_t^T r)`, gain `-b`, offset
/// `(b/nu) exp(int_t^T (|b|^2 - r))`.
#[derive(Debug, Clone)]
pub struct MvClosedForms {
    market: MarketModel,
    nu: f64,
    horizon: f64,
    int_r: Antiderivative,
    int_b2: Antiderivative,
}

pub fn mv_closed_forms(market: &MarketModel, nu: f64, horizon: f64) -> Result<MvClosedForms> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::DomainError(format!("nu must be positive, got {nu}")));
    }
    market.check(horizon)?;
    let align = pieces(&market.r).max(pieces(&market.mu)).max(pieces(&market.sigma));
    let int_r = Antiderivative::new(scalar_fn(&market.r, horizon), horizon, pieces(&market.r));
    let mk = market.clone();
    let b2 = Arc::new(move |t: f64| {
        mk.excess(t.clamp(0.0, horizon))
            .map(|b| b.norm_squared())
            .unwrap_or(f64::NAN)
    });
    let int_b2 = Antiderivative::new(b2, horizon, align);
    Ok(MvClosedForms {
        market: market.clone(),
        nu,
        horizon,
        int_r,
        int_b2,
    })
}

impl MvClosedForms {
    fn tail(&self, a: &Antiderivative, t: f64) -> f64 {
        a.between(t, self.horizon)
    }

    pub fn p(&self, t: f64) -> f64 {
        self.nu / 2.0 * (2.0 * self.tail(&self.int_r, t) - self.tail(&self.int_b2, t)).exp()
    }

    pub fn p_hat(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn phi(&self, t: f64) -> f64 {
        -0.5 * self.tail(&self.int_r, t).exp()
    }

    /// `m x 1` feedback gain on `X - E X`.
    pub fn gain(&self, t: f64) -> Result<DMatrix<f64>> {
        let b = self.market.excess(t)?;
        Ok(-DMatrix::from_column_slice(b.len(), 1, b.as_slice()))
    }

    pub fn offset(&self, t: f64) -> Result<DVector<f64>> {
        let b = self.market.excess(t)?;
        let scale = (self.tail(&self.int_b2, t) - self.tail(&self.int_r, t)).exp() / self.nu;
        Ok(b * scale)
    }

    /// `u* = -b (X - E X - (1/nu) exp(int_t^T (|b|^2 - r)))`.
    pub fn control(&self, t: f64, x: f64, xbar: f64) -> Result<DVector<f64>> {
        let b = self.market.excess(t)?;
        let e = (self.tail(&self.int_b2, t) - self.tail(&self.int_r, t)).exp() / self.nu;
        Ok(-b * (x - xbar - e))
    }

    pub fn bundle(&self, grid: &TimeGrid) -> Result<ClosedFormBundle> {
        let scalar = |f: &dyn Fn(f64) -> f64| -> Vec<DMatrix<f64>> {
            grid.times().map(|t| DMatrix::from_element(1, 1, f(t))).collect()
        };
        let offsets = grid
            .times()
            .map(|t| {
                self.offset(t)
                    .map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClosedFormBundle {
            grid: *grid,
            series: vec![
                ("P".into(), scalar(&|t| self.p(t))),
                ("P_hat".into(), scalar(&|t| self.p_hat(t))),
                ("phi".into(), scalar(&|t| self.phi(t))),
                (
                    "gain".into(),
                    grid.times().map(|t| self.gain(t)).collect::<Result<_>>()?,
                ),
                ("offset".into(), offsets),
            ],
        })
    }

    /// The closed forms as a solution on `grid`, with gains recomputed.
    pub fn as_solution(&self, spec: &ProblemSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        RiccatiSolution::from_trajectories(
            spec,
            grid,
            grid.times().map(|t| one(self.p(t))).collect(),
            grid.times().map(|t| one(self.p_hat(t))).collect(),
            Some(grid.times().map(|t| DVector::from_element(1, self.phi(t))).collect()),
        )
    }
}

/// Worst deviations of the numeric pipeline from the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvDeviations {
    pub p: f64,
    pub p_hat: f64,
    pub phi: f64,
    pub gain: f64,
    pub offset: f64,
}

pub fn mv_deviations(sol: &RiccatiSolution, cf: &MvClosedForms, spec: &ProblemSpec) -> Result<MvDeviations> {
    let mut dev = MvDeviations {
        p: 0.0,
        p_hat: 0.0,
        phi: 0.0,
        gain: 0.0,
        offset: 0.0,
    };
    let phi = sol.phi.as_ref().ok_or(Error::MissingLinearTerm)?;
    for (k, t) in sol.grid.times().enumerate() {
        dev.p = dev.p.max((sol.p[k][(0, 0)] - cf.p(t)).abs());
        dev.p_hat = dev.p_hat.max(sol.p_hat[k][(0, 0)].abs());
        dev.phi = dev.phi.max((phi[k][0] - cf.phi(t)).abs());
        dev.gain = dev.gain.max((&sol.gamma[k] - cf.gain(t)?).amax());
        dev.gain = dev.gain.max(sol.gamma_hat[k].amax());
        dev.offset = dev.offset.max((feedback_offset(t, sol, spec)? - cf.offset(t)?).amax());
    }
    Ok(dev)
}

pub fn verify_mean_variance(
    market: &MarketModel,
    nu: f64,
    horizon: f64,
    x0: f64,
    grid: TimeGrid,
) -> Result<(VerificationReport, RiccatiSolution, ClosedFormBundle)> {
    let spec = build_mean_variance(market, nu, horizon, x0)?;
    let cf = mv_closed_forms(market, nu, horizon)?;
    let sol = solve_full(&spec, grid)?;
    let dev = mv_deviations(&sol, &cf, &spec)?;
    let mut checks = vec![
        Check::at_most("P matches closed form", dev.p, 1e-6),
        Check::at_most("P_hat vanishes", dev.p_hat, 1e-8),
        Check::at_most("phi matches closed form", dev.phi, 1e-6),
        Check::at_most("gain matches -b", dev.gain, 1e-6),
        Check::at_most("offset matches closed form", dev.offset, 1e-6),
    ];

    let cf_sol = cf.as_solution(&spec, grid)?;
    let res = riccati_residual(&spec, &cf_sol)?;
    checks.push(Check::at_most(
        "closed forms solve the Riccati system",
        res.p.max(res.p_hat).max(res.phi),
        1e-5,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst_law = 0.0f64;
    let mut states = Vec::with_capacity(100);
    for _ in 0..100 {
        let t = rng.random_range(0.0..horizon);
        let (x, xbar) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let st = sol.state_at(t)?;
        let gamma = crate::riccati::gain_gamma(&spec, t, &st.p)?;
        let gamma_hat = crate::riccati::gain_gamma_hat(&spec, t, &st.p, &st.p_hat)?;
        let u = &gamma * (x - xbar) + &gamma_hat * xbar + feedback_offset(t, &sol, &spec)?;
        let u = DVector::from_column_slice(u.as_slice());
        worst_law = worst_law.max((u - cf.control(t, x, xbar)?).amax());
        states.push((t, DVector::from_element(1, x), DVector::from_element(1, xbar)));
    }
    checks.push(Check::at_most("feedback law matches closed form", worst_law, 1e-6));
    checks.push(Check::at_most(
        "stationarity at random states",
        stationarity_residual(&spec, &sol, &states)?,
        1e-8,
    ));
    let pd = check_condition_pd(
        &spec,
        &grid,
        crate::matrix::DEFAULT_PD_DELTA,
        crate::matrix::DEFAULT_PSD_TOL,
    )?;
    checks.push(Check::flag("condition PD fails (indefinite by design)", !pd.pass()));

    let report = VerificationReport {
        example: "mean-variance".into(),
        checks,
        warnings: Vec::new(),
    };
    Ok((report, sol, cf.bundle(&grid)?))
}
