//! The optimality system: the linear maps `g` and `Psi`, adjoints recovered
//! from the Riccati solution, and residuals of stationarity and of the
//! backward equation along simulated paths.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, Snapshot};
use crate::riccati::{offset_from, RiccatiSolution};
use crate::simulation::SamplePath;

/// A point `(x, u, y, z)` together with its mean `(xbar, ubar, ybar, zbar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianPoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub xbar: DVector<f64>,
    pub u: DVector<f64>,
    pub ubar: DVector<f64>,
    pub y: DVector<f64>,
    pub ybar: DVector<f64>,
    pub z: Vec<DVector<f64>>,
    pub zbar: Vec<DVector<f64>>,
}

impl HamiltonianPoint {
    pub fn zeros(t: f64, n: usize, m: usize, d: usize) -> Self {
        HamiltonianPoint {
            t,
            x: DVector::zeros(n),
            xbar: DVector::zeros(n),
            u: DVector::zeros(m),
            ubar: DVector::zeros(m),
            y: DVector::zeros(n),
            ybar: DVector::zeros(n),
            z: vec![DVector::zeros(n); d],
            zbar: vec![DVector::zeros(n); d],
        }
    }

    fn check(&self, n: usize, m: usize, d: usize) -> Result<()> {
        let vecs_n = [&self.x, &self.xbar, &self.y, &self.ybar];
        let ok = vecs_n.iter().all(|v| v.len() == n)
            && self.u.len() == m
            && self.ubar.len() == m
            && self.z.len() == d
            && self.zbar.len() == d
            && self.z.iter().chain(&self.zbar).all(|v| v.len() == n);
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "Hamiltonian point does not fit n={n}, m={m}, d={d}"
            )));
        }
        Ok(())
    }
}

fn g_at(s: &Snapshot, p: &HamiltonianPoint) -> DVector<f64> {
    let mut g = &s.q * &p.x
        + &s.q_tilde * &p.xbar
        + &s.s * &p.u
        + &s.s_tilde * &p.ubar
        + s.a.transpose() * &p.y
        + s.a_tilde.transpose() * &p.ybar;
    for j in 0..s.c.len() {
        g += s.c[j].transpose() * &p.z[j] + s.c_tilde[j].transpose() * &p.zbar[j];
    }
    g
}

fn psi_at(s: &Snapshot, p: &HamiltonianPoint) -> DVector<f64> {
    let mut v = s.s.transpose() * &p.x
        + s.s_tilde.transpose() * &p.xbar
        + &s.r * &p.u
        + &s.r_tilde * &p.ubar
        + s.b.transpose() * &p.y
        + s.b_tilde.transpose() * &p.ybar;
    for j in 0..s.d.len() {
        v += s.d[j].transpose() * &p.z[j] + s.d_tilde[j].transpose() * &p.zbar[j];
    }
    v
}

/// `g = Qx + Q~xbar + Su + S~ubar + A^T y + A~^T ybar + sum_j (C_j^T z_j + C~_j^T zbar_j)`.
pub fn g_drift(p: &HamiltonianPoint, spec: &ProblemSpec) -> Result<DVector<f64>> {
    p.check(spec.n(), spec.m(), spec.d())?;
    Ok(g_at(&spec.at(p.t)?, p))
}

/// `Psi = S^T x + S~^T xbar + Ru + R~ubar + B^T y + B~^T ybar + sum_j (D_j^T z_j + D~_j^T zbar_j)`.
pub fn psi(p: &HamiltonianPoint, spec: &ProblemSpec) -> Result<DVector<f64>> {
    p.check(spec.n(), spec.m(), spec.d())?;
    Ok(psi_at(&spec.at(p.t)?, p))
}

/// Adjoint pair at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoint {
    pub y: DVector<f64>,
    pub z: Vec<DVector<f64>>,
}

fn decouple_with(
    s: &Snapshot,
    p: &DMatrix<f64>,
    p_hat: &DMatrix<f64>,
    phi: Option<&DVector<f64>>,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
    u: &DVector<f64>,
    ubar: &DVector<f64>,
) -> Adjoint {
    let mut y = p * (x - xbar) + p_hat * xbar;
    if let Some(phi) = phi {
        y += phi;
    }
    let z = (0..s.c.len())
        .map(|j| p * (&s.c[j] * x + &s.c_tilde[j] * xbar + &s.d[j] * u + &s.d_tilde[j] * ubar))
        .collect();
    Adjoint { y, z }
}

/// `Y = P(x - xbar) + P^ xbar + phi`, `Z_j = P(C_j x + C~_j xbar + D_j u + D~_j ubar)`.
///
/// Off the grid `P`, `P^` and `phi` are interpolated linearly.
pub fn decouple_adjoint(
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
    u: &DVector<f64>,
    ubar: &DVector<f64>,
    t: f64,
) -> Result<Adjoint> {
    let (n, m) = (spec.n(), spec.m());
    if x.len() != n || xbar.len() != n || u.len() != m || ubar.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "state/control lengths ({}, {}, {}, {}) do not fit n={n}, m={m}",
            x.len(),
            xbar.len(),
            u.len(),
            ubar.len()
        )));
    }
    let st = sol.state_at(t)?;
    let s = spec.at(t)?;
    Ok(decouple_with(&s, &st.p, &st.p_hat, st.phi.as_ref(), x, xbar, u, ubar))
}

/// The full point at `(t, x, xbar)` under the optimal feedback with
/// decoupled adjoints.
pub fn optimal_point(
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    t: f64,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
) -> Result<HamiltonianPoint> {
    let st = sol.state_at(t)?;
    let s = spec.at(t)?;
    let gamma = crate::riccati::gain_gamma(spec, t, &st.p)?;
    let gamma_hat = crate::riccati::gain_gamma_hat(spec, t, &st.p, &st.p_hat)?;
    let mut ubar = &gamma_hat * xbar;
    if let Some(phi) = &st.phi {
        ubar += offset_from(&s, &st.p, phi, t)?;
    }
    let u = &gamma * (x - xbar) + &ubar;
    let a = decouple_with(&s, &st.p, &st.p_hat, st.phi.as_ref(), x, xbar, &u, &ubar);
    let mean = decouple_with(&s, &st.p, &st.p_hat, st.phi.as_ref(), xbar, xbar, &ubar, &ubar);
    Ok(HamiltonianPoint {
        t,
        x: x.clone(),
        xbar: xbar.clone(),
        u,
        ubar,
        y: a.y,
        ybar: mean.y,
        z: a.z,
        zbar: mean.z,
    })
}

/// Sup over samples of `|Psi|_inf` at the optimal point.
pub fn stationarity_residual(
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    states: &[(f64, DVector<f64>, DVector<f64>)],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (t, x, xbar) in states {
        let p = optimal_point(spec, sol, *t, x, xbar)?;
        let v = psi_at(&spec.at(*t)?, &p);
        worst = worst.max(v.amax());
    }
    Ok(worst)
}

/// Adjoints reconstructed along one simulated path.
#[derive(Debug, Clone)]
pub struct AdjointPath {
    pub y: Vec<DVector<f64>>,
    /// Node-major, `z[k][j]`.
    pub z: Vec<Vec<DVector<f64>>>,
    pub ybar: Vec<DVector<f64>>,
    pub zbar: Vec<Vec<DVector<f64>>>,
}

fn check_path(spec: &ProblemSpec, sol: &RiccatiSolution, path: &SamplePath) -> Result<()> {
    if path.grid != sol.grid {
        return Err(Error::DimensionMismatch(format!(
            "path grid {:?} differs from solution grid {:?}",
            path.grid, sol.grid
        )));
    }
    let nodes = path.grid.nodes();
    if path.x.len() != nodes || path.u.len() != nodes || path.xbar.len() != nodes || path.ubar.len() != nodes {
        return Err(Error::DimensionMismatch("path has the wrong number of nodes".into()));
    }
    if path.x.first().is_some_and(|x| x.len() != spec.n()) || path.u.first().is_some_and(|u| u.len() != spec.m()) {
        return Err(Error::DimensionMismatch(
            "path state or control has the wrong length".into(),
        ));
    }
    Ok(())
}

pub fn adjoint_path(spec: &ProblemSpec, sol: &RiccatiSolution, path: &SamplePath) -> Result<AdjointPath> {
    check_path(spec, sol, path)?;
    let nodes = path.grid.nodes();
    let mut out = AdjointPath {
        y: Vec::with_capacity(nodes),
        z: Vec::with_capacity(nodes),
        ybar: Vec::with_capacity(nodes),
        zbar: Vec::with_capacity(nodes),
    };
    for k in 0..nodes {
        let s = spec.at(path.grid.t(k))?;
        let phi = sol.phi.as_ref().map(|phi| &phi[k]);
        let (x, xbar, u, ubar) = (&path.x[k], &path.xbar[k], &path.u[k], &path.ubar[k]);
        let a = decouple_with(&s, &sol.p[k], &sol.p_hat[k], phi, x, xbar, u, ubar);
        let mean = decouple_with(&s, &sol.p[k], &sol.p_hat[k], phi, xbar, xbar, ubar, ubar);
        out.y.push(a.y);
        out.z.push(a.z);
        out.ybar.push(mean.y);
        out.zbar.push(mean.z);
    }
    Ok(out)
}

/// Defect of the backward equation `dY = -g dt + sum_j Z_j dW_j` along a
/// path, with the drift integrated by the trapezoid rule and the noise
/// term at the left node. Returns `sqrt(sum_k |d_k|^2 / T)`.
pub fn adjoint_bsde_residual(spec: &ProblemSpec, sol: &RiccatiSolution, path: &SamplePath) -> Result<f64> {
    check_path(spec, sol, path)?;
    let steps = path.grid.steps();
    if path.dw.len() != steps || path.dw.iter().any(|w| w.len() != spec.d()) {
        return Err(Error::MissingIncrements);
    }
    let adj = adjoint_path(spec, sol, path)?;
    let g: Vec<DVector<f64>> = (0..path.grid.nodes())
        .map(|k| {
            let p = HamiltonianPoint {
                t: path.grid.t(k),
                x: path.x[k].clone(),
                xbar: path.xbar[k].clone(),
                u: path.u[k].clone(),
                ubar: path.ubar[k].clone(),
                y: adj.y[k].clone(),
                ybar: adj.ybar[k].clone(),
                z: adj.z[k].clone(),
                zbar: adj.zbar[k].clone(),
            };
            Ok(g_at(&spec.at(p.t)?, &p))
        })
        .collect::<Result<_>>()?;
    let h = path.grid.dt();
    let mut sum = 0.0;
    for k in 0..steps {
        let mut d = &adj.y[k + 1] - &adj.y[k] + (&g[k] + &g[k + 1]) * (0.5 * h);
        for (j, zj) in adj.z[k].iter().enumerate() {
            d -= zj * path.dw[k][j];
        }
        sum += d.norm_squared();
    }
    Ok((sum / path.grid.horizon()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Channel, CoefficientSet, WeightSet};
    use crate::random::{random_law, random_pd_problem};
    use crate::riccati::{solve_full, solve_riccati};
    use crate::simulation::{simulate_paths, FeedbackLaw, SimOptions};
    use crate::timefn::{TimeFunction, TimeGrid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_point<R: Rng>(rng: &mut R, t: f64, n: usize, m: usize, d: usize) -> HamiltonianPoint {
        HamiltonianPoint {
            t,
            x: random_vec(rng, n),
            xbar: random_vec(rng, n),
            u: random_vec(rng, m),
            ubar: random_vec(rng, m),
            y: random_vec(rng, n),
            ybar: random_vec(rng, n),
            z: (0..d).map(|_| random_vec(rng, n)).collect(),
            zbar: (0..d).map(|_| random_vec(rng, n)).collect(),
        }
    }

    fn add(a: &HamiltonianPoint, b: &HamiltonianPoint) -> HamiltonianPoint {
        let zs = |u: &[DVector<f64>], v: &[DVector<f64>]| u.iter().zip(v).map(|(p, q)| p + q).collect();
        HamiltonianPoint {
            t: a.t,
            x: &a.x + &b.x,
            xbar: &a.xbar + &b.xbar,
            u: &a.u + &b.u,
            ubar: &a.ubar + &b.ubar,
            y: &a.y + &b.y,
            ybar: &a.ybar + &b.ybar,
            z: zs(&a.z, &b.z),
            zbar: zs(&a.zbar, &b.zbar),
        }
    }

    /// Scalar problem with constant coefficients and one channel.
    fn scalar(a: f64, at: f64, b: f64, bt: f64, c: f64, dd: f64, q: f64, r: f64) -> ProblemSpec {
        let k = |v: f64| TimeFunction::scalar(v);
        let coeffs = CoefficientSet {
            n: 1,
            m: 1,
            a: k(a),
            a_tilde: k(at),
            b: k(b),
            b_tilde: k(bt),
            channels: vec![Channel {
                c: k(c),
                c_tilde: k(0.0),
                d: k(dd),
                d_tilde: k(0.0),
            }],
        };
        let mut weights = WeightSet::zeros(1, 1);
        weights.q = k(q);
        weights.r = k(r);
        weights.g = DMatrix::from_element(1, 1, 1.0);
        ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_element(1, 1.0),
            coeffs,
            weights,
        }
    }

    #[test]
    fn zero_point_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = random_pd_problem(&mut rng, 2, 2, 2);
        let p = HamiltonianPoint::zeros(0.3, 2, 2, 2);
        assert_eq!(g_drift(&p, &spec).unwrap(), DVector::zeros(2));
        assert_eq!(psi(&p, &spec).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn scalar_hand_values() {
        // a = 0.8, a~ = 0.6, alpha = 0.5
        let spec = scalar(0.8, 0.6, 1.0, 0.5, 0.0, 1.0, 0.5, -0.2);
        let mut p = HamiltonianPoint::zeros(0.0, 1, 1, 1);
        p.x[0] = 1.0;
        p.xbar[0] = 1.0;
        p.y[0] = 2.0;
        p.ybar[0] = 2.0;
        assert!((g_drift(&p, &spec).unwrap()[0] - 3.3).abs() < 1e-14);

        let mut p = HamiltonianPoint::zeros(0.0, 1, 1, 1);
        p.u[0] = 1.0;
        assert!((psi(&p, &spec).unwrap()[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = random_pd_problem(&mut rng, 2, 1, 1);
        let p = HamiltonianPoint::zeros(0.0, 2, 2, 1);
        assert!(matches!(g_drift(&p, &spec), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn deterministic_state_gives_hat_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_pd_problem(&mut rng, 2, 1, 1);
        let sol = solve_riccati(&spec, TimeGrid::new(1.0, 200).unwrap()).unwrap();
        let x = random_vec(&mut rng, 2);
        let u = random_vec(&mut rng, 1);
        let a = decouple_adjoint(&spec, &sol, &x, &x, &u, &u, 0.4).unwrap();
        let st = sol.state_at(0.4).unwrap();
        assert!((a.y - &st.p_hat * &x).amax() < 1e-14);
    }

    #[test]
    fn terminal_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_pd_problem(&mut rng, 2, 2, 1);
        let sol = solve_riccati(&spec, TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let (x, xbar, u) = (
            random_vec(&mut rng, 2),
            random_vec(&mut rng, 2),
            random_vec(&mut rng, 2),
        );
        let a = decouple_adjoint(&spec, &sol, &x, &xbar, &u, &u, 1.0).unwrap();
        let expected = spec.g() * &x + &spec.weights.g_tilde * &xbar;
        assert!((a.y - expected).amax() < 1e-12);
    }

    #[test]
    fn zero_state_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_pd_problem(&mut rng, 2, 1, 2);
        let sol = solve_riccati(&spec, TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let states = vec![(0.5, DVector::zeros(2), DVector::zeros(2))];
        assert_eq!(stationarity_residual(&spec, &sol, &states).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_problem_has_tiny_bsde_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut spec = random_pd_problem(&mut rng, 2, 1, 1);
        spec.coeffs.channels = vec![Channel::zeros(2, 1)];
        let grid = TimeGrid::new(1.0, 2000).unwrap();
        let sol = solve_riccati(&spec, grid).unwrap();
        let law = FeedbackLaw::optimal(&spec, &sol).unwrap();
        let opts = SimOptions {
            paths: 1,
            seed: 0,
            retain: true,
        };
        let ens = simulate_paths(&spec, &law, &grid, opts).unwrap();
        let r = adjoint_bsde_residual(&spec, &sol, &ens.path(0).unwrap()).unwrap();
        assert!(r <= 1e-6, "{r}");
    }

    #[test]
    fn missing_increments_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = random_pd_problem(&mut rng, 1, 1, 1);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let sol = solve_riccati(&spec, grid).unwrap();
        let law = random_law(&mut rng, 1, 1, 0.5);
        let opts = SimOptions {
            paths: 1,
            seed: 0,
            retain: true,
        };
        let mut path = simulate_paths(&spec, &law, &grid, opts).unwrap().path(0).unwrap();
        path.dw.clear();
        assert!(matches!(
            adjoint_bsde_residual(&spec, &sol, &path),
            Err(Error::MissingIncrements)
        ));
    }

    #[test]
    fn stationarity_with_linear_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut spec = random_pd_problem(&mut rng, 2, 2, 2);
        spec.weights.ell = Some(random_vec(&mut rng, 2));
        let sol = solve_full(&spec, TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let states: Vec<_> = (0..200)
            .map(|_| {
                (
                    rng.random_range(0.0..1.0),
                    random_vec(&mut rng, 2),
                    random_vec(&mut rng, 2),
                )
            })
            .collect();
        assert!(stationarity_residual(&spec, &sol, &states).unwrap() <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn maps_are_linear(seed in any::<u64>(), n in 1usize..4, m in 1usize..3, d in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, n, m, d);
            let t = rng.random_range(0.0..1.0);
            let p1 = random_point(&mut rng, t, n, m, d);
            let p2 = random_point(&mut rng, t, n, m, d);
            let s = add(&p1, &p2);
            let eg = g_drift(&s, &spec).unwrap() - g_drift(&p1, &spec).unwrap() - g_drift(&p2, &spec).unwrap();
            let ep = psi(&s, &spec).unwrap() - psi(&p1, &spec).unwrap() - psi(&p2, &spec).unwrap();
            prop_assert!(eg.amax() <= 1e-12 && ep.amax() <= 1e-12);
        }

        #[test]
        fn stationarity_holds_pointwise(seed in any::<u64>(), n in 1usize..3, m in 1usize..3, d in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, n, m, d);
            let sol = solve_riccati(&spec, TimeGrid::new(1.0, 200).unwrap()).unwrap();
            let states: Vec<_> = (0..50)
                .map(|_| (rng.random_range(0.0..1.0), random_vec(&mut rng, n), random_vec(&mut rng, n)))
                .collect();
            prop_assert!(stationarity_residual(&spec, &sol, &states).unwrap() <= 1e-5);
        }
    }
}
