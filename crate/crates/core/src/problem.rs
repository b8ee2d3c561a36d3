//! Problem data: controlled mean-field SDE coefficients, cost weights and
//! the positive-definiteness condition on the weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{is_exactly_symmetric, min_eigenvalue, symmetrize, BlockQuadruple};
use crate::timefn::{clamp_time, TimeFunction, TimeGrid};

/// Diffusion coefficients of one Brownian channel `j`:
/// `(C_j X + C~_j E[X] + D_j u + D~_j E[u]) dW_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub c: TimeFunction,
    pub c_tilde: TimeFunction,
    pub d: TimeFunction,
    pub d_tilde: TimeFunction,
}

impl Channel {
    pub fn zeros(n: usize, m: usize) -> Self {
        Channel {
            c: TimeFunction::zeros(n, n),
            c_tilde: TimeFunction::zeros(n, n),
            d: TimeFunction::zeros(n, m),
            d_tilde: TimeFunction::zeros(n, m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub n: usize,
    pub m: usize,
    pub a: TimeFunction,
    pub a_tilde: TimeFunction,
    pub b: TimeFunction,
    pub b_tilde: TimeFunction,
    /// One entry per Brownian channel; `channels.len()` is `d`.
    pub channels: Vec<Channel>,
}

impl CoefficientSet {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        CoefficientSet {
            n,
            m,
            a: TimeFunction::zeros(n, n),
            a_tilde: TimeFunction::zeros(n, n),
            b: TimeFunction::zeros(n, m),
            b_tilde: TimeFunction::zeros(n, m),
            channels: (0..d).map(|_| Channel::zeros(n, m)).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.channels.len()
    }
}

/// Cost weights. Cross terms enter the cost as `2 <S u, x>`; the factor 2
/// is applied by evaluation code only.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub q: TimeFunction,
    pub q_tilde: TimeFunction,
    pub s: TimeFunction,
    pub s_tilde: TimeFunction,
    pub r: TimeFunction,
    pub r_tilde: TimeFunction,
    pub g: DMatrix<f64>,
    pub g_tilde: DMatrix<f64>,
    /// Linear terminal weight: adds `2 <ell, E[X(T)]>` to the cost.
    pub ell: Option<DVector<f64>>,
}

impl WeightSet {
    pub fn zeros(n: usize, m: usize) -> Self {
        WeightSet {
            q: TimeFunction::zeros(n, n),
            q_tilde: TimeFunction::zeros(n, n),
            s: TimeFunction::zeros(n, m),
            s_tilde: TimeFunction::zeros(n, m),
            r: TimeFunction::zeros(m, m),
            r_tilde: TimeFunction::zeros(m, m),
            g: DMatrix::zeros(n, n),
            g_tilde: DMatrix::zeros(n, n),
            ell: None,
        }
    }

    pub fn g_hat(&self) -> DMatrix<f64> {
        symmetrize(&(&self.g + &self.g_tilde))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub coeffs: CoefficientSet,
    pub weights: WeightSet,
}

/// All coefficients and weights evaluated at one time, plus their hatted sums.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub a: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub c: Vec<DMatrix<f64>>,
    pub c_tilde: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub d_tilde: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_tilde: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
    pub hat: HatCoefficients,
}

/// `A^ = A + A~`, and likewise for every coefficient and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct HatCoefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.coeffs.n
    }

    pub fn m(&self) -> usize {
        self.coeffs.m
    }

    pub fn d(&self) -> usize {
        self.coeffs.d()
    }

    pub fn at(&self, t: f64) -> Result<Snapshot> {
        let t = clamp_time(t, self.horizon)?;
        let c = &self.coeffs;
        let w = &self.weights;
        let a = c.a.eval(t)?;
        let a_tilde = c.a_tilde.eval(t)?;
        let b = c.b.eval(t)?;
        let b_tilde = c.b_tilde.eval(t)?;
        let mut cs = Vec::with_capacity(c.d());
        let mut cts = Vec::with_capacity(c.d());
        let mut ds = Vec::with_capacity(c.d());
        let mut dts = Vec::with_capacity(c.d());
        for ch in &c.channels {
            cs.push(ch.c.eval(t)?);
            cts.push(ch.c_tilde.eval(t)?);
            ds.push(ch.d.eval(t)?);
            dts.push(ch.d_tilde.eval(t)?);
        }
        let q = symmetrize(&w.q.eval(t)?);
        let q_tilde = symmetrize(&w.q_tilde.eval(t)?);
        let s = w.s.eval(t)?;
        let s_tilde = w.s_tilde.eval(t)?;
        let r = symmetrize(&w.r.eval(t)?);
        let r_tilde = symmetrize(&w.r_tilde.eval(t)?);
        let hat = HatCoefficients {
            a: &a + &a_tilde,
            b: &b + &b_tilde,
            c: cs.iter().zip(&cts).map(|(x, y)| x + y).collect(),
            d: ds.iter().zip(&dts).map(|(x, y)| x + y).collect(),
            q: symmetrize(&(&q + &q_tilde)),
            s: &s + &s_tilde,
            r: symmetrize(&(&r + &r_tilde)),
            g: w.g_hat(),
        };
        Ok(Snapshot {
            a,
            a_tilde,
            b,
            b_tilde,
            c: cs,
            c_tilde: cts,
            d: ds,
            d_tilde: dts,
            q,
            q_tilde,
            s,
            s_tilde,
            r,
            r_tilde,
            hat,
        })
    }

    pub fn g(&self) -> DMatrix<f64> {
        symmetrize(&self.weights.g)
    }

    pub fn g_hat(&self) -> DMatrix<f64> {
        self.weights.g_hat()
    }
}

pub fn hat_coefficients(spec: &ProblemSpec, t: f64) -> Result<HatCoefficients> {
    Ok(spec.at(t)?.hat)
}

pub fn bold_quadruple(spec: &ProblemSpec, t: f64) -> Result<BlockQuadruple> {
    let s = spec.at(t)?;
    Ok(BlockQuadruple::from_blocks(
        &s.q,
        &s.hat.q,
        &s.s,
        &s.hat.s,
        &s.r,
        &s.hat.r,
        &spec.g(),
        &s.hat.g,
    ))
}

/// Outcome of the positive-definiteness check on a grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PdReport {
    /// `[[Q, S], [S^T, R]] >= -tol` at every node (bold block matrices).
    pub joint_psd: bool,
    /// `R >= delta I` at every node.
    pub r_uniformly_pd: bool,
    /// `G >= -tol`.
    pub g_psd: bool,
    pub worst_joint: NodeMargin,
    pub worst_r: NodeMargin,
    pub g_min_eig: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NodeMargin {
    pub node: usize,
    pub t: f64,
    pub min_eig: f64,
}

impl NodeMargin {
    pub(crate) fn start() -> Self {
        NodeMargin {
            node: 0,
            t: 0.0,
            min_eig: f64::INFINITY,
        }
    }

    pub(crate) fn update(&mut self, node: usize, t: f64, min_eig: f64) {
        if min_eig < self.min_eig {
            *self = NodeMargin { node, t, min_eig };
        }
    }
}

impl PdReport {
    pub fn pass(&self) -> bool {
        self.joint_psd && self.r_uniformly_pd && self.g_psd
    }

    pub fn failed_clauses(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.joint_psd {
            out.push(format!(
                "joint weight block not PSD: min eigenvalue {:.6e} at t = {} (node {})",
                self.worst_joint.min_eig, self.worst_joint.t, self.worst_joint.node
            ));
        }
        if !self.r_uniformly_pd {
            out.push(format!(
                "control weight R not uniformly PD: min eigenvalue {:.6e} at t = {} (node {})",
                self.worst_r.min_eig, self.worst_r.t, self.worst_r.node
            ));
        }
        if !self.g_psd {
            out.push(format!(
                "terminal weight G not PSD: min eigenvalue {:.6e}",
                self.g_min_eig
            ));
        }
        out
    }
}

pub fn check_condition_pd(spec: &ProblemSpec, grid: &TimeGrid, delta: f64, tol: f64) -> Result<PdReport> {
    let mut worst_joint = NodeMargin::start();
    let mut worst_r = NodeMargin::start();
    let mut g_min_eig = f64::INFINITY;
    for (k, t) in grid.times().enumerate() {
        let bq = bold_quadruple(spec, t)?;
        worst_joint.update(k, t, min_eigenvalue(&bq.joint())?);
        worst_r.update(k, t, min_eigenvalue(&bq.r)?);
        if k == 0 {
            g_min_eig = min_eigenvalue(&bq.g)?;
        }
    }
    Ok(PdReport {
        joint_psd: worst_joint.min_eig >= -tol,
        r_uniformly_pd: worst_r.min_eig - delta >= 0.0,
        g_psd: g_min_eig >= -tol,
        worst_joint,
        worst_r,
        g_min_eig,
    })
}

fn check_function(
    name: &str,
    f: &TimeFunction,
    shape: (usize, usize),
    symmetric: bool,
    horizon: f64,
    out: &mut Vec<String>,
) {
    if f.shape() != shape {
        out.push(format!(
            "{name}: expected shape {}x{}, got {}x{}",
            shape.0,
            shape.1,
            f.shape().0,
            f.shape().1
        ));
        return;
    }
    if let TimeFunction::Sampled { horizon: h, .. } = f {
        if *h != horizon {
            out.push(format!("{name}: sampled on [0, {h}], problem horizon is {horizon}"));
        }
    }
    for (k, m) in f.stored().iter().enumerate() {
        if m.iter().any(|v| !v.is_finite()) {
            out.push(format!("{name}: non-finite entry at node {k}"));
        } else if symmetric && !is_exactly_symmetric(m) {
            out.push(format!("{name}: asymmetric sample at node {k}"));
        }
    }
}

/// Every dimension, symmetry and finiteness violation; empty when valid.
pub fn validate(spec: &ProblemSpec) -> Vec<String> {
    let mut out = Vec::new();
    let (n, m, h) = (spec.coeffs.n, spec.coeffs.m, spec.horizon);
    if n == 0 || m == 0 {
        out.push(format!("dimensions must be positive, got n = {n}, m = {m}"));
    }
    if spec.coeffs.channels.is_empty() {
        out.push("at least one Brownian channel is required".into());
    }
    if !(h.is_finite() && h > 0.0) {
        out.push(format!("T must be positive, got {h}"));
    }
    if spec.x0.len() != n {
        out.push(format!("x0: expected length {n}, got {}", spec.x0.len()));
    } else if spec.x0.iter().any(|v| !v.is_finite()) {
        out.push("x0: non-finite entry".into());
    }
    let c = &spec.coeffs;
    check_function("A", &c.a, (n, n), false, h, &mut out);
    check_function("Atilde", &c.a_tilde, (n, n), false, h, &mut out);
    check_function("B", &c.b, (n, m), false, h, &mut out);
    check_function("Btilde", &c.b_tilde, (n, m), false, h, &mut out);
    for (j, ch) in c.channels.iter().enumerate() {
        check_function(&format!("C[{j}]"), &ch.c, (n, n), false, h, &mut out);
        check_function(&format!("Ctilde[{j}]"), &ch.c_tilde, (n, n), false, h, &mut out);
        check_function(&format!("D[{j}]"), &ch.d, (n, m), false, h, &mut out);
        check_function(&format!("Dtilde[{j}]"), &ch.d_tilde, (n, m), false, h, &mut out);
    }
    let w = &spec.weights;
    check_function("Q", &w.q, (n, n), true, h, &mut out);
    check_function("Qtilde", &w.q_tilde, (n, n), true, h, &mut out);
    check_function("S", &w.s, (n, m), false, h, &mut out);
    check_function("Stilde", &w.s_tilde, (n, m), false, h, &mut out);
    check_function("R", &w.r, (m, m), true, h, &mut out);
    check_function("Rtilde", &w.r_tilde, (m, m), true, h, &mut out);
    for (name, g) in [("G", &w.g), ("Gtilde", &w.g_tilde)] {
        if g.shape() != (n, n) {
            out.push(format!(
                "{name}: expected shape {n}x{n}, got {}x{}",
                g.nrows(),
                g.ncols()
            ));
        } else if g.iter().any(|v| !v.is_finite()) {
            out.push(format!("{name}: non-finite entry"));
        } else if !is_exactly_symmetric(g) {
            out.push(format!("{name}: asymmetric"));
        }
    }
    if let Some(ell) = &w.ell {
        if ell.len() != n {
            out.push(format!("ell: expected length {n}, got {}", ell.len()));
        } else if ell.iter().any(|v| !v.is_finite()) {
            out.push("ell: non-finite entry".into());
        }
    }
    out
}

/// [`validate`] as a `Result`.
pub fn ensure_valid(spec: &ProblemSpec) -> Result<()> {
    let v = validate(spec);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_pd_problem;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_problem() -> ProblemSpec {
        let mut w = WeightSet::zeros(2, 1);
        w.q = TimeFunction::constant(DMatrix::identity(2, 2));
        w.r = TimeFunction::constant(DMatrix::identity(1, 1));
        w.g = DMatrix::identity(2, 2);
        ProblemSpec {
            horizon: 1.0,
            x0: DVector::from_vec(vec![1.0, 0.0]),
            coeffs: CoefficientSet::zeros(2, 1, 1),
            weights: w,
        }
    }

    #[test]
    fn zero_tildes_give_plain_hats() {
        let mut spec = identity_problem();
        spec.coeffs.a = TimeFunction::constant(DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]));
        let s = spec.at(0.3).unwrap();
        assert_eq!(s.hat.a, s.a);
        assert_eq!(s.hat.q, s.q);
        assert!(matches!(spec.at(1.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn speed_parameters_hat_sums() {
        let mut spec = identity_problem();
        spec.coeffs = CoefficientSet::zeros(1, 1, 1);
        spec.coeffs.a = TimeFunction::scalar(0.8);
        spec.coeffs.a_tilde = TimeFunction::scalar(0.6);
        spec.coeffs.b = TimeFunction::scalar(0.4);
        spec.coeffs.b_tilde = TimeFunction::scalar(0.1);
        let h = hat_coefficients(&spec, 0.5).unwrap();
        assert!((h.a[(0, 0)] - 1.4).abs() < 1e-15);
        assert!((h.b[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_blocks() {
        let mut spec = identity_problem();
        spec.weights = WeightSet::zeros(2, 1);
        let bq = bold_quadruple(&spec, 0.0).unwrap();
        assert!(bq
            .q
            .iter()
            .chain(bq.s.iter())
            .chain(bq.r.iter())
            .chain(bq.g.iter())
            .all(|v| *v == 0.0));
    }

    #[test]
    fn identity_weights_pass_pd() {
        let spec = identity_problem();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let rep = check_condition_pd(&spec, &grid, 1e-6, 1e-9).unwrap();
        assert!(rep.pass(), "{:?}", rep.failed_clauses());
    }

    #[test]
    fn validate_reports_each_violation() {
        assert!(validate(&identity_problem()).is_empty());

        let mut spec = identity_problem();
        let mut samples = vec![DMatrix::identity(2, 2); 5];
        samples[3][(0, 1)] = 1e-3;
        spec.weights.q = TimeFunction::sampled(1.0, samples).unwrap();
        let v = validate(&spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains('Q') && v[0].contains("node 3"), "{v:?}");

        let mut spec = identity_problem();
        spec.coeffs.b = TimeFunction::zeros(2, 3);
        let v = validate(&spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("B:"), "{v:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hats_linear_in_tildes(seed in 0u64..1000, alpha in -3.0..3.0_f64, t in 0.0..1.0_f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, 2, 2, 2);
            let mut scaled = spec.clone();
            scaled.coeffs.a_tilde = spec.coeffs.a_tilde.scale(alpha);
            scaled.coeffs.b_tilde = spec.coeffs.b_tilde.scale(alpha);
            scaled.weights.q_tilde = spec.weights.q_tilde.scale(alpha);
            let base = spec.at(t).unwrap();
            let hs = scaled.at(t).unwrap().hat;
            let tol = 1e-12;
            prop_assert!((&hs.a - (&base.a + &base.a_tilde * alpha)).amax() < tol);
            prop_assert!((&hs.b - (&base.b + &base.b_tilde * alpha)).amax() < tol);
            prop_assert!((&hs.q - (&base.q + &base.q_tilde * alpha)).amax() < tol);
        }

        #[test]
        fn pd_monotone_under_q_increase(seed in 0u64..1000, eps in 1e-6..1.0_f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, 2, 2, 1);
            let grid = TimeGrid::new(spec.horizon, 10).unwrap();
            let rep = check_condition_pd(&spec, &grid, 1e-6, 1e-9).unwrap();
            prop_assume!(rep.pass());
            let mut bumped = spec.clone();
            bumped.weights.q = spec.weights.q.add(&TimeFunction::constant(DMatrix::identity(2, 2) * eps)).unwrap();
            prop_assert!(check_condition_pd(&bumped, &grid, 1e-6, 1e-9).unwrap().pass());
        }

        #[test]
        fn bold_blocks_match_hats(seed in 0u64..1000, t in 0.0..1.0_f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_pd_problem(&mut rng, 2, 1, 1);
            let bq = bold_quadruple(&spec, t).unwrap();
            let s = spec.at(t).unwrap();
            prop_assert_eq!(bq.q.view((2, 2), (2, 2)).clone_owned(), s.hat.q.clone());
            prop_assert_eq!(bq.q.view((0, 0), (2, 2)).clone_owned(), s.q.clone());
            prop_assert_eq!(bq.r.view((1, 1), (1, 1)).clone_owned(), s.hat.r.clone());
            prop_assert_eq!(bq.s.view((2, 1), (2, 1)).clone_owned(), s.hat.s.clone());
        }
    }
}
