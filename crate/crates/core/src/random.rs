//! Random problem instances for property tests and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::compensator::{CompensatorPair, LambdaFunction};
use crate::matrix::symmetrize;
use crate::problem::{Channel, CoefficientSet, ProblemSpec, WeightSet};
use crate::simulation::FeedbackLaw;
use crate::timefn::TimeFunction;

pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    symmetrize(&uniform_matrix(rng, n, n, scale))
}

pub fn random_psd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let l = uniform_matrix(rng, n, n, scale);
    symmetrize(&(&l * l.transpose()))
}

/// `f(t) = f0 + t f1`, stored exactly as two samples.
fn linear_in_time(horizon: f64, f0: DMatrix<f64>, f1: &DMatrix<f64>) -> TimeFunction {
    let f_end = &f0 + f1 * horizon;
    TimeFunction::sampled(horizon, vec![f0, f_end]).expect("two samples of equal shape")
}

/// Splits a PSD block `W` of size `n + m` into `(Q, S, R + shift I)`.
fn split_joint(w: &DMatrix<f64>, n: usize, m: usize, shift: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let q = symmetrize(&w.view((0, 0), (n, n)).clone_owned());
    let s = w.view((0, n), (n, m)).clone_owned();
    let r = symmetrize(&(w.view((n, n), (m, m)).clone_owned() + DMatrix::identity(m, m) * shift));
    (q, s, r)
}

/// A problem satisfying the positive-definiteness condition, on `[0, 1]`,
/// with a time-varying state drift and deviation weight.
pub fn random_pd_problem<R: Rng>(rng: &mut R, n: usize, m: usize, d: usize) -> ProblemSpec {
    let horizon = 1.0;
    let a0 = uniform_matrix(rng, n, n, 0.5);
    let a1 = uniform_matrix(rng, n, n, 0.3);
    let coeffs = CoefficientSet {
        n,
        m,
        a: linear_in_time(horizon, a0, &a1),
        a_tilde: TimeFunction::constant(uniform_matrix(rng, n, n, 0.5)),
        b: TimeFunction::constant(uniform_matrix(rng, n, m, 0.6)),
        b_tilde: TimeFunction::constant(uniform_matrix(rng, n, m, 0.4)),
        channels: (0..d)
            .map(|_| Channel {
                c: TimeFunction::constant(uniform_matrix(rng, n, n, 0.3)),
                c_tilde: TimeFunction::constant(uniform_matrix(rng, n, n, 0.3)),
                d: TimeFunction::constant(uniform_matrix(rng, n, m, 0.5)),
                d_tilde: TimeFunction::constant(uniform_matrix(rng, n, m, 0.3)),
            })
            .collect(),
    };

    let joint = random_psd(rng, n + m, 0.6);
    let joint_hat = random_psd(rng, n + m, 0.6);
    let (q, s, r) = split_joint(&joint, n, m, 0.3);
    let (q_hat, s_hat, r_hat) = split_joint(&joint_hat, n, m, 0.3);
    // Q(t) = (1 + t/2) Q0 stays inside the PSD cone.
    let q_fn = linear_in_time(horizon, q.clone(), &(&q * 0.5));
    let q_tilde_fn = linear_in_time(horizon, symmetrize(&(&q_hat - &q)), &(&q * -0.5));
    let g = random_psd(rng, n, 0.8);
    let g_hat = random_psd(rng, n, 0.8);
    let weights = WeightSet {
        q: q_fn,
        q_tilde: q_tilde_fn.map(symmetrize),
        s: TimeFunction::constant(s.clone()),
        s_tilde: TimeFunction::constant(&s_hat - &s),
        r: TimeFunction::constant(r.clone()),
        r_tilde: TimeFunction::constant(symmetrize(&(&r_hat - &r))),
        g_tilde: symmetrize(&(&g_hat - &g)),
        g,
        ell: None,
    };
    ProblemSpec {
        horizon,
        x0: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        coeffs,
        weights,
    }
}

/// `(H, K)` with `H(t) = H0 + t H1`, `K(t) = K0 + t K1`.
pub fn random_compensator<R: Rng>(rng: &mut R, n: usize, scale: f64) -> CompensatorPair {
    let lambda = |rng: &mut R| {
        LambdaFunction::new(
            random_symmetric(rng, n, scale),
            TimeFunction::constant(random_symmetric(rng, n, scale)),
        )
        .expect("random compensator data is finite")
    };
    let h = lambda(rng);
    let k = lambda(rng);
    CompensatorPair { h, k }
}

pub fn random_law<R: Rng>(rng: &mut R, n: usize, m: usize, scale: f64) -> FeedbackLaw {
    FeedbackLaw {
        theta: TimeFunction::constant(uniform_matrix(rng, m, n, scale)),
        theta_hat: TimeFunction::constant(uniform_matrix(rng, m, n, scale)),
        c: TimeFunction::constant(uniform_matrix(rng, m, 1, scale)),
    }
}
