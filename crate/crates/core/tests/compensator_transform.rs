use mflq::compensator::shifted_problem;
use mflq::hamiltonian::decouple_adjoint;
use mflq::random::{random_compensator, random_pd_problem, uniform_matrix};
use mflq::riccati::solve_riccati;
use mflq::TimeGrid;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shifted_adjoints_subtract_the_compensator(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, d) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=2));
        let spec = random_pd_problem(&mut rng, n, m, d);
        let comp = random_compensator(&mut rng, n, 0.1);
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let shifted = shifted_problem(&spec, &comp, &grid).unwrap();
        let sol = solve_riccati(&spec, grid).unwrap();
        let sol_hk = solve_riccati(&shifted, grid).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(0..=grid.steps());
            let t = grid.t(k);
            let col = |rng: &mut ChaCha8Rng, rows| DVector::from_column_slice(uniform_matrix(rng, rows, 1, 2.0).as_slice());
            let (x, xbar, u, ubar) = (col(&mut rng, n), col(&mut rng, n), col(&mut rng, m), col(&mut rng, m));
            let a = decouple_adjoint(&spec, &sol, &x, &xbar, &u, &ubar, t).unwrap();
            let b = decouple_adjoint(&shifted, &sol_hk, &x, &xbar, &u, &ubar, t).unwrap();
            let h = comp.h.eval(t).unwrap();
            let kk = comp.k.eval(t).unwrap();
            let y = &a.y - &h * (&x - &xbar) - &kk * &xbar;
            prop_assert!((&b.y - y).amax() <= 1e-6);
            let s = spec.at(t).unwrap();
            for j in 0..d {
                let diffusion = &s.c[j] * &x + &s.c_tilde[j] * &xbar + &s.d[j] * &u + &s.d_tilde[j] * &ubar;
                let z = &a.z[j] - &h * diffusion;
                prop_assert!((&b.z[j] - z).amax() <= 1e-6);
            }
        }
    }
}
