//! Euler-Maruyama sample paths of the controlled mean-field SDE.
//!
//! Both the exact-mean mode and the interacting-particle mode share one
//! step kernel. The control is evaluated as `u = Theta x + w` with
//! `w = (Theta^ - Theta) m + c`, so without mean-field coupling the two
//! modes produce bit-identical paths.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::rng::NormalStream;
use super::{propagate_mean, FeedbackLaw};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::timefn::TimeGrid;

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MeanField {
    /// `E[X]`, `E[u]` from the mean ODE.
    Exact,
    /// `E[X]`, `E[u]` replaced by averages over the simulated particles.
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub paths: usize,
    pub seed: u64,
    /// Keep every path, control and increment (memory `paths * nodes * (n + m + d)`).
    pub retain: bool,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub paths: usize,
    pub seed: u64,
    pub mode: MeanField,
    /// Mean state used by the scheme at each node.
    pub means: Vec<DVector<f64>>,
    /// Mean control `Theta^ m + c` used at each node.
    pub ubar: Vec<DVector<f64>>,
    /// `paths x nodes x n`, path-major.
    pub x: Option<Vec<f64>>,
    /// `paths x nodes x m`
    pub u: Option<Vec<f64>>,
    /// `paths x steps x d`
    pub dw: Option<Vec<f64>>,
    pub costs: Vec<f64>,
    pub emp_mean: Vec<DVector<f64>>,
    /// Per-node sample variance of each state component.
    pub emp_var: Vec<DVector<f64>>,
    pub cost_estimate: f64,
    pub cost_stderr: f64,
}

/// One retained path with the mean-field quantities it was driven by.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub grid: TimeGrid,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub xbar: Vec<DVector<f64>>,
    pub ubar: Vec<DVector<f64>>,
    pub dw: Vec<DVector<f64>>,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, node: usize) -> Option<&[f64]> {
        let nodes = self.grid.nodes();
        self.x
            .as_ref()
            .map(|x| &x[(path * nodes + node) * self.n..(path * nodes + node + 1) * self.n])
    }

    pub fn path(&self, p: usize) -> Result<SamplePath> {
        let (Some(x), Some(u)) = (&self.x, &self.u) else {
            return Err(Error::DomainError("ensemble paths were not retained".into()));
        };
        let dw = self.dw.as_ref().ok_or(Error::MissingIncrements)?;
        if p >= self.paths {
            return Err(Error::DomainError(format!(
                "path {p} out of range ({} paths)",
                self.paths
            )));
        }
        let (nodes, steps) = (self.grid.nodes(), self.grid.steps());
        let take = |data: &[f64], rows: usize, width: usize| -> Vec<DVector<f64>> {
            (0..rows)
                .map(|k| {
                    let o = (p * rows + k) * width;
                    DVector::from_column_slice(&data[o..o + width])
                })
                .collect()
        };
        Ok(SamplePath {
            grid: self.grid,
            x: take(x, nodes, self.n),
            u: take(u, nodes, self.m),
            xbar: self.means.clone(),
            ubar: self.ubar.clone(),
            dw: take(dw, steps, self.d),
        })
    }
}

/// Affine step data at one node, flattened row-major.
struct NodeData {
    n: usize,
    m: usize,
    theta: Vec<f64>,
    w: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// `A~ m + B~ ubar`
    e: Vec<f64>,
    c: Vec<f64>,
    dd: Vec<f64>,
    /// `C~_j m + D~_j ubar`, channel-major.
    ej: Vec<f64>,
    q: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
    mean: Vec<f64>,
    ubar: Vec<f64>,
    /// `<Q^ m, m> + 2 <S^ ubar, m> + <R^ ubar, ubar>`
    mean_cost: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl NodeData {
    fn build(spec: &ProblemSpec, law: &FeedbackLaw, t: f64, mean: &DVector<f64>) -> Result<Self> {
        let s = spec.at(t)?;
        let l = law.at(t)?;
        let ubar = &l.theta_hat * mean + &l.c;
        let w = (&l.theta_hat - &l.theta) * mean + &l.c;
        let e = &s.a_tilde * mean + &s.b_tilde * &ubar;
        let mut c = Vec::new();
        let mut dd = Vec::new();
        let mut ej = Vec::new();
        for j in 0..s.c.len() {
            c.extend(row_major(&s.c[j]));
            dd.extend(row_major(&s.d[j]));
            ej.extend((&s.c_tilde[j] * mean + &s.d_tilde[j] * &ubar).iter());
        }
        let mean_cost =
            mean.dot(&(&s.hat.q * mean)) + 2.0 * mean.dot(&(&s.hat.s * &ubar)) + ubar.dot(&(&s.hat.r * &ubar));
        Ok(NodeData {
            n: spec.n(),
            m: spec.m(),
            theta: row_major(&l.theta),
            w: w.as_slice().to_vec(),
            a: row_major(&s.a),
            b: row_major(&s.b),
            e: e.as_slice().to_vec(),
            c,
            dd,
            ej,
            q: row_major(&s.q),
            s: row_major(&s.s),
            r: row_major(&s.r),
            mean: mean.as_slice().to_vec(),
            ubar: ubar.as_slice().to_vec(),
            mean_cost,
        })
    }

    fn control(&self, x: &[f64], u: &mut [f64]) {
        for i in 0..self.m {
            let row = &self.theta[i * self.n..(i + 1) * self.n];
            u[i] = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.w[i];
        }
    }

    /// `x <- x + (A x + B u + e) h + sum_j (C_j x + D_j u + e_j) dW_j`
    fn step(&self, x: &mut [f64], u: &[f64], dw: &[f64], h: f64, scratch: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            let a = &self.a[i * n..(i + 1) * n];
            let b = &self.b[i * m..(i + 1) * m];
            let mut drift = self.e[i];
            drift += a.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>();
            drift += b.iter().zip(u).map(|(p, q)| p * q).sum::<f64>();
            let mut next = x[i] + drift * h;
            for (j, dwj) in dw.iter().enumerate() {
                let c = &self.c[(j * n + i) * n..(j * n + i + 1) * n];
                let d = &self.dd[(j * n + i) * m..(j * n + i + 1) * m];
                let mut diff = self.ej[j * n + i];
                diff += c.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>();
                diff += d.iter().zip(u).map(|(p, q)| p * q).sum::<f64>();
                next += diff * dwj;
            }
            scratch[i] = next;
        }
        x.copy_from_slice(&scratch[..n]);
    }

    /// Split-form running cost integrand for one path.
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let dx = |i: usize| x[i] - self.mean[i];
        let du = |i: usize| u[i] - self.ubar[i];
        let mut c = self.mean_cost;
        for i in 0..n {
            let xi = dx(i);
            for j in 0..n {
                c += xi * self.q[i * n + j] * dx(j);
            }
            for j in 0..m {
                c += 2.0 * xi * self.s[i * m + j] * du(j);
            }
        }
        for i in 0..m {
            let ui = du(i);
            for j in 0..m {
                c += ui * self.r[i * m + j] * du(j);
            }
        }
        c
    }
}

/// `<G (x - m), x - m> + <G^ m, m> + 2 <ell, m>` at the final node.
fn terminal_cost(spec: &ProblemSpec, x: &[f64], mean: &DVector<f64>) -> f64 {
    let dx = DVector::from_column_slice(x) - mean;
    let mut c = dx.dot(&(spec.g() * &dx)) + mean.dot(&(spec.g_hat() * mean));
    if let Some(ell) = &spec.weights.ell {
        c += 2.0 * ell.dot(mean);
    }
    c
}

fn mean_and_stderr(costs: &[f64]) -> (f64, f64) {
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    if costs.len() < 2 {
        return (mean, 0.0);
    }
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PathOutput {
    cost: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    dw: Vec<f64>,
}

fn check_inputs(spec: &ProblemSpec, law: &FeedbackLaw, min_paths: usize, opts: &SimOptions) -> Result<()> {
    law.check_dims(spec.n(), spec.m())?;
    if opts.paths < min_paths {
        return Err(Error::DomainError(format!(
            "need at least {min_paths} paths, got {}",
            opts.paths
        )));
    }
    Ok(())
}

fn summarize(
    nodes: usize,
    n: usize,
    count: usize,
    sum: &[f64],
    sum_sq: &[f64],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let nf = count as f64;
    let mut mean = Vec::with_capacity(nodes);
    let mut var = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mu = DVector::from_fn(n, |i, _| sum[k * n + i] / nf);
        let v = DVector::from_fn(n, |i, _| {
            if count < 2 {
                0.0
            } else {
                ((sum_sq[k * n + i] - nf * mu[i] * mu[i]) / (nf - 1.0)).max(0.0)
            }
        });
        mean.push(mu);
        var.push(v);
    }
    (mean, var)
}

fn assemble(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    opts: &SimOptions,
    mode: MeanField,
    data: &[NodeData],
    outs: Vec<PathOutput>,
    sum: &[f64],
    sum_sq: &[f64],
) -> PathEnsemble {
    let (n, m, d) = (spec.n(), spec.m(), spec.d());
    let costs: Vec<f64> = outs.iter().map(|o| o.cost).collect();
    let (cost_estimate, cost_stderr) = mean_and_stderr(&costs);
    let (emp_mean, emp_var) = summarize(grid.nodes(), n, opts.paths, sum, sum_sq);
    let (x, u, dw) = if opts.retain {
        let mut x = Vec::with_capacity(opts.paths * grid.nodes() * n);
        let mut u = Vec::with_capacity(opts.paths * grid.nodes() * m);
        let mut dw = Vec::with_capacity(opts.paths * grid.steps() * d);
        for o in &outs {
            x.extend_from_slice(&o.x);
            u.extend_from_slice(&o.u);
            dw.extend_from_slice(&o.dw);
        }
        (Some(x), Some(u), Some(dw))
    } else {
        (None, None, None)
    };
    PathEnsemble {
        grid: *grid,
        n,
        m,
        d,
        paths: opts.paths,
        seed: opts.seed,
        mode,
        means: data.iter().map(|nd| DVector::from_column_slice(&nd.mean)).collect(),
        ubar: data.iter().map(|nd| DVector::from_column_slice(&nd.ubar)).collect(),
        x,
        u,
        dw,
        costs,
        emp_mean,
        emp_var,
        cost_estimate,
        cost_stderr,
    }
}

fn accumulate(sum: &mut [f64], sum_sq: &mut [f64], node: usize, x: &[f64]) {
    let n = x.len();
    for (i, v) in x.iter().enumerate() {
        sum[node * n + i] += v;
        sum_sq[node * n + i] += v * v;
    }
}

/// Euler-Maruyama with the mean-field terms supplied by the mean ODE.
pub fn simulate_paths(
    spec: &ProblemSpec,
    law: &FeedbackLaw,
    grid: &TimeGrid,
    opts: SimOptions,
) -> Result<PathEnsemble> {
    check_inputs(spec, law, 1, &opts)?;
    let (n, m, d) = (spec.n(), spec.m(), spec.d());
    let (nodes, steps, h) = (grid.nodes(), grid.steps(), grid.dt());
    let sqrt_h = h.sqrt();
    let mean_path = propagate_mean(spec, law, grid)?;
    let data: Vec<NodeData> = (0..nodes)
        .map(|k| NodeData::build(spec, law, grid.t(k), &mean_path.m[k]))
        .collect::<Result<_>>()?;
    let terminal_mean = &mean_path.m[steps];

    let run_path = |p: usize, sum: &mut [f64], sum_sq: &mut [f64]| -> PathOutput {
        let mut x = spec.x0.as_slice().to_vec();
        let mut u = vec![0.0; m];
        let mut dw = vec![0.0; d];
        let mut scratch = vec![0.0; n];
        let mut out = PathOutput {
            cost: 0.0,
            x: Vec::new(),
            u: Vec::new(),
            dw: Vec::new(),
        };
        let mut rng = NormalStream::at(opts.seed, p as u64, 0, 0, d);
        for (k, nd) in data[..steps].iter().enumerate() {
            accumulate(sum, sum_sq, k, &x);
            nd.control(&x, &mut u);
            out.cost += h * nd.running_cost(&x, &u);
            for v in dw.iter_mut() {
                *v = sqrt_h * rng.next_normal();
            }
            if opts.retain {
                out.x.extend_from_slice(&x);
                out.u.extend_from_slice(&u);
                out.dw.extend_from_slice(&dw);
            }
            nd.step(&mut x, &u, &dw, h, &mut scratch);
        }
        accumulate(sum, sum_sq, steps, &x);
        data[steps].control(&x, &mut u);
        out.cost += terminal_cost(spec, &x, terminal_mean);
        if opts.retain {
            out.x.extend_from_slice(&x);
            out.u.extend_from_slice(&u);
        }
        out
    };

    // Fixed-size chunks reduced in index order keep the sums independent
    // of the thread count.
    let starts: Vec<usize> = (0..opts.paths).step_by(CHUNK).collect();
    let chunks: Vec<(Vec<PathOutput>, Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&start| {
            let mut sum = vec![0.0; nodes * n];
            let mut sum_sq = vec![0.0; nodes * n];
            let outs = (start..(start + CHUNK).min(opts.paths))
                .map(|p| run_path(p, &mut sum, &mut sum_sq))
                .collect();
            (outs, sum, sum_sq)
        })
        .collect();

    let mut sum = vec![0.0; nodes * n];
    let mut sum_sq = vec![0.0; nodes * n];
    let mut outs = Vec::with_capacity(opts.paths);
    for (o, s, s2) in chunks {
        for i in 0..sum.len() {
            sum[i] += s[i];
            sum_sq[i] += s2[i];
        }
        outs.extend(o);
    }
    Ok(assemble(
        spec,
        grid,
        &opts,
        MeanField::Exact,
        &data,
        outs,
        &sum,
        &sum_sq,
    ))
}

struct Particle {
    x: Vec<f64>,
    rng: NormalStream,
    out: PathOutput,
}

/// Interacting particles: the mean-field terms are the empirical averages
/// over all particles, recomputed at every step.
pub fn simulate_particle_system(
    spec: &ProblemSpec,
    law: &FeedbackLaw,
    grid: &TimeGrid,
    opts: SimOptions,
) -> Result<PathEnsemble> {
    check_inputs(spec, law, 2, &opts)?;
    let (n, m, d) = (spec.n(), spec.m(), spec.d());
    let (nodes, steps, h) = (grid.nodes(), grid.steps(), grid.dt());
    let sqrt_h = h.sqrt();
    let mut particles: Vec<Particle> = (0..opts.paths)
        .map(|p| Particle {
            x: spec.x0.as_slice().to_vec(),
            rng: NormalStream::at(opts.seed, p as u64, 0, 0, d),
            out: PathOutput {
                cost: 0.0,
                x: Vec::new(),
                u: Vec::new(),
                dw: Vec::new(),
            },
        })
        .collect();
    let mut sum = vec![0.0; nodes * n];
    let mut sum_sq = vec![0.0; nodes * n];
    let mut data = Vec::with_capacity(nodes);

    for k in 0..nodes {
        for p in &particles {
            accumulate(&mut sum, &mut sum_sq, k, &p.x);
        }
        let mean = DVector::from_fn(n, |i, _| sum[k * n + i] / opts.paths as f64);
        let nd = NodeData::build(spec, law, grid.t(k), &mean)?;
        if k == steps {
            particles.par_iter_mut().for_each(|p| {
                let mut u = vec![0.0; m];
                nd.control(&p.x, &mut u);
                p.out.cost += terminal_cost(spec, &p.x, &mean);
                if opts.retain {
                    p.out.x.extend_from_slice(&p.x);
                    p.out.u.extend_from_slice(&u);
                }
            });
        } else {
            particles.par_iter_mut().for_each(|p| {
                let mut u = vec![0.0; m];
                let mut dw = vec![0.0; d];
                let mut scratch = vec![0.0; n];
                nd.control(&p.x, &mut u);
                p.out.cost += h * nd.running_cost(&p.x, &u);
                for v in dw.iter_mut() {
                    *v = sqrt_h * p.rng.next_normal();
                }
                if opts.retain {
                    p.out.x.extend_from_slice(&p.x);
                    p.out.u.extend_from_slice(&u);
                    p.out.dw.extend_from_slice(&dw);
                }
                nd.step(&mut p.x, &u, &dw, h, &mut scratch);
            });
        }
        data.push(nd);
    }
    let outs = particles.into_iter().map(|p| p.out).collect();
    Ok(assemble(
        spec,
        grid,
        &opts,
        MeanField::Particle,
        &data,
        outs,
        &sum,
        &sum_sq,
    ))
}

/// Recomputes the per-path costs of a retained ensemble from its stored
/// paths, controls and means (left-endpoint quadrature).
pub fn estimate_cost(ensemble: &PathEnsemble, spec: &ProblemSpec) -> Result<(f64, f64)> {
    let grid = ensemble.grid;
    let (steps, h) = (grid.steps(), grid.dt());
    let snaps: Vec<_> = (0..steps).map(|k| spec.at(grid.t(k))).collect::<Result<_>>()?;
    let mut costs = Vec::with_capacity(ensemble.paths);
    for p in 0..ensemble.paths {
        let path = ensemble.path(p)?;
        let mut c = 0.0;
        for (k, s) in snaps.iter().enumerate() {
            let (mb, ub) = (&path.xbar[k], &path.ubar[k]);
            let dx = &path.x[k] - mb;
            let du = &path.u[k] - ub;
            c += h
                * (dx.dot(&(&s.q * &dx))
                    + 2.0 * dx.dot(&(&s.s * &du))
                    + du.dot(&(&s.r * &du))
                    + mb.dot(&(&s.hat.q * mb))
                    + 2.0 * mb.dot(&(&s.hat.s * ub))
                    + ub.dot(&(&s.hat.r * ub)));
        }
        c += terminal_cost(spec, path.x[steps].as_slice(), &path.xbar[steps]);
        costs.push(c);
    }
    Ok(mean_and_stderr(&costs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Channel;
    use crate::random::{random_law, random_pd_problem};
    use crate::simulation::propagate_moments;
    use crate::timefn::TimeFunction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts(paths: usize, seed: u64) -> SimOptions {
        SimOptions {
            paths,
            seed,
            retain: true,
        }
    }

    #[test]
    fn deterministic_path_tracks_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = random_pd_problem(&mut rng, 2, 1, 1);
        spec.coeffs.channels = vec![Channel::zeros(2, 1)];
        let law = random_law(&mut rng, 2, 1, 0.5);
        for steps in [100, 200] {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let ens = simulate_paths(&spec, &law, &grid, opts(1, 0)).unwrap();
            let path = ens.path(0).unwrap();
            let err = path
                .x
                .iter()
                .zip(&path.xbar)
                .map(|(x, m)| (x - m).amax())
                .fold(0.0, f64::max);
            assert!(err <= 5.0 * grid.dt(), "steps {steps}: {err}");
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_pd_problem(&mut rng, 2, 2, 2);
        let law = random_law(&mut rng, 2, 2, 0.5);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let a = simulate_paths(&spec, &law, &grid, opts(600, 11)).unwrap();
        let b = simulate_paths(&spec, &law, &grid, opts(600, 11)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dw, b.dw);
        assert_eq!(a.costs, b.costs);
        assert_eq!(a.emp_mean, b.emp_mean);
        let c = simulate_paths(&spec, &law, &grid, opts(600, 12)).unwrap();
        assert_ne!(a.dw, c.dw);
        let pa = simulate_particle_system(&spec, &law, &grid, opts(300, 5)).unwrap();
        let pb = simulate_particle_system(&spec, &law, &grid, opts(300, 5)).unwrap();
        assert_eq!(pa.x, pb.x);
    }

    #[test]
    fn modes_coincide_without_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut spec = random_pd_problem(&mut rng, 2, 2, 2);
        spec.coeffs.a_tilde = TimeFunction::zeros(2, 2);
        spec.coeffs.b_tilde = TimeFunction::zeros(2, 2);
        for ch in &mut spec.coeffs.channels {
            ch.c_tilde = TimeFunction::zeros(2, 2);
            ch.d_tilde = TimeFunction::zeros(2, 2);
        }
        let mut law = random_law(&mut rng, 2, 2, 0.5);
        law.theta_hat = law.theta.clone();
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let exact = simulate_paths(&spec, &law, &grid, opts(50, 9)).unwrap();
        let particle = simulate_particle_system(&spec, &law, &grid, opts(50, 9)).unwrap();
        assert_eq!(exact.x, particle.x);
        assert_eq!(exact.u, particle.u);
        assert_eq!(exact.dw, particle.dw);
    }

    #[test]
    fn minimal_particle_system_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = random_pd_problem(&mut rng, 1, 1, 1);
        let law = random_law(&mut rng, 1, 1, 0.5);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ens = simulate_particle_system(&spec, &law, &grid, opts(2, 0)).unwrap();
        assert_eq!(ens.costs.len(), 2);
        assert!(simulate_particle_system(&spec, &law, &grid, opts(1, 0)).is_err());
    }

    #[test]
    fn recomputed_cost_matches_and_agrees_with_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = random_pd_problem(&mut rng, 2, 1, 1);
        let law = random_law(&mut rng, 2, 1, 0.5);
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let ens = simulate_paths(&spec, &law, &grid, opts(20_000, 1)).unwrap();
        let (mean, se) = estimate_cost(&ens, &spec).unwrap();
        assert!((mean - ens.cost_estimate).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((se - ens.cost_stderr).abs() <= 1e-12 * se.max(1.0));
        let oracle = propagate_moments(&spec, &law, &grid).unwrap().total_cost;
        // Euler bias is O(dt); allow it on top of 4 standard errors.
        assert!(
            (mean - oracle).abs() <= 4.0 * se + 0.02 * oracle.abs(),
            "{mean} {oracle} {se}"
        );
    }

    #[test]
    fn zero_weights_give_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut spec = random_pd_problem(&mut rng, 2, 1, 1);
        spec.weights = crate::problem::WeightSet::zeros(2, 1);
        let law = random_law(&mut rng, 2, 1, 0.5);
        let ens = simulate_paths(&spec, &law, &TimeGrid::new(1.0, 20).unwrap(), opts(100, 0)).unwrap();
        assert_eq!(estimate_cost(&ens, &spec).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn unretained_paths_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = random_pd_problem(&mut rng, 1, 1, 1);
        let law = random_law(&mut rng, 1, 1, 0.5);
        let mut o = opts(10, 0);
        o.retain = false;
        let ens = simulate_paths(&spec, &law, &TimeGrid::new(1.0, 20).unwrap(), o).unwrap();
        assert!(ens.path(0).is_err());
        assert!(estimate_cost(&ens, &spec).is_err());
    }
}
