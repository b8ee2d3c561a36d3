//! Plain-text and binary artifacts: CSV tables with fixed 17-digit
//! formatting and a flat binary dump of retained path ensembles.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic  8 bytes  "MFLQENS1"
//! n, m, d, paths, steps, seed    u64 each
//! x      paths * (steps + 1) * n  f64, path-major, row-major within a path
//! u      paths * (steps + 1) * m  f64
//! dw     paths * steps * d        f64
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::riccati::RiccatiSolution;
use crate::simulation::{MomentState, PathEnsemble};

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"MFLQENS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn matrix_columns(out: &mut Vec<String>, name: &str, rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            out.push(format!("{name}[{i}][{j}]"));
        }
    }
}

fn push_row_major(row: &mut Vec<f64>, m: &nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(i, j)]);
        }
    }
}

/// `t, P[i][j]..., Phat[i][j]..., phi[i]..., Gamma[i][j]..., margin1, margin2`.
pub fn riccati_table(sol: &RiccatiSolution) -> Table {
    let n = sol.p[0].nrows();
    let (gm, gn) = sol.gamma[0].shape();
    let mut columns = vec!["t".to_string()];
    matrix_columns(&mut columns, "P", n, n);
    matrix_columns(&mut columns, "Phat", n, n);
    if sol.phi.is_some() {
        columns.extend((0..n).map(|i| format!("phi[{i}]")));
    }
    matrix_columns(&mut columns, "Gamma", gm, gn);
    columns.push("margin1".into());
    columns.push("margin2".into());
    let rows = sol
        .grid
        .times()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![t];
            push_row_major(&mut row, &sol.p[k]);
            push_row_major(&mut row, &sol.p_hat[k]);
            if let Some(phi) = &sol.phi {
                row.extend(phi[k].iter());
            }
            push_row_major(&mut row, &sol.gamma[k]);
            row.push(sol.margins[k].0);
            row.push(sol.margins[k].1);
            row
        })
        .collect();
    Table { columns, rows }
}

/// `t, m[i]..., V[i][j]..., runningCost`.
pub fn moments_table(ms: &MomentState) -> Table {
    let n = ms.m[0].len();
    let mut columns = vec!["t".to_string()];
    columns.extend((0..n).map(|i| format!("m[{i}]")));
    matrix_columns(&mut columns, "V", n, n);
    columns.push("runningCost".into());
    let rows = ms
        .grid
        .times()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![t];
            row.extend(ms.m[k].iter());
            push_row_major(&mut row, &ms.v[k]);
            row.push(ms.running_cost[k]);
            row
        })
        .collect();
    Table { columns, rows }
}

/// `t, empMean[i]..., empVar[i][i]...`.
pub fn ensemble_summary_table(ens: &PathEnsemble) -> Table {
    let mut columns = vec!["t".to_string()];
    columns.extend((0..ens.n).map(|i| format!("empMean[{i}]")));
    columns.extend((0..ens.n).map(|i| format!("empVar[{i}][{i}]")));
    let rows = ens
        .grid
        .times()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![t];
            row.extend(ens.emp_mean[k].iter());
            row.extend(ens.emp_var[k].iter());
            row
        })
        .collect();
    Table { columns, rows }
}

pub fn write_ensemble<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    let (Some(x), Some(u), Some(dw)) = (&ens.x, &ens.u, &ens.dw) else {
        return Err(Error::DomainError("ensemble paths were not retained".into()));
    };
    let io = |e: std::io::Error| Error::Io(e.to_string());
    w.write_all(ENSEMBLE_MAGIC).map_err(io)?;
    for v in [ens.n, ens.m, ens.d, ens.paths, ens.grid.steps()] {
        w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
    }
    w.write_all(&ens.seed.to_le_bytes()).map_err(io)?;
    for data in [x, u, dw] {
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Header and body of a dumped ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDump {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub dw: Vec<f64>,
}

pub fn read_ensemble<R: Read>(mut r: R) -> Result<EnsembleDump> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(Error::Parse("not an ensemble dump".into()));
    }
    let mut word = [0u8; 8];
    let mut header = [0u64; 6];
    for h in &mut header {
        r.read_exact(&mut word).map_err(io)?;
        *h = u64::from_le_bytes(word);
    }
    let [n, m, d, paths, steps, seed] = header;
    let (n, m, d, paths, steps) = (n as usize, m as usize, d as usize, paths as usize, steps as usize);
    let mut read = |len: usize| -> Result<Vec<f64>> {
        (0..len)
            .map(|_| {
                r.read_exact(&mut word).map_err(io)?;
                Ok(f64::from_le_bytes(word))
            })
            .collect()
    };
    let x = read(paths * (steps + 1) * n)?;
    let u = read(paths * (steps + 1) * m)?;
    let dw = read(paths * steps * d)?;
    Ok(EnsembleDump {
        n,
        m,
        d,
        paths,
        steps,
        seed,
        x,
        u,
        dw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_law, random_pd_problem};
    use crate::riccati::solve_full;
    use crate::simulation::{propagate_moments, simulate_paths, SimOptions};
    use crate::timefn::TimeGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_formatting_is_fixed() {
        let t = Table {
            columns: vec!["t".into(), "x".into()],
            rows: vec![vec![0.0, 1.0 / 3.0], vec![1.0, -2.5]],
        };
        assert_eq!(
            t.to_csv(),
            "t,x\n0.0000000000000000e0,3.3333333333333331e-1\n1.0000000000000000e0,-2.5000000000000000e0\n"
        );
    }

    #[test]
    fn riccati_and_moment_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = random_pd_problem(&mut rng, 2, 1, 1);
        spec.weights.ell = Some(nalgebra::DVector::from_vec(vec![0.1, -0.2]));
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let sol = solve_full(&spec, grid).unwrap();
        let t = riccati_table(&sol);
        assert_eq!(t.columns.len(), 1 + 4 + 4 + 2 + 2 + 2);
        assert_eq!(t.rows.len(), 21);
        assert_eq!(t.column("P[0][1]").unwrap()[20], spec.g()[(0, 1)]);
        let law = random_law(&mut rng, 2, 1, 0.3);
        let ms = propagate_moments(&spec, &law, &grid).unwrap();
        let mt = moments_table(&ms);
        assert_eq!(mt.columns.last().unwrap(), "runningCost");
        assert_eq!(mt.rows[0].len(), mt.columns.len());
    }

    #[test]
    fn ensemble_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = random_pd_problem(&mut rng, 2, 1, 2);
        let law = random_law(&mut rng, 2, 1, 0.3);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let opts = SimOptions {
            paths: 7,
            seed: 99,
            retain: true,
        };
        let ens = simulate_paths(&spec, &law, &grid, opts).unwrap();
        let mut buf = Vec::new();
        write_ensemble(&ens, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 48 + 8 * (7 * 11 * 2 + 7 * 11 + 7 * 10 * 2));
        let dump = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(
            (dump.n, dump.m, dump.d, dump.paths, dump.steps, dump.seed),
            (2, 1, 2, 7, 10, 99)
        );
        assert_eq!(Some(dump.x), ens.x);
        assert_eq!(Some(dump.dw), ens.dw);
        assert!(read_ensemble(&b"NOTMAGIC"[..]).is_err());
        let summary = ensemble_summary_table(&ens);
        assert_eq!(
            summary.columns,
            vec!["t", "empMean[0]", "empMean[1]", "empVar[0][0]", "empVar[1][1]"]
        );
    }
}
