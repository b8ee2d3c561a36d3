//! Matrix-valued functions of time on `[0, T]` and the uniform solver grid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative slack allowed when a query time overshoots `[0, T]` by rounding.
const DOMAIN_SLACK: f64 = 1e-12;

/// Uniform grid `t_k = k T / steps`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::DomainError(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node time; the last node is exactly `T`.
    pub fn t(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.t(k))
    }

    /// The grid with twice as many steps (its even nodes coincide with ours).
    pub fn refined(&self) -> Self {
        TimeGrid {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }
}

/// A matrix function of time: constant, or uniformly sampled on `[0, T]`
/// with linear interpolation between samples.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFunction {
    Constant(DMatrix<f64>),
    Sampled { horizon: f64, samples: Vec<DMatrix<f64>> },
}

impl TimeFunction {
    pub fn constant(m: DMatrix<f64>) -> Self {
        TimeFunction::Constant(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        TimeFunction::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        TimeFunction::Constant(DMatrix::from_element(1, 1, v))
    }

    /// Uniform samples on `[0, horizon]`; needs at least two samples of equal shape.
    pub fn sampled(horizon: f64, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidMatrix(format!(
                "a sampled function needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::DomainError(format!("horizon must be positive, got {horizon}")));
        }
        let shape = samples[0].shape();
        if let Some(k) = samples.iter().position(|s| s.shape() != shape) {
            return Err(Error::DimensionMismatch(format!(
                "sample {k} has shape {:?}, expected {:?}",
                samples[k].shape(),
                shape
            )));
        }
        Ok(TimeFunction::Sampled { horizon, samples })
    }

    /// Samples `f` at `count` uniform points of `[0, horizon]`.
    pub fn from_fn<F>(horizon: f64, count: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> DMatrix<f64>,
    {
        let grid = TimeGrid::new(horizon, count.saturating_sub(1).max(1))?;
        Self::sampled(horizon, grid.times().map(&mut f).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            TimeFunction::Constant(m) => m.shape(),
            TimeFunction::Sampled { samples, .. } => samples[0].shape(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFunction::Constant(_))
    }

    /// Every stored matrix (one for a constant).
    pub fn stored(&self) -> &[DMatrix<f64>] {
        match self {
            TimeFunction::Constant(m) => std::slice::from_ref(m),
            TimeFunction::Sampled { samples, .. } => samples,
        }
    }

    /// Value at `t`. Grid nodes return the stored sample exactly.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        match self {
            TimeFunction::Constant(m) => Ok(m.clone()),
            TimeFunction::Sampled { horizon, samples } => {
                let t = clamp_time(t, *horizon)?;
                let cells = (samples.len() - 1) as f64;
                let s = t / horizon * cells;
                let nearest = s.round();
                if (s - nearest).abs() <= 1e-9 {
                    return Ok(samples[nearest as usize].clone());
                }
                let i = (s.floor() as usize).min(samples.len() - 2);
                let w = s - i as f64;
                Ok(&samples[i] * (1.0 - w) + &samples[i + 1] * w)
            }
        }
    }

    /// Applies `f` to every stored matrix.
    pub fn map<F>(&self, mut f: F) -> Self
    where
        F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
    {
        match self {
            TimeFunction::Constant(m) => TimeFunction::Constant(f(m)),
            TimeFunction::Sampled { horizon, samples } => TimeFunction::Sampled {
                horizon: *horizon,
                samples: samples.iter().map(f).collect(),
            },
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|m| m * alpha)
    }

    /// Pointwise sum. Two sampled functions must share the same sample count.
    pub fn add(&self, other: &TimeFunction) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {:?} and {:?} functions",
                self.shape(),
                other.shape()
            )));
        }
        match (self, other) {
            (TimeFunction::Constant(a), TimeFunction::Constant(b)) => Ok(TimeFunction::Constant(a + b)),
            (TimeFunction::Constant(a), s) | (s, TimeFunction::Constant(a)) => Ok(s.map(|m| m + a)),
            (
                TimeFunction::Sampled {
                    horizon: h1,
                    samples: s1,
                },
                TimeFunction::Sampled {
                    horizon: h2,
                    samples: s2,
                },
            ) => {
                if s1.len() != s2.len() || h1 != h2 {
                    return Err(Error::DimensionMismatch(format!(
                        "sampled functions on different grids ({} vs {} samples)",
                        s1.len(),
                        s2.len()
                    )));
                }
                Ok(TimeFunction::Sampled {
                    horizon: *h1,
                    samples: s1.iter().zip(s2).map(|(a, b)| a + b).collect(),
                })
            }
        }
    }
}

pub(crate) fn clamp_time(t: f64, horizon: f64) -> Result<f64> {
    let slack = DOMAIN_SLACK * horizon.max(1.0);
    if !t.is_finite() || t < -slack || t > horizon + slack {
        return Err(Error::OutOfDomain { t, horizon });
    }
    Ok(t.clamp(0.0, horizon))
}
