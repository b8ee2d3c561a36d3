//! Tabulated antiderivatives of scalar functions on `[0, T]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::timefn::TimeFunction;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const DEFAULT_CELLS: usize = 4096;

/// `F(t) = int_0^t f(s) ds`, tabulated by two-panel Simpson per cell and
/// finished inside a cell with one more Simpson step.
#[derive(Clone)]
pub struct Antiderivative {
    horizon: f64,
    h: f64,
    cum: Vec<f64>,
    f: ScalarFn,
}

impl std::fmt::Debug for Antiderivative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Antiderivative")
            .field("horizon", &self.horizon)
            .field("cells", &(self.cum.len() - 1))
            .finish()
    }
}

fn simpson(f: &ScalarFn, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    let q = 0.5 * (a + m);
    let r = 0.5 * (m + b);
    (b - a) / 12.0 * (f(a) + 4.0 * f(q) + 2.0 * f(m) + 4.0 * f(r) + f(b))
}

impl Antiderivative {
    /// `cells` is rounded up to a multiple of `align` so that kinks of
    /// piecewise-linear inputs fall on cell boundaries.
    pub fn new(f: ScalarFn, horizon: f64, align: usize) -> Self {
        let align = align.max(1);
        let cells = DEFAULT_CELLS.div_ceil(align) * align;
        let h = horizon / cells as f64;
        let mut cum = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cum.push(acc);
        for k in 0..cells {
            acc += simpson(&f, k as f64 * h, (k + 1) as f64 * h);
            cum.push(acc);
        }
        Antiderivative { horizon, h, cum, f }
    }

    pub fn at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        let cells = self.cum.len() - 1;
        let k = ((t / self.h).floor() as usize).min(cells - 1);
        let t0 = k as f64 * self.h;
        if t == t0 {
            return self.cum[k];
        }
        if t == self.horizon {
            return self.cum[cells];
        }
        self.cum[k] + simpson(&self.f, t0, t)
    }

    /// `int_a^b f`.
    pub fn between(&self, a: f64, b: f64) -> f64 {
        self.at(b) - self.at(a)
    }
}

/// Number of linear pieces of a function, for cell alignment.
pub fn pieces(f: &TimeFunction) -> usize {
    f.stored().len().saturating_sub(1).max(1)
}

pub fn require_scalar(name: &str, f: &TimeFunction, horizon: f64) -> Result<()> {
    if f.shape() != (1, 1) {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be scalar, got {:?}",
            f.shape()
        )));
    }
    require_horizon(name, f, horizon)
}

pub fn require_horizon(name: &str, f: &TimeFunction, horizon: f64) -> Result<()> {
    if let TimeFunction::Sampled { horizon: h, .. } = f {
        if (h - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::DimensionMismatch(format!(
                "{name} is sampled on [0, {h}], expected [0, {horizon}]"
            )));
        }
    }
    Ok(())
}

/// Scalar view of a `1 x 1` function; times outside the horizon are clamped.
pub fn scalar_fn(f: &TimeFunction, horizon: f64) -> ScalarFn {
    let f = f.clone();
    Arc::new(move |t| f.eval(t.clamp(0.0, horizon)).map(|m| m[(0, 0)]).unwrap_or(f64::NAN))
}
