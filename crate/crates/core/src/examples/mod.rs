//! The three worked examples: mean-variance portfolio selection, the
//! scalar speed/variance trade-off with a relaxed compensator, and the
//! problem with a negative definite control weight. Each comes with a
//! builder, closed-form references and a verification report.

mod mean_variance;
mod negdef;
pub mod quad;
mod speed;

pub use mean_variance::{
    build_mean_variance, mv_closed_forms, mv_deviations, verify_mean_variance, MarketModel, MvClosedForms, MvDeviations,
};
pub use negdef::{build_negdef_example, negdef_closed_forms, verify_negdef, NegdefClosedForms, NegdefParams};
pub use speed::{
    build_speed_example, speed_compensator, speed_feedback, speed_figure, speed_form_agreement, speed_open_loop,
    verify_speed, SpeedExample, SpeedK, SpeedParams,
};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::export::Table;
use crate::timefn::TimeGrid;

/// Named reference functions sampled on a grid.
#[derive(Debug, Clone)]
pub struct ClosedFormBundle {
    pub grid: TimeGrid,
    pub series: Vec<(String, Vec<DMatrix<f64>>)>,
}

impl ClosedFormBundle {
    pub fn get(&self, name: &str) -> Option<&[DMatrix<f64>]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// One column per matrix entry, named `name` or `name[i,j]`.
    pub fn to_table(&self) -> Table {
        let mut columns = vec!["t".to_string()];
        for (name, values) in &self.series {
            let (r, c) = values[0].shape();
            if (r, c) == (1, 1) {
                columns.push(name.clone());
            } else {
                for j in 0..c {
                    for i in 0..r {
                        columns.push(format!("{name}[{i},{j}]"));
                    }
                }
            }
        }
        let rows = (0..self.grid.nodes())
            .map(|k| {
                let mut row = vec![self.grid.t(k)];
                for (_, values) in &self.series {
                    row.extend(values[k].iter());
                }
                row
            })
            .collect();
        Table { columns, rows }
    }
}

/// One identity check with its measured value and tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    /// Passes when `value > threshold`.
    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance: threshold,
            pass: value > threshold,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Check {
            name: name.to_string(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub example: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
