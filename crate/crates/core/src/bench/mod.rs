//! Instance generation, file formats, the experiment harness and
//! performance profiles.

mod experiment;
mod generate;
pub mod io;
mod profile;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homotopy::StartY;
use crate::model::{cardinality, PortfolioInstance, RiskKind};
use crate::stationarity::Classification;

pub use experiment::{
    assign_gaps, run_cell, run_experiment, summarize, ExperimentConfig, ExperimentResult,
    GroupSummary, ScheduleOverrides, SizeSpec,
};
pub use generate::{generate_instance, GeneratorParams, UboundScheme};
pub use profile::{performance_profile, profile_from_ratios, write_profile, ProfileCurve};

/// Thresholds of the feasibility test applied to every result.
pub const BUDGET_TOL: f64 = 1e-6;
pub const BOX_TOL: f64 = 1e-8;
pub const SUPPORT_TOL: f64 = 1e-6;
pub const COMPLEMENTARITY_TOL: f64 = 1e-6;
/// Objectives this close to the best one count as best.
pub const BEST_TIE_TOL: f64 = 1e-8;

/// A solution approach, written as `scholtes-01`, `kanzow-schwartz-00`,
/// `direct-01`, `oracle`, … where the suffix names the start `y⁰ = e` (01)
/// or `y⁰ = 0` (00).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Scholtes(StartY),
    KanzowSchwartz(StartY),
    Direct(StartY),
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Scholtes(StartY::Ones),
        Method::Scholtes(StartY::Zeros),
        Method::KanzowSchwartz(StartY::Ones),
        Method::KanzowSchwartz(StartY::Zeros),
        Method::Direct(StartY::Ones),
        Method::Direct(StartY::Zeros),
        Method::Oracle,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |y: &StartY| match y {
            StartY::Ones => "01",
            StartY::Zeros => "00",
        };
        match self {
            Method::Scholtes(y) => write!(f, "scholtes-{}", suffix(y)),
            Method::KanzowSchwartz(y) => write!(f, "kanzow-schwartz-{}", suffix(y)),
            Method::Direct(y) => write!(f, "direct-{}", suffix(y)),
            Method::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One solve of one problem. `objective` is `+∞` when no point was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub method: Method,
    pub measure: RiskKind,
    pub beta: f64,
    pub objective: f64,
    pub time_ms: f64,
    pub cardinality: usize,
    pub feasible: bool,
    pub gap: Option<f64>,
    pub stationarity: Option<Classification>,
    pub status: String,
}

/// `(f − f_best)/|f_best|`, which is the usual relative gap for positive
/// `f_best`; `None` when `f_best = 0`.
pub fn relative_gap(f: f64, f_best: f64) -> Option<f64> {
    (f_best != 0.0).then(|| (f - f_best) / f_best.abs())
}

/// Whether `x` (with `y` when the method has one) satisfies the budget, the
/// box, the cardinality bound and complementarity at the reporting
/// thresholds.
pub fn is_feasible(inst: &PortfolioInstance, x: &[f64], y: Option<&[f64]>) -> bool {
    if x.len() != inst.n() || x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let budget = (x.iter().sum::<f64>() - 1.0).abs() <= BUDGET_TOL;
    let boxed = x
        .iter()
        .zip(inst.ubound().iter())
        .all(|(&v, &u)| v >= -BOX_TOL && v <= u + BOX_TOL);
    let sparse = cardinality(x, SUPPORT_TOL) <= inst.kappa();
    let complementary = y.is_none_or(|y| {
        y.len() == x.len()
            && x.iter()
                .zip(y)
                .fold(0.0f64, |a, (u, v)| a.max((u * v).abs()))
                <= COMPLEMENTARITY_TOL
    });
    budget && boxed && sparse && complementary
}
