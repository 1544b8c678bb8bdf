//! Regularization driver: solve `NLP(t)` for `t = t₀, t₀·s, t₀·s², …` and
//! warm-start each solve from the previous one.
//!
//! The run stops when `‖x ∘ y‖∞ ≤ tol_comp` or when the next parameter
//! drops below `t_floor`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProgramRef, Rebounded, SmoothProgram, Vector};
use crate::nlp::{self, MultiplierSet, SolveStatus, SolverOptions};
use crate::reformulate::{
    continuous_reformulation, regularized_program, IteratePair, Regularization, RegularizationKind,
};

/// Start vector for the auxiliary variable `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StartY {
    Ones,
    Zeros,
}

impl StartY {
    pub fn vector(self, n: usize) -> Vector {
        match self {
            StartY::Ones => Vector::from_element(n, 1.0),
            StartY::Zeros => Vector::zeros(n),
        }
    }
}

impl fmt::Display for StartY {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartY::Ones => "ones",
            StartY::Zeros => "zeros",
        })
    }
}

impl FromStr for StartY {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" | "1" | "e" => Ok(StartY::Ones),
            "zeros" | "0" => Ok(StartY::Zeros),
            _ => Err(Error::Parse(format!(
                "unknown y start '{s}' (expected ones|zeros)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomotopySchedule {
    pub t0: f64,
    pub shrink: f64,
    pub tol_comp: f64,
    pub t_floor: f64,
    pub method: RegularizationKind,
    pub y0_mode: StartY,
    pub inner: SolverOptions,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        Self {
            t0: 1.0,
            shrink: 0.01,
            tol_comp: 1e-6,
            t_floor: 1e-8,
            method: RegularizationKind {
                variant: Regularization::Scholtes,
                nonneg_x: false,
            },
            y0_mode: StartY::Ones,
            inner: SolverOptions::default(),
        }
    }
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::usage(format!(
                "shrink = {} must lie in (0, 1)",
                self.shrink
            )));
        }
        if !(self.t_floor > 0.0 && self.t0 > self.t_floor && self.t0.is_finite()) {
            return Err(Error::usage(format!(
                "need t0 > t_floor > 0 (t0 = {}, t_floor = {})",
                self.t0, self.t_floor
            )));
        }
        if !(self.tol_comp > 0.0) {
            return Err(Error::usage("tol_comp must be positive"));
        }
        Ok(())
    }

    /// Every parameter value the driver may visit: `t_{k+1} = shrink·t_k`
    /// while `t_k ≥ t_floor`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.t0;
        while t >= self.t_floor {
            out.push(t);
            t *= self.shrink;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HomotopyStatus {
    /// `‖x ∘ y‖∞ ≤ tol_comp`.
    Converged,
    /// The parameter fell below `t_floor` first.
    FloorReached,
    InnerFailure,
}

/// One inner solve of the regularization path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub status: SolveStatus,
    pub objective: f64,
    pub complementarity: f64,
    pub kkt_residual: f64,
    pub violation: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub pair: IteratePair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomotopyResult {
    pub pair: IteratePair,
    /// Multipliers of the last accepted regularized solve.
    pub multipliers: MultiplierSet,
    pub objective: f64,
    pub outer_steps: usize,
    pub per_step: Vec<StepRecord>,
    pub status: HomotopyStatus,
    /// Status of the failing inner solve, if any.
    pub inner_failure: Option<SolveStatus>,
    pub feasible_for_reformulation: bool,
}

fn accepted(status: SolveStatus) -> bool {
    matches!(status, SolveStatus::Converged | SolveStatus::IterationLimit)
}

fn check_start(prog: &dyn SmoothProgram, x0: &Vector) -> Result<()> {
    if x0.len() != prog.dim() {
        return Err(Error::usage(format!(
            "start vector has length {}, program dimension is {}",
            x0.len(),
            prog.dim()
        )));
    }
    Ok(())
}

fn joint_start(x0: &Vector, y0: StartY) -> Vector {
    let n = x0.len();
    let mut z = Vector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, n).copy_from(&y0.vector(n));
    z
}

/// Runs the regularization path from `(x0, y0)`.
///
/// An inner solve ending `Infeasible` or `NumericalFailure` stops the path;
/// the last accepted pair is returned with status
/// [`HomotopyStatus::InnerFailure`] (the failed point itself if the very first
/// solve fails). Inner solves that only hit the iteration cap end at a
/// feasible point and are accepted.
pub fn run(
    prog: ProgramRef,
    kappa: usize,
    schedule: &HomotopySchedule,
    x0: &Vector,
) -> Result<HomotopyResult> {
    check_start(prog.as_ref(), x0)?;
    let start = IteratePair::from_joint(&joint_start(x0, schedule.y0_mode));
    run_from(prog, kappa, schedule, &start)
}

/// Same as [`run`] but from an explicit starting pair; `schedule.y0_mode` is
/// ignored.
pub fn run_from(
    prog: ProgramRef,
    kappa: usize,
    schedule: &HomotopySchedule,
    start: &IteratePair,
) -> Result<HomotopyResult> {
    schedule.validate()?;
    check_start(prog.as_ref(), &start.x_vector())?;
    let mut z = start.joint();
    let mut warm: Option<MultiplierSet> = None;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut last: Option<(IteratePair, MultiplierSet, f64)> = None;
    let mut t = schedule.t0;

    let (status, inner_failure) = loop {
        let reg = regularized_program(prog.clone(), kappa, schedule.method, t)?;
        let report = nlp::solve_warm(&reg, &z, &schedule.inner, warm.as_ref())?;
        let pair = IteratePair::from_joint(&report.point_vector());
        let comp = pair.complementarity();
        steps.push(StepRecord {
            t,
            status: report.status,
            objective: report.objective,
            complementarity: comp,
            kkt_residual: report.kkt_residual,
            violation: report.violation,
            iterations: report.iterations,
            wall_time: report.wall_time,
            pair: pair.clone(),
        });
        if !accepted(report.status) {
            if last.is_none() {
                last = Some((pair, report.multipliers, report.objective));
            }
            break (HomotopyStatus::InnerFailure, Some(report.status));
        }
        z = report.point_vector();
        last = Some((pair, report.multipliers.clone(), report.objective));
        warm = Some(report.multipliers);
        if comp <= schedule.tol_comp {
            break (HomotopyStatus::Converged, None);
        }
        t *= schedule.shrink;
        if t < schedule.t_floor {
            break (HomotopyStatus::FloorReached, None);
        }
    };

    let (pair, multipliers, objective) = last.expect("at least one step is always taken");
    let feasible = pair.is_reformulation_feasible(prog.as_ref(), kappa, schedule.tol_comp);
    Ok(HomotopyResult {
        pair,
        multipliers,
        objective,
        outer_steps: steps.len(),
        per_step: steps,
        status,
        inner_failure,
        feasible_for_reformulation: feasible,
    })
}

/// Solves the unregularized continuous reformulation once from `(x0, y0)`.
/// The single step is logged with `t = 0`.
pub fn solve_direct(
    prog: ProgramRef,
    kappa: usize,
    y0: StartY,
    x0: &Vector,
    opts: &SolverOptions,
    tol_comp: f64,
) -> Result<HomotopyResult> {
    check_start(prog.as_ref(), x0)?;
    let reform = continuous_reformulation(prog.clone(), kappa)?;
    let report = nlp::solve(&reform, &joint_start(x0, y0), opts)?;
    let pair = IteratePair::from_joint(&report.point_vector());
    let step = StepRecord {
        t: 0.0,
        status: report.status,
        objective: report.objective,
        complementarity: pair.complementarity(),
        kkt_residual: report.kkt_residual,
        violation: report.violation,
        iterations: report.iterations,
        wall_time: report.wall_time,
        pair: pair.clone(),
    };
    let (status, inner_failure) = if report.status == SolveStatus::Converged {
        (HomotopyStatus::Converged, None)
    } else {
        (HomotopyStatus::InnerFailure, Some(report.status))
    };
    let feasible = pair.is_reformulation_feasible(prog.as_ref(), kappa, tol_comp);
    Ok(HomotopyResult {
        pair,
        multipliers: report.multipliers,
        objective: report.objective,
        outer_steps: 1,
        per_step: vec![step],
        status,
        inner_failure,
        feasible_for_reformulation: feasible,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolishResult {
    pub x: Vec<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    /// False when the restricted solve failed and the thresholded input was
    /// returned instead.
    pub restricted_solved: bool,
}

/// Indices of the (at most) `kappa` largest `|x_i| > tol`, in increasing
/// index order. Ties in magnitude prefer the smaller index.
pub fn top_support(x: &[f64], kappa: usize, tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).filter(|&i| x[i].abs() > tol).collect();
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    idx.truncate(kappa);
    idx.sort_unstable();
    idx
}

/// Keeps the `kappa` largest components of `pair.x` and re-solves the
/// program with every other component pinned to zero.
pub fn polish(
    prog: ProgramRef,
    kappa: usize,
    pair: &IteratePair,
    tol: f64,
    opts: &SolverOptions,
) -> Result<PolishResult> {
    if pair.len() != prog.dim() {
        return Err(Error::usage("pair does not match the program dimension"));
    }
    let support = top_support(&pair.x, kappa, tol);
    let mut thresholded = Vector::zeros(pair.len());
    for &i in &support {
        thresholded[i] = pair.x[i];
    }
    let fallback = |support: Vec<usize>| PolishResult {
        objective: prog.objective_value(&thresholded),
        x: thresholded.iter().copied().collect(),
        support,
        restricted_solved: false,
    };
    let restricted = match Rebounded::restrict_to_support(prog.clone(), &support) {
        Ok(r) => r,
        Err(Error::Infeasible(_)) => return Ok(fallback(support)),
        Err(e) => return Err(e),
    };
    let report = nlp::solve(&restricted, &thresholded, opts)?;
    if !accepted(report.status) {
        return Ok(fallback(support));
    }
    let base_value = prog.objective_value(&thresholded);
    let thresholded_feasible =
        crate::model::max_violation(&restricted, &thresholded) <= opts.tol_feas;
    if thresholded_feasible && report.objective > base_value + 1e-8 {
        return Ok(fallback(support));
    }
    Ok(PolishResult {
        x: report.point,
        support,
        objective: report.objective,
        restricted_solved: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{max_violation, Bounds, FnProgram, Matrix};
    use std::sync::Arc;

    fn target_program(c: Vec<f64>) -> ProgramRef {
        let n = c.len();
        let c = Vector::from_vec(c);
        Arc::new(FnProgram::new(n, move |x: &Vector| {
            let d = x - &c;
            (d.norm_squared(), 2.0 * d)
        }))
    }

    #[test]
    fn default_parameter_sequence() {
        let s = HomotopySchedule::default();
        let ts = s.parameters();
        assert_eq!(ts.len(), 5);
        let mut t = 1.0;
        for (k, &v) in ts.iter().enumerate() {
            assert_eq!(v, t);
            assert!((v - 10f64.powi(-2 * k as i32)).abs() <= 1e-15 * v);
            t *= 0.01;
        }
    }

    #[test]
    fn schedule_validation() {
        let base = HomotopySchedule::default();
        let bad = [
            HomotopySchedule {
                shrink: 1.0,
                ..base
            },
            HomotopySchedule {
                t_floor: 2.0,
                ..base
            },
            HomotopySchedule {
                tol_comp: 0.0,
                ..base
            },
        ];
        for s in bad {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn two_dimensional_target() {
        let prog = target_program(vec![1.0, 1.0]);
        let start = IteratePair::new(vec![0.0, 0.0], vec![1.0, 1.0 - 1e-3]).unwrap();
        let r = run_from(prog.clone(), 1, &HomotopySchedule::default(), &start).unwrap();
        assert_eq!(r.status, HomotopyStatus::Converged);
        assert!(r.feasible_for_reformulation);
        assert_eq!(crate::model::cardinality(&r.pair.x, 1e-6), 1);
        assert!(
            (r.objective - 1.0).abs() <= 1e-5,
            "objective {}",
            r.objective
        );
        let ts: Vec<f64> = r.per_step.iter().map(|s| s.t).collect();
        assert_eq!(
            ts,
            HomotopySchedule::default().parameters()[..ts.len()].to_vec()
        );
    }

    #[test]
    fn symmetric_start_reaches_sparse_target() {
        // Ties in the breakpoint order are resolved by index, so the
        // symmetric start x = 0, y = e still ends on a sparse point.
        let prog = target_program(vec![1.0, 1.0]);
        let r = run(prog, 1, &HomotopySchedule::default(), &Vector::zeros(2)).unwrap();
        assert_eq!(r.status, HomotopyStatus::Converged);
        assert_eq!(crate::model::cardinality(&r.pair.x, 1e-6), 1);
        assert!(
            (r.objective - 1.0).abs() < 1e-5,
            "objective {}",
            r.objective
        );
    }

    #[test]
    fn converged_steps_are_feasible_for_their_regularization() {
        let prog = target_program(vec![1.0, -0.5, 0.25, 2.0]);
        let schedule = HomotopySchedule::default();
        let r = run(prog.clone(), 2, &schedule, &Vector::zeros(4)).unwrap();
        for step in &r.per_step {
            if step.status == SolveStatus::Converged {
                let reg = regularized_program(prog.clone(), 2, schedule.method, step.t).unwrap();
                assert!(max_violation(&reg, &step.pair.joint()) <= 1e-8);
            }
        }
    }

    #[test]
    fn dense_equality_is_infeasible() {
        // h forces x = e/2 exactly, but κ = 1 < n = 2
        let base = FnProgram::new(2, |x: &Vector| (x.norm_squared(), 2.0 * x))
            .with_eq(2, |x: &Vector| (x.map(|v| v - 0.5), Matrix::identity(2, 2)));
        let prog: ProgramRef = Arc::new(base);
        let r = run(prog, 1, &HomotopySchedule::default(), &Vector::zeros(2)).unwrap();
        assert_ne!(r.status, HomotopyStatus::Converged);
        assert!(!r.feasible_for_reformulation);
    }

    #[test]
    fn top_support_picks_largest() {
        let x = [0.7, 0.3 - 1e-7, 1e-7, 2e-7];
        assert_eq!(top_support(&x, 2, 1e-6), vec![0, 1]);
        assert_eq!(top_support(&[0.5, -0.9, 0.1], 1, 1e-6), vec![1]);
        assert_eq!(top_support(&[0.5, 0.5, 0.5], 2, 1e-6), vec![0, 1]);
    }

    #[test]
    fn polish_keeps_sparse_point() {
        let n = 3;
        let base = FnProgram::new(n, |x: &Vector| {
            let d = x - Vector::from_vec(vec![0.8, 0.1, 0.6]);
            (d.norm_squared(), 2.0 * d)
        })
        .with_bounds(Bounds::new(Vector::zeros(n), Vector::from_element(n, 1.0)).unwrap())
        .unwrap();
        let prog: ProgramRef = Arc::new(base);
        let pair = IteratePair::new(vec![0.8, 0.0, 0.6], vec![0.0, 1.0, 0.0]).unwrap();
        let p = polish(prog, 2, &pair, 1e-6, &SolverOptions::default()).unwrap();
        assert!(p.restricted_solved);
        assert_eq!(p.support, vec![0, 2]);
        for (a, b) in p.x.iter().zip(&pair.x) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}
