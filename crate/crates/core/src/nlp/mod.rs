//! Dense augmented-Lagrangian solver over box constraints.
//!
//! Inequalities and equalities are handled through the
//! Powell–Hestenes–Rockafellar augmented Lagrangian
//!
//! ```text
//! L_ρ(x) = f(x) + μᵀh(x) + ρ/2‖h(x)‖² + 1/(2ρ) Σ [max(0, λ_i + ρ g_i(x))² − λ_i²]
//! ```
//!
//! which is minimized over the box by a projected quasi-Newton method that
//! uses the exact penalty curvature `ρJᵀJ`, with a spectral projected-gradient
//! fallback. After each inner solve the multipliers are updated by
//! `λ ← max(0, λ + ρg)`, `μ ← μ + ρh`, and ρ grows tenfold whenever the
//! constraint violation is above `tol_feas` and fails to shrink by a factor
//! of four.

mod inner;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bounds, SmoothProgram, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_kkt: f64,
    pub tol_feas: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub rho_init: f64,
    pub rho_factor: f64,
    /// Required shrink factor of the violation between outer iterations.
    pub violation_decrease: f64,
    pub rho_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-6,
            tol_feas: 1e-8,
            max_inner: 5000,
            max_outer: 50,
            rho_init: 10.0,
            rho_factor: 10.0,
            violation_decrease: 0.25,
            rho_max: 1e12,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let positive = [self.tol_kkt, self.tol_feas, self.rho_init, self.rho_max];
        if positive.iter().any(|v| !(*v > 0.0)) || self.rho_factor <= 1.0 {
            return Err(Error::usage(
                "solver tolerances and penalties must be positive",
            ));
        }
        if !(self.violation_decrease > 0.0 && self.violation_decrease < 1.0) {
            return Err(Error::usage("violation_decrease must lie in (0, 1)"));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::usage("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Multipliers for every constraint row of a [`SmoothProgram`].
///
/// The sign convention is `∇f + Jgᵀλ + Jhᵀμ − z_lower + z_upper = 0` with
/// `λ, z_lower, z_upper ≥ 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
}

impl MultiplierSet {
    pub fn zeros(prog: &dyn SmoothProgram) -> Self {
        Self {
            ineq: vec![0.0; prog.num_ineq()],
            eq: vec![0.0; prog.num_eq()],
            box_lower: vec![0.0; prog.dim()],
            box_upper: vec![0.0; prog.dim()],
        }
    }

    fn matches(&self, prog: &dyn SmoothProgram) -> bool {
        self.ineq.len() == prog.num_ineq()
            && self.eq.len() == prog.num_eq()
            && self.box_lower.len() == prog.dim()
            && self.box_upper.len() == prog.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub point: Vec<f64>,
    pub multipliers: MultiplierSet,
    pub objective: f64,
    pub kkt_residual: f64,
    pub violation: f64,
    /// Total inner (projected-gradient) iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub status: SolveStatus,
    /// Seconds.
    pub wall_time: f64,
}

impl SolveReport {
    pub fn point_vector(&self) -> Vector {
        Vector::from_column_slice(&self.point)
    }
}

/// Residual components at a point; `kkt_residual` is their maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktParts {
    pub stationarity: f64,
    pub feasibility: f64,
    pub sign: f64,
    pub complementarity: f64,
}

impl KktParts {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.sign)
            .max(self.complementarity)
    }
}

pub fn kkt_parts(prog: &dyn SmoothProgram, x: &Vector, mult: &MultiplierSet) -> Result<KktParts> {
    let n = prog.dim();
    if x.len() != n || !mult.matches(prog) {
        return Err(Error::usage(
            "point or multipliers do not match the program dimensions",
        ));
    }
    let (_, grad) = prog.objective(x);
    let (g, jg) = prog.ineq(x);
    let (h, jh) = prog.eq(x);
    let lam = Vector::from_column_slice(&mult.ineq);
    let mu = Vector::from_column_slice(&mult.eq);
    let mut r = grad + jg.tr_mul(&lam) + jh.tr_mul(&mu);
    for i in 0..n {
        r[i] += mult.box_upper[i] - mult.box_lower[i];
    }
    let mut parts = KktParts {
        stationarity: r.amax(),
        feasibility: g.iter().fold(0.0f64, |a, &v| a.max(v)).max(h.amax()),
        ..Default::default()
    };
    for (l, gi) in mult.ineq.iter().zip(g.iter()) {
        parts.sign = parts.sign.max(-l);
        parts.complementarity = parts.complementarity.max((l * gi).abs());
    }
    let unbounded = Bounds::unbounded(n);
    let bounds = prog.bounds().unwrap_or(&unbounded);
    parts.feasibility = parts.feasibility.max(bounds.violation(x));
    for i in 0..n {
        let (zl, zu) = (mult.box_lower[i], mult.box_upper[i]);
        parts.sign = parts.sign.max(-zl).max(-zu);
        let cl = if bounds.lower[i].is_finite() {
            zl * (x[i] - bounds.lower[i])
        } else {
            zl
        };
        let cu = if bounds.upper[i].is_finite() {
            zu * (bounds.upper[i] - x[i])
        } else {
            zu
        };
        parts.complementarity = parts.complementarity.max(cl.abs()).max(cu.abs());
    }
    Ok(parts)
}

/// Max-norm of the stationarity, feasibility, sign and complementarity
/// violations; zero exactly at a KKT point.
pub fn kkt_residual(prog: &dyn SmoothProgram, x: &Vector, mult: &MultiplierSet) -> Result<f64> {
    Ok(kkt_parts(prog, x, mult)?.max())
}

/// Box multipliers consistent with the projected gradient of `r = ∇ₓL`: a
/// component whose projected step lands on a bound takes the bound's
/// multiplier.
fn box_multipliers(bounds: &Bounds, x: &Vector, r: &Vector) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for i in 0..n {
        let p = x[i] - r[i];
        if r[i] > 0.0 && p <= bounds.lower[i] && bounds.lower[i].is_finite() {
            zl[i] = r[i];
        } else if r[i] < 0.0 && p >= bounds.upper[i] && bounds.upper[i].is_finite() {
            zu[i] = -r[i];
        }
    }
    (zl, zu)
}

struct AugmentedLagrangian<'a> {
    prog: &'a dyn SmoothProgram,
    lam: &'a Vector,
    mu: &'a Vector,
    rho: f64,
}

impl inner::Subproblem for AugmentedLagrangian<'_> {
    fn eval(&mut self, z: &Vector) -> (f64, Vector) {
        let (f, gf) = self.prog.objective(z);
        let (g, jg) = self.prog.ineq(z);
        let (h, jh) = self.prog.eq(z);
        let rho = self.rho;
        let shifted = (self.lam + &g * rho).map(|v| v.max(0.0));
        let value = f
            + self.mu.dot(&h)
            + 0.5 * rho * h.norm_squared()
            + (shifted.norm_squared() - self.lam.norm_squared()) / (2.0 * rho);
        let grad = gf + jg.tr_mul(&shifted) + jh.tr_mul(&(self.mu + &h * rho));
        (value, grad)
    }

    /// `∇²ℓ(σ, ν) + ρ (J_Aᵀ J_A + J_hᵀ J_h)` with the shifted multipliers
    /// `σ`, `ν` and the inequality rows `A` where `σ > 0`. Without a program
    /// Hessian only the penalty part is returned.
    fn known_curvature(&mut self, z: &Vector) -> Option<inner::Curvature> {
        let (g, jg) = self.prog.ineq(z);
        let (h, jh) = self.prog.eq(z);
        let sigma = (self.lam + &g * self.rho).map(|v| v.max(0.0));
        let active: Vec<usize> = (0..g.len()).filter(|&i| sigma[i] > 0.0).collect();
        let ja = jg.select_rows(active.iter());
        let penalty = (ja.tr_mul(&ja) + jh.tr_mul(&jh)) * self.rho;
        let nu = self.mu + &h * self.rho;
        Some(match self.prog.lagrangian_hessian(z, &sigma, &nu) {
            Some(hl) => inner::Curvature {
                matrix: hl + penalty,
                exact: true,
            },
            None => inner::Curvature {
                matrix: penalty,
                exact: false,
            },
        })
    }

    /// Lagrangian secant with the shifted multipliers frozen at `x_new`,
    /// which keeps the ρ-sized jumps of the penalty curvature out of it.
    fn remainder_secant(&mut self, x: &Vector, x_new: &Vector, _grad_diff: Vector) -> Vector {
        let (g_new, _) = self.prog.ineq(x_new);
        let (h_new, _) = self.prog.eq(x_new);
        let sigma = (self.lam + &g_new * self.rho).map(|v| v.max(0.0));
        let nu = self.mu + &h_new * self.rho;
        let lagrangian_grad = |z: &Vector| {
            let (_, gf) = self.prog.objective(z);
            let (_, jg) = self.prog.ineq(z);
            let (_, jh) = self.prog.eq(z);
            gf + jg.tr_mul(&sigma) + jh.tr_mul(&nu)
        };
        lagrangian_grad(x_new) - lagrangian_grad(x)
    }
}

/// Number of feasible outer iterations whose inner solve stops short of its
/// tolerance before the solve gives up with `IterationLimit`.
const STAGNATION_LIMIT: usize = 3;

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn solve(prog: &dyn SmoothProgram, x0: &Vector, opts: &SolverOptions) -> Result<SolveReport> {
    solve_warm(prog, x0, opts, None)
}

/// Solves from `x0`, optionally warm-starting the constraint multipliers.
/// Deterministic for fixed inputs.
pub fn solve_warm(
    prog: &dyn SmoothProgram,
    x0: &Vector,
    opts: &SolverOptions,
    initial: Option<&MultiplierSet>,
) -> Result<SolveReport> {
    opts.validate()?;
    let n = prog.dim();
    if x0.len() != n {
        return Err(Error::usage(format!(
            "start vector has length {}, program dimension is {n}",
            x0.len()
        )));
    }
    let start = Instant::now();
    let unbounded = Bounds::unbounded(n);
    let bounds = prog.bounds().unwrap_or(&unbounded);

    let (mut lam, mut mu) = match initial {
        Some(m) if m.ineq.len() == prog.num_ineq() && m.eq.len() == prog.num_eq() => (
            Vector::from_iterator(m.ineq.len(), m.ineq.iter().map(|v| v.max(0.0))),
            Vector::from_column_slice(&m.eq),
        ),
        Some(_) => {
            return Err(Error::usage(
                "warm-start multipliers do not match the program",
            ))
        }
        None => (Vector::zeros(prog.num_ineq()), Vector::zeros(prog.num_eq())),
    };
    let mut rho = opts.rho_init;
    let mut x = x0.clone();
    bounds.project(&mut x);

    let mut inner_tol = (1e-3f64).max(opts.tol_kkt);
    let inner_floor = 0.5 * opts.tol_kkt;
    let mut prev_violation = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::IterationLimit;
    let mut outer = 0;
    let mut stalled_at_cap = 0;
    let mut stagnant = 0;
    let mut mult = MultiplierSet::zeros(prog);
    let mut qn = inner::QuasiNewton::default();

    while outer < opts.max_outer {
        outer += 1;
        let mut sub = AugmentedLagrangian {
            prog,
            lam: &lam,
            mu: &mu,
            rho,
        };
        let out = inner::minimize(&mut sub, bounds, &mut x, inner_tol, opts.max_inner, &mut qn);
        iterations += out.iterations;
        if out.stop == inner::InnerStop::NonFinite || !all_finite(&x) {
            status = SolveStatus::NumericalFailure;
            break;
        }

        let (g, _) = prog.ineq(&x);
        let (h, _) = prog.eq(&x);
        if !all_finite(&g) || !all_finite(&h) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let violation = h.amax().max(g.iter().fold(0.0, |a, &v| a.max(v)));
        lam = (&lam + &g * rho).map(|v| v.max(0.0));
        mu += &h * rho;

        // `out.gradient` is ∇f + Jgᵀλ⁺ + Jhᵀμ⁺ at x, i.e. the Lagrangian
        // gradient at the updated multipliers.
        let (zl, zu) = box_multipliers(bounds, &x, &out.gradient);
        mult = MultiplierSet {
            ineq: lam.iter().copied().collect(),
            eq: mu.iter().copied().collect(),
            box_lower: zl,
            box_upper: zu,
        };
        let parts = kkt_parts(prog, &x, &mult)?;
        if !parts.max().is_finite() || !all_finite(&lam) || !all_finite(&mu) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let optimal = parts.stationarity <= opts.tol_kkt
            && parts.complementarity <= opts.tol_kkt
            && parts.sign <= opts.tol_kkt;
        if parts.feasibility <= opts.tol_feas && optimal {
            status = SolveStatus::Converged;
            break;
        }

        if violation > opts.tol_feas && violation > opts.violation_decrease * prev_violation {
            if rho >= opts.rho_max {
                stalled_at_cap += 1;
            }
            rho = (rho * opts.rho_factor).min(opts.rho_max);
        }
        if stalled_at_cap >= 3 && parts.feasibility > opts.tol_feas {
            status = SolveStatus::Infeasible;
            break;
        }
        // feasible, but the subproblems no longer reach their tolerance
        if out.stop != inner::InnerStop::Stationary && parts.feasibility <= opts.tol_feas {
            stagnant += 1;
            if stagnant >= STAGNATION_LIMIT {
                break;
            }
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.1).max(inner_floor);
    }

    let parts = kkt_parts(prog, &x, &mult)?;
    if status == SolveStatus::IterationLimit && parts.feasibility > opts.tol_feas {
        status = SolveStatus::Infeasible;
    }
    Ok(SolveReport {
        objective: prog.objective_value(&x),
        point: x.iter().copied().collect(),
        kkt_residual: parts.max(),
        violation: parts.feasibility,
        multipliers: mult,
        iterations,
        outer_iterations: outer,
        status,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
