//! Stationarity certificates and constraint qualifications for
//! cardinality-constrained programs.
//!
//! Box bounds are treated as ordinary inequality rows, `l_i − x_i ≤ 0` and
//! `x_i − u_i ≤ 0`, appended after the program's own `g` rows. Every
//! multiplier vector for inequalities therefore has length `m + 2n`; rows
//! of infinite bounds are never active and always carry a zero multiplier.
//!
//! Positive linear independence of `{∇g_i}_{active}` together with a
//! free-sign block `F` is decided through Gordan's alternative: it fails
//! exactly when some convex combination of the (normalized) active
//! gradients lies in the span of `F`. The distance from that span is
//! minimized by nonnegative least squares with the simplex constraint
//! enforced by a heavily weighted row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{max_violation, Matrix, SmoothProgram, Vector};
use crate::reformulate::IteratePair;

pub const DEFAULT_TOL_ACT: f64 = 1e-6;
pub const DEFAULT_TOL_RES: f64 = 1e-5;
/// Relative singular-value threshold of the rank test.
pub const RANK_TOL: f64 = 1e-8;
/// Smallest distance of a convex combination of active gradients from the
/// free span for which positive independence is accepted.
pub const SLACK_TOL: f64 = 1e-8;

const SIMPLEX_WEIGHT: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    S,
    M,
    None,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::S => "S",
            Classification::M => "M",
            Classification::None => "None",
        })
    }
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" => Ok(Classification::S),
            "M" => Ok(Classification::M),
            "None" => Ok(Classification::None),
            _ => Err(Error::Parse(format!("unknown stationarity class '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSets {
    /// Indices into the extended inequality rows (`g`, then lower, then upper).
    pub ineq_active: Vec<usize>,
    pub zero_set: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub classification: Classification,
    pub gamma: Vec<f64>,
    /// One entry per extended inequality row.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `‖∇f + Σλ∇g + Σμ∇h + γ‖∞` at the returned multipliers.
    pub residual: f64,
    pub cq_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CqWitness {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CqCheck {
    pub holds: bool,
    /// A nonzero dependence `Σλ∇g + Σμ∇h + Σγe_i ≈ 0` when the check fails.
    pub witness: Option<CqWitness>,
}

/// Values and gradients of `g` followed by the box rows.
fn extended_ineq(prog: &dyn SmoothProgram, x: &Vector) -> (Vector, Matrix) {
    let n = prog.dim();
    let (g, jg) = prog.ineq(x);
    let m = g.len();
    let mut vals = Vector::from_element(m + 2 * n, f64::NEG_INFINITY);
    let mut jac = Matrix::zeros(m + 2 * n, n);
    vals.rows_mut(0, m).copy_from(&g);
    jac.rows_mut(0, m).copy_from(&jg);
    for i in 0..n {
        jac[(m + i, i)] = -1.0;
        jac[(m + n + i, i)] = 1.0;
    }
    if let Some(b) = prog.bounds() {
        for i in 0..n {
            if b.lower[i].is_finite() {
                vals[m + i] = b.lower[i] - x[i];
            }
            if b.upper[i].is_finite() {
                vals[m + n + i] = x[i] - b.upper[i];
            }
        }
    }
    (vals, jac)
}

/// Rows with `g_i ≥ −tol_act` count as active, so slightly violated rows
/// are included, and `|x_i| ≤ tol_act` defines the zero set.
pub fn active_sets(prog: &dyn SmoothProgram, x: &Vector, tol_act: f64) -> ActiveSets {
    let (vals, _) = extended_ineq(prog, x);
    ActiveSets {
        ineq_active: (0..vals.len()).filter(|&i| vals[i] >= -tol_act).collect(),
        zero_set: (0..x.len()).filter(|&i| x[i].abs() <= tol_act).collect(),
    }
}

/// Lawson–Hanson active-set method for `min ‖Ax − b‖₂` subject to `x ≥ 0`.
pub(crate) fn nnls(a: &Matrix, b: &Vector) -> Vector {
    let n = a.ncols();
    let mut x = Vector::zeros(n);
    if n == 0 {
        return x;
    }
    let tol = 10.0 * f64::EPSILON * a.amax().max(1.0) * a.nrows().max(n) as f64;
    let mut passive = vec![false; n];
    let solve_passive = |passive: &[bool]| -> Vector {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&cols);
        let z = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .unwrap_or_else(|_| Vector::zeros(cols.len()));
        let mut full = Vector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            full[j] = z[k];
        }
        full
    };
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let entering = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = entering else { break };
        passive[j] = true;
        for _ in 0..3 * n + 10 {
            let z = solve_passive(&passive);
            if (0..n).all(|k| !passive[k] || z[k] > tol) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&k| passive[k] && z[k] <= tol)
                .map(|k| x[k] / (x[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    x
}

/// Orthonormal basis of the row space of `rows`, as columns.
fn row_space(rows: &Matrix) -> Matrix {
    let n = rows.ncols();
    if rows.nrows() == 0 {
        return Matrix::zeros(n, 0);
    }
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > RANK_TOL * smax)
        .collect();
    v_t.select_rows(&keep).transpose()
}

/// Least-squares coefficients `c` with `rowsᵀc ≈ target`.
fn free_coefficients(rows: &Matrix, target: &Vector) -> Vector {
    if rows.nrows() == 0 {
        return Vector::zeros(0);
    }
    rows.transpose()
        .svd(true, true)
        .solve(target, 1e-14)
        .unwrap_or_else(|_| Vector::zeros(rows.nrows()))
}

fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in out.row_iter_mut() {
        let s = row.norm();
        if s > 0.0 {
            row /= s;
        }
        norms.push(s);
    }
    (out, norms)
}

/// Positive linear independence of the rows of `ineq` together with linear
/// independence of `free`. On failure returns coefficients `(λ ≥ 0, c)`
/// with `ineqᵀλ + freeᵀc ≈ 0`.
fn positive_independence(ineq: &Matrix, free: &Matrix) -> (bool, Option<(Vector, Vector)>) {
    let (free_n, free_norms) = normalize_rows(free);
    let k = free_n.nrows();
    if k > 0 {
        // pad to a square-or-wide matrix so that a thin SVD exposes the left
        // null space even when there are more rows than columns
        let cols = free_n.ncols().max(k);
        let mut padded = Matrix::zeros(k, cols);
        padded.columns_mut(0, free_n.ncols()).copy_from(&free_n);
        let svd = padded.svd(true, false);
        let s = &svd.singular_values;
        let smax = s.max();
        let (jmin, smin) = s.argmin();
        if smax == 0.0 || smin <= RANK_TOL * smax {
            let u = svd.u.expect("requested");
            let c = Vector::from_iterator(
                k,
                (0..k).map(|i| u[(i, jmin)] / free_norms[i].max(f64::MIN_POSITIVE)),
            );
            return (false, Some((Vector::zeros(ineq.nrows()), c)));
        }
    }
    let a_rows = ineq.nrows();
    if a_rows == 0 {
        return (true, None);
    }
    let (ineq_n, ineq_norms) = normalize_rows(ineq);
    let basis = row_space(&free_n);
    let n = ineq.ncols();
    let projected = {
        let gt = ineq_n.transpose();
        &gt - &basis * (basis.transpose() * &gt)
    };
    let mut system = Matrix::zeros(n + 1, a_rows);
    system.rows_mut(0, n).copy_from(&projected);
    system.row_mut(n).fill(SIMPLEX_WEIGHT);
    let mut rhs = Vector::zeros(n + 1);
    rhs[n] = SIMPLEX_WEIGHT;
    let mut lam = nnls(&system, &rhs);
    let total = lam.sum();
    if total <= 0.0 {
        return (true, None);
    }
    lam /= total;
    if (&projected * &lam).norm() > SLACK_TOL {
        return (true, None);
    }
    let combo = ineq_n.transpose() * &lam;
    let c_n = free_coefficients(&free_n, &(-combo));
    let lam_raw = Vector::from_iterator(
        a_rows,
        (0..a_rows).map(|i| lam[i] / ineq_norms[i].max(f64::MIN_POSITIVE)),
    );
    let c_raw = Vector::from_iterator(
        k,
        (0..k).map(|i| c_n[i] / free_norms[i].max(f64::MIN_POSITIVE)),
    );
    (false, Some((lam_raw, c_raw)))
}

fn unit_rows(idx: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros(idx.len(), n);
    for (r, &i) in idx.iter().enumerate() {
        m[(r, i)] = 1.0;
    }
    m
}

fn stack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

fn check_pair(prog: &dyn SmoothProgram, pair: &IteratePair, tol_act: f64) -> Result<()> {
    if pair.len() != prog.dim() {
        return Err(Error::usage("pair does not match the program dimension"));
    }
    let x = pair.x_vector();
    let feasible = max_violation(prog, &x) <= tol_act
        && pair.y.iter().all(|&v| v >= -tol_act && v <= 1.0 + tol_act)
        && pair.complementarity() <= tol_act;
    if !feasible {
        return Err(Error::usage(
            "stationarity is only defined at feasible pairs",
        ));
    }
    Ok(())
}

/// CC-MFCQ at a feasible pair: positive linear independence of the active
/// inequality gradients, the equality gradients and `e_i` for `i ∈ I₀`.
///
/// At a zero component whose bound `−x_i ≤ 0` is active the pair
/// `−e_i, e_i` is dependent, so the check fails there by construction.
pub fn check_cc_mfcq(
    prog: &dyn SmoothProgram,
    pair: &IteratePair,
    tol_act: f64,
) -> Result<CqCheck> {
    check_pair(prog, pair, tol_act)?;
    let x = pair.x_vector();
    let n = x.len();
    let sets = active_sets(prog, &x, tol_act);
    let (_, jg) = extended_ineq(prog, &x);
    let (_, jh) = prog.eq(&x);
    let ineq = jg.select_rows(&sets.ineq_active);
    let free = stack(&jh, &unit_rows(&sets.zero_set, n));
    let (holds, dep) = positive_independence(&ineq, &free);
    let witness = dep.map(|(lam_a, c)| {
        let mut lambda = vec![0.0; jg.nrows()];
        for (k, &i) in sets.ineq_active.iter().enumerate() {
            lambda[i] = lam_a[k];
        }
        let mut gamma = vec![0.0; n];
        for (k, &i) in sets.zero_set.iter().enumerate() {
            gamma[i] = c[jh.nrows() + k];
        }
        CqWitness {
            lambda,
            mu: c.rows(0, jh.nrows()).iter().copied().collect(),
            gamma,
        }
    });
    Ok(CqCheck { holds, witness })
}

/// Classical MFCQ of a smooth program at `point`: full row rank of the
/// equality Jacobian and a direction strictly decreasing every active
/// inequality (box rows included) in its null space.
pub fn check_mfcq_regularized(prog_t: &dyn SmoothProgram, point: &Vector, tol_act: f64) -> bool {
    if point.len() != prog_t.dim() {
        return false;
    }
    let sets = active_sets(prog_t, point, tol_act);
    let (_, jg) = extended_ineq(prog_t, point);
    let (_, jh) = prog_t.eq(point);
    positive_independence(&jg.select_rows(&sets.ineq_active), &jh).0
}

struct Fit {
    lambda: Vector,
    mu: Vector,
    gamma: Vector,
    residual: f64,
}

/// Least residual of the stationarity system with `λ ≥ 0` on `active` and
/// `γ` free on `gamma_set`.
fn best_fit(grad: &Vector, jg: &Matrix, jh: &Matrix, active: &[usize], gamma_set: &[usize]) -> Fit {
    let n = grad.len();
    let ineq = jg.select_rows(active);
    let free = stack(jh, &unit_rows(gamma_set, n));
    let basis = row_space(&free);
    let project = |v: &Matrix| v - &basis * (basis.transpose() * v);
    let a = project(&ineq.transpose());
    let b = -project(&Matrix::from_column_slice(n, 1, grad.as_slice()));
    let lam_a = nnls(&a, &b.column(0).into_owned());
    let partial = grad + ineq.transpose() * &lam_a;
    let c = free_coefficients(&free, &(-&partial));
    let mut lambda = Vector::zeros(jg.nrows());
    for (k, &i) in active.iter().enumerate() {
        lambda[i] = lam_a[k];
    }
    let mut gamma = Vector::zeros(n);
    for (k, &i) in gamma_set.iter().enumerate() {
        gamma[i] = c[jh.nrows() + k];
    }
    let mu = c.rows(0, jh.nrows()).into_owned();
    let residual = (grad + jg.transpose() * &lambda + jh.transpose() * &mu + &gamma).amax();
    Fit {
        lambda,
        mu,
        gamma,
        residual,
    }
}

/// Strongest of S- and M-stationarity that holds at a feasible pair.
///
/// S allows `γ_i ≠ 0` only where `y_i ≠ 0` (and `x_i = 0`); M allows it on
/// the whole zero set of `x`. The multipliers returned are those of the
/// reported class, or of the M system when neither class is attained.
pub fn classify(
    prog: &dyn SmoothProgram,
    pair: &IteratePair,
    tol_act: f64,
    tol_res: f64,
) -> Result<StationarityCertificate> {
    check_pair(prog, pair, tol_act)?;
    let x = pair.x_vector();
    let (grad, jg, jh) = {
        let (_, grad) = prog.objective(&x);
        let (_, jg) = extended_ineq(prog, &x);
        let (_, jh) = prog.eq(&x);
        (grad, jg, jh)
    };
    let sets = active_sets(prog, &x, tol_act);
    let s_set: Vec<usize> = sets
        .zero_set
        .iter()
        .copied()
        .filter(|&i| pair.y[i].abs() > tol_act)
        .collect();
    let cq_holds = check_cc_mfcq(prog, pair, tol_act)?.holds;

    let s_fit = best_fit(&grad, &jg, &jh, &sets.ineq_active, &s_set);
    let (classification, fit) = if s_fit.residual <= tol_res {
        (Classification::S, s_fit)
    } else {
        let m_fit = best_fit(&grad, &jg, &jh, &sets.ineq_active, &sets.zero_set);
        if m_fit.residual <= tol_res {
            (Classification::M, m_fit)
        } else {
            (Classification::None, m_fit)
        }
    };
    Ok(StationarityCertificate {
        classification,
        gamma: fit.gamma.iter().copied().collect(),
        lambda: fit.lambda.iter().copied().collect(),
        mu: fit.mu.iter().copied().collect(),
        residual: fit.residual,
        cq_holds,
    })
}

/// Recomputes `‖∇f + Σλ∇g + Σμ∇h + γ‖∞` from a certificate.
pub fn certificate_residual(
    prog: &dyn SmoothProgram,
    x: &Vector,
    cert: &StationarityCertificate,
) -> Result<f64> {
    let (_, grad) = prog.objective(x);
    let (_, jg) = extended_ineq(prog, x);
    let (_, jh) = prog.eq(x);
    if cert.lambda.len() != jg.nrows() || cert.mu.len() != jh.nrows() || cert.gamma.len() != x.len()
    {
        return Err(Error::usage("certificate does not match the program"));
    }
    let r = grad
        + jg.transpose() * Vector::from_column_slice(&cert.lambda)
        + jh.transpose() * Vector::from_column_slice(&cert.mu)
        + Vector::from_column_slice(&cert.gamma);
    Ok(r.amax())
}
