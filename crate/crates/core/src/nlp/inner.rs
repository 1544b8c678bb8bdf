// Bound-constrained minimization for the augmented-Lagrangian subproblems.
//
// Each iteration builds the model Hessian `B + P(x)`, where `P` is the exactly
// known penalty curvature `ρ Jᵀ J` supplied by the subproblem and `B` is a
// damped BFGS approximation of the remainder. Subproblems that know their
// whole Hessian supply it instead and `B` is dropped. As in L-BFGS-B, the generalized
// Cauchy point of the model fixes the active face, the model is minimized over
// the remaining free variables, and an Armijo search runs along the resulting
// feasible segment. When that fails the iteration falls back to a spectral
// projected gradient step with a nonmonotone Armijo search.

use nalgebra::Cholesky;

use crate::model::{Bounds, Matrix, Vector};

const NONMONOTONE_MEMORY: usize = 10;
const SUFFICIENT_DECREASE: f64 = 1e-4;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;
const MAX_BACKTRACKS: usize = 60;
const NEWTON_BACKTRACKS: usize = 20;
const DAMPING: f64 = 0.2;

/// Part of the Hessian a subproblem can evaluate. `exact` marks the whole
/// Hessian, which may be indefinite; otherwise the matrix is a positive
/// semidefinite part and the rest is learned by BFGS.
#[derive(Clone, Debug)]
pub(crate) struct Curvature {
    pub matrix: Matrix,
    pub exact: bool,
}

/// Smooth function over a box together with optional curvature.
pub(crate) trait Subproblem {
    fn eval(&mut self, x: &Vector) -> (f64, Vector);

    fn known_curvature(&mut self, _x: &Vector) -> Option<Curvature> {
        None
    }

    /// Secant `y` for the part of the Hessian not covered by
    /// `known_curvature`; the plain gradient difference by default.
    fn remainder_secant(&mut self, _x: &Vector, _x_new: &Vector, grad_diff: Vector) -> Vector {
        grad_diff
    }
}

impl<F: FnMut(&Vector) -> (f64, Vector)> Subproblem for F {
    fn eval(&mut self, x: &Vector) -> (f64, Vector) {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum InnerStop {
    Stationary,
    IterationLimit,
    LineSearchFailure,
    NonFinite,
}

#[derive(Clone, Debug)]
pub(crate) struct InnerOutcome {
    pub stop: InnerStop,
    pub iterations: usize,
    pub gradient: Vector,
}

/// Quasi-Newton matrix kept between calls so that successive subproblems of
/// one outer loop share curvature information.
#[derive(Clone, Debug, Default)]
pub(crate) struct QuasiNewton {
    b: Option<Matrix>,
}

impl QuasiNewton {
    fn update(&mut self, s: &Vector, y: &Vector) {
        let sy = s.dot(y);
        let ss = s.norm_squared();
        if !(ss > 0.0) || !sy.is_finite() {
            return;
        }
        let b = self.b.get_or_insert_with(|| {
            let scale = if sy > 0.0 {
                (y.norm_squared() / sy).clamp(1e-8, 1e8)
            } else {
                1.0
            };
            Matrix::identity(s.len(), s.len()) * scale
        });
        let bs = &*b * s;
        let sbs = s.dot(&bs);
        if !(sbs > 0.0) {
            return;
        }
        let theta = if sy >= DAMPING * sbs {
            1.0
        } else {
            (1.0 - DAMPING) * sbs / (sbs - sy)
        };
        let r = y * theta + &bs * (1.0 - theta);
        let sr = s.dot(&r);
        if !(sr > 0.0) {
            return;
        }
        b.ger(-1.0 / sbs, &bs, &bs, 1.0);
        b.ger(1.0 / sr, &r, &r, 1.0);
    }
}

/// `‖P(x − g) − x‖∞`.
pub(crate) fn projected_gradient_norm(bounds: &Bounds, x: &Vector, g: &Vector) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn minimize<S: Subproblem>(
    sub: &mut S,
    bounds: &Bounds,
    x: &mut Vector,
    tol: f64,
    max_iter: usize,
    qn: &mut QuasiNewton,
) -> InnerOutcome {
    bounds.project(x);
    let (mut f, mut g) = sub.eval(x);
    if !f.is_finite() || !finite(&g) {
        return InnerOutcome {
            stop: InnerStop::NonFinite,
            iterations: 0,
            gradient: g,
        };
    }
    let mut pg = projected_gradient_norm(bounds, x, &g);
    let mut step = (1.0 / pg.max(f64::MIN_POSITIVE)).clamp(STEP_MIN, STEP_MAX);
    let mut history = [f64::NEG_INFINITY; NONMONOTONE_MEMORY];
    history[0] = f;
    let mut known = sub.known_curvature(x);

    for k in 0..max_iter {
        if pg <= tol {
            return InnerOutcome {
                stop: InnerStop::Stationary,
                iterations: k,
                gradient: g,
            };
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let nt = newton_step(sub, bounds, x, f, &g, qn, known.as_ref());
        let accepted = nt.or_else(|| spectral_step(sub, bounds, x, f, &g, step, reference));
        let Some((xn, fn_, gn)) = accepted else {
            return InnerOutcome {
                stop: InnerStop::LineSearchFailure,
                iterations: k,
                gradient: g,
            };
        };

        let s = &xn - &*x;
        let yv = &gn - &g;
        let sts = s.norm_squared();
        let sty = s.dot(&yv);
        step = if sty <= 0.0 {
            STEP_MAX
        } else {
            (sts / sty).clamp(STEP_MIN, STEP_MAX)
        };
        known = sub.known_curvature(&xn);
        if !known.as_ref().is_some_and(|c| c.exact) {
            let y_rest = sub.remainder_secant(x, &xn, yv);
            qn.update(&s, &y_rest);
        }

        *x = xn;
        f = fn_;
        g = gn;
        history[(k + 1) % NONMONOTONE_MEMORY] = f;
        pg = projected_gradient_norm(bounds, x, &g);
    }
    let stop = if pg <= tol {
        InnerStop::Stationary
    } else {
        InnerStop::IterationLimit
    };
    InnerOutcome {
        stop,
        iterations: max_iter,
        gradient: g,
    }
}

type Trial = (Vector, f64, Vector);

/// Dense model Hessian `B + P`, with `B = I` before the first update, or
/// the exact Hessian when it is known.
fn model_hessian(qn: &QuasiNewton, known: Option<&Curvature>, n: usize) -> Matrix {
    match known {
        Some(c) if c.exact => c.matrix.clone(),
        _ => {
            let mut h = qn.b.clone().unwrap_or_else(|| Matrix::identity(n, n));
            if let Some(c) = known {
                h += &c.matrix;
            }
            h
        }
    }
}

/// Generalized Cauchy point: first local minimizer of the quadratic model
/// `gᵀs + ½ sᵀHs` along the projected path `P(x − τg) − x`. Returns the step
/// and the mask of coordinates that reached a bound.
fn cauchy_point(bounds: &Bounds, x: &Vector, g: &Vector, h: &Matrix) -> (Vector, Vec<bool>) {
    let n = x.len();
    let mut breaks: Vec<(f64, usize)> = (0..n)
        .filter_map(|i| {
            let t = if g[i] > 0.0 {
                (x[i] - bounds.lower[i]) / g[i]
            } else if g[i] < 0.0 {
                (x[i] - bounds.upper[i]) / g[i]
            } else {
                f64::INFINITY
            };
            t.is_finite().then_some((t.max(0.0), i))
        })
        .collect();
    breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut fixed = vec![false; n];
    let mut p = -g;
    let mut z = Vector::zeros(n);
    let mut hp = h * &p;
    let mut hz = Vector::zeros(n);
    let mut t_prev = 0.0;
    let mut next = 0;
    loop {
        // coordinates whose breakpoint has been reached leave the path
        while next < breaks.len() && breaks[next].0 <= t_prev {
            let i = breaks[next].1;
            if !fixed[i] {
                fixed[i] = true;
                hp.axpy(-p[i], &h.column(i), 1.0);
                p[i] = 0.0;
            }
            next += 1;
        }
        let t_end = breaks.get(next).map_or(f64::INFINITY, |b| b.0);
        let slope = g.dot(&p) + p.dot(&hz);
        if slope >= 0.0 {
            break;
        }
        let curvature = p.dot(&hp);
        let dt = if curvature > 0.0 {
            -slope / curvature
        } else {
            f64::INFINITY
        };
        let span = t_end - t_prev;
        if dt < span {
            z.axpy(dt, &p, 1.0);
            break;
        }
        if !span.is_finite() {
            // unbounded descent along the path; the line search caps it
            z.axpy(1.0, &p, 1.0);
            break;
        }
        z.axpy(span, &p, 1.0);
        hz.axpy(span, &hp, 1.0);
        t_prev = t_end;
    }
    // snap coordinates that passed their breakpoint exactly onto the bound
    for i in 0..n {
        if fixed[i] {
            z[i] = if g[i] > 0.0 {
                bounds.lower[i] - x[i]
            } else {
                bounds.upper[i] - x[i]
            };
        }
    }
    (z, fixed)
}

/// Minimizes the model over the face left free at the Cauchy point and
/// returns a feasible trial point whose step is a descent direction.
fn subspace_point(bounds: &Bounds, x: &Vector, g: &Vector, h: &Matrix) -> Option<Vector> {
    let n = x.len();
    let (z, fixed) = cauchy_point(bounds, x, g, h);
    let xc = x + &z;
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    if free.is_empty() {
        return Some(xc);
    }
    let reduced = (g + h * &z).select_rows(free.iter());
    let mut hf = h.select_rows(free.iter()).select_columns(free.iter());
    // the largest absolute row sum bounds every eigenvalue, so the shift
    // ladder ends at a positive definite matrix
    let scale = hf
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut shift: f64 = 0.0;
    let mut d = None;
    for _ in 0..13 {
        if let Some(chol) = Cholesky::new(hf.clone()) {
            d = Some(-chol.solve(&reduced));
            break;
        }
        let next = if shift == 0.0 {
            1e-10 * scale
        } else {
            (shift * 10.0).min(2.0 * scale)
        };
        for i in 0..free.len() {
            hf[(i, i)] += next - shift;
        }
        shift = next;
    }
    let d = d.filter(finite)?;

    let mut projected = xc.clone();
    for (k, &i) in free.iter().enumerate() {
        projected[i] = (xc[i] + d[k]).clamp(bounds.lower[i], bounds.upper[i]);
    }
    if g.dot(&(&projected - x)) < 0.0 {
        return Some(projected);
    }
    // truncate to the box instead; the model decreases along d from xc
    let mut beta: f64 = 1.0;
    for (k, &i) in free.iter().enumerate() {
        if d[k] > 0.0 {
            beta = beta.min((bounds.upper[i] - xc[i]) / d[k]);
        } else if d[k] < 0.0 {
            beta = beta.min((bounds.lower[i] - xc[i]) / d[k]);
        }
    }
    let mut truncated = xc;
    for (k, &i) in free.iter().enumerate() {
        truncated[i] += beta.max(0.0) * d[k];
    }
    bounds.project(&mut truncated);
    Some(truncated)
}

fn newton_step<S: Subproblem>(
    sub: &mut S,
    bounds: &Bounds,
    x: &Vector,
    f: f64,
    g: &Vector,
    qn: &QuasiNewton,
    known: Option<&Curvature>,
) -> Option<Trial> {
    let h = model_hessian(qn, known, x.len());
    let target = subspace_point(bounds, x, g, &h)?;
    let d = &target - x;
    let slope = g.dot(&d);
    if !(slope < 0.0) {
        return None;
    }
    let mut alpha = 1.0;
    for _ in 0..NEWTON_BACKTRACKS {
        let mut trial = x + &d * alpha;
        bounds.project(&mut trial);
        let (ft, gt) = sub.eval(&trial);
        if ft.is_finite() && ft <= f + SUFFICIENT_DECREASE * alpha * slope {
            return finite(&gt).then_some((trial, ft, gt));
        }
        let denom = ft - f - alpha * slope;
        let interp = if ft.is_finite() && denom > 0.0 {
            -0.5 * alpha * alpha * slope / denom
        } else {
            f64::NAN
        };
        alpha = if interp >= 0.1 * alpha && interp <= 0.5 * alpha {
            interp
        } else {
            0.5 * alpha
        };
    }
    None
}

fn spectral_step<S: Subproblem>(
    sub: &mut S,
    bounds: &Bounds,
    x: &Vector,
    f: f64,
    g: &Vector,
    step: f64,
    reference: f64,
) -> Option<Trial> {
    let d = Vector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| (x[i] - step * g[i]).clamp(bounds.lower[i], bounds.upper[i]) - x[i]),
    );
    let slope = g.dot(&d);
    let mut lambda = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let mut trial = x.clone();
        trial.axpy(lambda, &d, 1.0);
        // keep iterates exactly inside the box despite rounding
        bounds.project(&mut trial);
        let (ft, gt) = sub.eval(&trial);
        if ft.is_finite() && ft <= reference + SUFFICIENT_DECREASE * lambda * slope {
            return finite(&gt).then_some((trial, ft, gt));
        }
        let denom = ft - f - lambda * slope;
        let interp = if ft.is_finite() && denom > 0.0 {
            -0.5 * lambda * lambda * slope / denom
        } else {
            f64::NAN
        };
        lambda = if interp >= 0.1 * lambda && interp <= 0.9 * lambda {
            interp
        } else {
            0.5 * lambda
        };
    }
    None
}
