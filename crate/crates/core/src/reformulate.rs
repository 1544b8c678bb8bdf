//! Continuous reformulation of the cardinality constraint and its two
//! regularized families.
//!
//! For a base program in `x ∈ ℝⁿ` the generated programs live in the joint
//! variable `z = (x, y) ∈ ℝ²ⁿ`. Their rows are laid out as
//!
//! ```text
//! inequalities: [ base g (m) | coupling upper (n) | coupling lower (n, two-sided only) | n − κ − eᵀy ]
//! equalities:   [ base h (p) | x_i·y_i (n, unregularized only) ]
//! box:          [ base box on x (or unbounded) | 0 ≤ y ≤ 1 ]
//! ```
//!
//! See [`RowLayout`] for the index ranges.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{max_violation, Bounds, Matrix, ProgramRef, SmoothProgram, Vector};

/// A point `(x, y)` of the reformulated program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteratePair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl IteratePair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::usage(format!(
                "x has length {}, y has length {}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn from_joint(z: &Vector) -> Self {
        let n = z.len() / 2;
        Self {
            x: z.rows(0, n).iter().copied().collect(),
            y: z.rows(n, n).iter().copied().collect(),
        }
    }

    pub fn joint(&self) -> Vector {
        Vector::from_iterator(
            2 * self.x.len(),
            self.x.iter().chain(self.y.iter()).copied(),
        )
    }

    pub fn x_vector(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `‖x ∘ y‖∞`.
    pub fn complementarity(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| (a * b).abs())
            .fold(0.0, f64::max)
    }

    /// Feasibility for the continuous reformulation at tolerance `eps`:
    /// `0 ≤ y ≤ e`, `eᵀy ≥ n − κ − ε`, the base constraints to `ε` and
    /// `‖x ∘ y‖∞ ≤ ε`.
    pub fn is_reformulation_feasible(
        &self,
        base: &dyn SmoothProgram,
        kappa: usize,
        eps: f64,
    ) -> bool {
        let n = self.len();
        if base.dim() != n || kappa > n {
            return false;
        }
        let y_ok = self.y.iter().all(|&v| v >= -eps && v <= 1.0 + eps);
        let budget_ok = self.y.iter().sum::<f64>() >= (n - kappa) as f64 - eps;
        y_ok && budget_ok
            && self.complementarity() <= eps
            && max_violation(base, &self.x_vector()) <= eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regularization {
    Scholtes,
    KanzowSchwartz,
}

/// Which regularization to build, and whether `x ≥ 0` is known so the
/// lower coupling rows can be dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegularizationKind {
    pub variant: Regularization,
    pub nonneg_x: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Coupling {
    Equality,
    Scholtes { t: f64, two_sided: bool },
    KanzowSchwartz { t: f64, two_sided: bool },
}

/// Row index ranges of a generated program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowLayout {
    pub base_ineq: Range<usize>,
    pub coupling_upper: Range<usize>,
    pub coupling_lower: Range<usize>,
    pub cardinality: usize,
    pub base_eq: Range<usize>,
    pub coupling_eq: Range<usize>,
}

/// The Kanzow–Schwartz function: `(a−t)(b−t)` if `a + b ≥ 2t`, otherwise
/// `−½[(a−t)² + (b−t)²]`. For `t ≥ 0`, `phi ≤ 0` iff `min{a, b} ≤ t`.
pub fn phi(a: f64, b: f64, t: f64) -> f64 {
    let (da, db) = (a - t, b - t);
    if a + b >= 2.0 * t {
        da * db
    } else {
        -0.5 * (da * da + db * db)
    }
}

/// Partial derivatives `(∂φ/∂a, ∂φ/∂b)`; continuous across `a + b = 2t`.
pub fn phi_grad(a: f64, b: f64, t: f64) -> (f64, f64) {
    let (da, db) = (a - t, b - t);
    if a + b >= 2.0 * t {
        (db, da)
    } else {
        (-da, -db)
    }
}

/// A reformulated or regularized program over `(x, y)`.
#[derive(Clone)]
pub struct ReformulatedProgram {
    base: ProgramRef,
    n: usize,
    kappa: usize,
    coupling: Coupling,
    bounds: Bounds,
}

impl std::fmt::Debug for ReformulatedProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReformulatedProgram")
            .field("n", &self.n)
            .field("kappa", &self.kappa)
            .field("coupling", &self.coupling)
            .finish()
    }
}

impl ReformulatedProgram {
    fn build(base: ProgramRef, kappa: usize, coupling: Coupling) -> Result<Self> {
        let n = base.dim();
        if kappa == 0 || kappa >= n {
            return Err(Error::usage(format!(
                "kappa = {kappa} must satisfy 1 <= kappa < n = {n}"
            )));
        }
        let x_bounds = base
            .bounds()
            .cloned()
            .unwrap_or_else(|| Bounds::unbounded(n));
        let y_bounds = Bounds {
            lower: Vector::zeros(n),
            upper: Vector::from_element(n, 1.0),
        };
        let bounds = x_bounds.stack(&y_bounds);
        Ok(Self {
            base,
            n,
            kappa,
            coupling,
            bounds,
        })
    }

    pub fn base(&self) -> &ProgramRef {
        &self.base
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Regularization parameter (`0` for the unregularized reformulation).
    pub fn t(&self) -> f64 {
        match self.coupling {
            Coupling::Equality => 0.0,
            Coupling::Scholtes { t, .. } | Coupling::KanzowSchwartz { t, .. } => t,
        }
    }

    fn two_sided(&self) -> bool {
        match self.coupling {
            Coupling::Equality => false,
            Coupling::Scholtes { two_sided, .. } | Coupling::KanzowSchwartz { two_sided, .. } => {
                two_sided
            }
        }
    }

    pub fn layout(&self) -> RowLayout {
        let m = self.base.num_ineq();
        let p = self.base.num_eq();
        let n = self.n;
        let (upper, lower) = match self.coupling {
            Coupling::Equality => (m..m, m..m),
            _ if self.two_sided() => (m..m + n, m + n..m + 2 * n),
            _ => (m..m + n, m + n..m + n),
        };
        let cardinality = lower.end;
        let coupling_eq = match self.coupling {
            Coupling::Equality => p..p + n,
            _ => p..p,
        };
        RowLayout {
            base_ineq: 0..m,
            coupling_upper: upper,
            coupling_lower: lower,
            cardinality,
            base_eq: 0..p,
            coupling_eq,
        }
    }

    fn split<'a>(&self, z: &'a Vector) -> (Vector, nalgebra::DVectorView<'a, f64>) {
        (z.rows(0, self.n).into_owned(), z.rows(self.n, self.n))
    }
}

impl SmoothProgram for ReformulatedProgram {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn num_ineq(&self) -> usize {
        self.layout().cardinality + 1
    }

    fn num_eq(&self) -> usize {
        self.layout().coupling_eq.end
    }

    fn objective(&self, z: &Vector) -> (f64, Vector) {
        let (x, _) = self.split(z);
        let (f, gx) = self.base.objective(&x);
        let mut grad = Vector::zeros(2 * self.n);
        grad.rows_mut(0, self.n).copy_from(&gx);
        (f, grad)
    }

    fn objective_value(&self, z: &Vector) -> f64 {
        let (x, _) = self.split(z);
        self.base.objective_value(&x)
    }

    fn ineq(&self, z: &Vector) -> (Vector, Matrix) {
        let n = self.n;
        let layout = self.layout();
        let rows = layout.cardinality + 1;
        let (x, y) = self.split(z);
        let mut g = Vector::zeros(rows);
        let mut jac = Matrix::zeros(rows, 2 * n);

        let (gb, jb) = self.base.ineq(&x);
        let m = gb.len();
        g.rows_mut(0, m).copy_from(&gb);
        jac.view_mut((0, 0), (m, n)).copy_from(&jb);

        match self.coupling {
            Coupling::Equality => {}
            Coupling::Scholtes { t, two_sided } => {
                for i in 0..n {
                    let r = layout.coupling_upper.start + i;
                    g[r] = x[i] * y[i] - t;
                    jac[(r, i)] = y[i];
                    jac[(r, n + i)] = x[i];
                    if two_sided {
                        let r = layout.coupling_lower.start + i;
                        g[r] = -t - x[i] * y[i];
                        jac[(r, i)] = -y[i];
                        jac[(r, n + i)] = -x[i];
                    }
                }
            }
            Coupling::KanzowSchwartz { t, two_sided } => {
                for i in 0..n {
                    let r = layout.coupling_upper.start + i;
                    g[r] = phi(x[i], y[i], t);
                    let (da, db) = phi_grad(x[i], y[i], t);
                    jac[(r, i)] = da;
                    jac[(r, n + i)] = db;
                    if two_sided {
                        let r = layout.coupling_lower.start + i;
                        g[r] = phi(-x[i], y[i], t);
                        let (da, db) = phi_grad(-x[i], y[i], t);
                        jac[(r, i)] = -da;
                        jac[(r, n + i)] = db;
                    }
                }
            }
        }

        let c = layout.cardinality;
        g[c] = (n - self.kappa) as f64 - y.sum();
        for i in 0..n {
            jac[(c, n + i)] = -1.0;
        }
        (g, jac)
    }

    fn eq(&self, z: &Vector) -> (Vector, Matrix) {
        let n = self.n;
        let layout = self.layout();
        let (x, y) = self.split(z);
        let (hb, jb) = self.base.eq(&x);
        let p = hb.len();
        let rows = layout.coupling_eq.end;
        let mut h = Vector::zeros(rows);
        let mut jac = Matrix::zeros(rows, 2 * n);
        h.rows_mut(0, p).copy_from(&hb);
        jac.view_mut((0, 0), (p, n)).copy_from(&jb);
        if self.coupling == Coupling::Equality {
            for i in 0..n {
                let r = p + i;
                h[r] = x[i] * y[i];
                jac[(r, i)] = y[i];
                jac[(r, n + i)] = x[i];
            }
        }
        (h, jac)
    }

    fn bounds(&self) -> Option<&Bounds> {
        Some(&self.bounds)
    }

    fn lagrangian_hessian(&self, z: &Vector, lam: &Vector, mu: &Vector) -> Option<Matrix> {
        let n = self.n;
        let layout = self.layout();
        let (x, y) = self.split(z);
        let base_lam = lam.rows(0, layout.base_ineq.end).into_owned();
        let base_mu = mu.rows(0, layout.base_eq.end).into_owned();
        let hb = self.base.lagrangian_hessian(&x, &base_lam, &base_mu)?;
        let mut h = Matrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&hb);
        // Each coupling row touches only (x_i, y_i): add its 2×2 block.
        let mut add = |i: usize, w: f64, [xx, xy, yy]: [f64; 3]| {
            h[(i, i)] += w * xx;
            h[(i, n + i)] += w * xy;
            h[(n + i, i)] += w * xy;
            h[(n + i, n + i)] += w * yy;
        };
        let ks_block = |a: f64, b: f64, t: f64| {
            if a + b >= 2.0 * t {
                [0.0, 1.0, 0.0]
            } else {
                [-1.0, 0.0, -1.0]
            }
        };
        for i in 0..n {
            match self.coupling {
                Coupling::Equality => add(i, mu[layout.coupling_eq.start + i], [0.0, 1.0, 0.0]),
                Coupling::Scholtes { two_sided, .. } => {
                    add(i, lam[layout.coupling_upper.start + i], [0.0, 1.0, 0.0]);
                    if two_sided {
                        add(i, lam[layout.coupling_lower.start + i], [0.0, -1.0, 0.0]);
                    }
                }
                Coupling::KanzowSchwartz { t, two_sided } => {
                    add(
                        i,
                        lam[layout.coupling_upper.start + i],
                        ks_block(x[i], y[i], t),
                    );
                    if two_sided {
                        let [xx, xy, yy] = ks_block(-x[i], y[i], t);
                        add(i, lam[layout.coupling_lower.start + i], [xx, -xy, yy]);
                    }
                }
            }
        }
        Some(h)
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::usage(format!(
            "regularization parameter t = {t} must be >= 0"
        )));
    }
    Ok(())
}

/// `min f(x) s.t. g ≤ 0, h = 0, 0 ≤ y ≤ e, x ∘ y = 0, eᵀy ≥ n − κ`.
pub fn continuous_reformulation(prog: ProgramRef, kappa: usize) -> Result<ReformulatedProgram> {
    ReformulatedProgram::build(prog, kappa, Coupling::Equality)
}

/// Scholtes regularization: the coupling becomes `−t ≤ x_i·y_i ≤ t` (only the
/// upper half when `nonneg_x`).
pub fn scholtes_program(
    prog: ProgramRef,
    kappa: usize,
    t: f64,
    nonneg_x: bool,
) -> Result<ReformulatedProgram> {
    check_t(t)?;
    ReformulatedProgram::build(
        prog,
        kappa,
        Coupling::Scholtes {
            t,
            two_sided: !nonneg_x,
        },
    )
}

/// Kanzow–Schwartz regularization: `φ(x_i, y_i; t) ≤ 0` and (unless
/// `nonneg_x`) `φ(−x_i, y_i; t) ≤ 0`.
pub fn kanzow_schwartz_program(
    prog: ProgramRef,
    kappa: usize,
    t: f64,
    nonneg_x: bool,
) -> Result<ReformulatedProgram> {
    check_t(t)?;
    ReformulatedProgram::build(
        prog,
        kappa,
        Coupling::KanzowSchwartz {
            t,
            two_sided: !nonneg_x,
        },
    )
}

pub fn regularized_program(
    prog: ProgramRef,
    kappa: usize,
    kind: RegularizationKind,
    t: f64,
) -> Result<ReformulatedProgram> {
    match kind.variant {
        Regularization::Scholtes => scholtes_program(prog, kappa, t, kind.nonneg_x),
        Regularization::KanzowSchwartz => kanzow_schwartz_program(prog, kappa, t, kind.nonneg_x),
    }
}

/// Certificate `y` for a sparse `x`: `y_i = 1` where `|x_i| ≤ tol`, else `0`.
pub fn recover_y(x: &[f64], kappa: usize, tol: f64) -> Result<Vec<f64>> {
    let card = crate::model::cardinality(x, tol);
    if card > kappa {
        return Err(Error::Infeasible(format!(
            "x has {card} nonzero components, budget is {kappa}"
        )));
    }
    Ok(x.iter()
        .map(|v| if v.abs() <= tol { 1.0 } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnProgram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn free_quadratic(n: usize) -> ProgramRef {
        Arc::new(FnProgram::new(n, |x: &Vector| {
            let d = x.map(|v| v - 1.0);
            (d.norm_squared(), 2.0 * d)
        }))
    }

    fn nonneg_quadratic(n: usize) -> ProgramRef {
        Arc::new(
            FnProgram::new(n, |x: &Vector| {
                let d = x.map(|v| v - 1.0);
                (d.norm_squared(), 2.0 * d)
            })
            .with_bounds(Bounds::new(Vector::zeros(n), Vector::from_element(n, 10.0)).unwrap())
            .unwrap(),
        )
    }

    fn feasible(p: &dyn SmoothProgram, z: &Vector, tol: f64) -> bool {
        max_violation(p, z) <= tol
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(2.0, 2.0, 1.0), 1.0);
        assert_eq!(phi(0.0, 0.0, 1.0), -1.0);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(phi(t, t, t), 0.0);
        }
    }

    #[test]
    fn phi_smooth_across_switching_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let t: f64 = rng.random_range(0.0..2.0);
            let a: f64 = rng.random_range(-5.0..5.0);
            let b = 2.0 * t - a;
            let (da, db) = (a - t, b - t);
            let first = da * db;
            let second = -0.5 * (da * da + db * db);
            assert!((first - second).abs() <= 1e-10);
            assert!(((db) - (-da)).abs() <= 1e-10 && ((da) - (-db)).abs() <= 1e-10);
            let (ga, gb) = phi_grad(a, b, t);
            assert!((ga - db).abs() <= 1e-10 && (gb - da).abs() <= 1e-10);
        }
    }

    #[test]
    fn phi_sign_matches_min_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let t: f64 = rng.random_range(0.0..2.0);
            let m = a.min(b);
            if m == t {
                continue;
            }
            assert_eq!(phi(a, b, t) <= 0.0, m <= t, "a={a} b={b} t={t}");
        }
    }

    #[test]
    fn reformulation_structure_and_small_example() {
        let p = continuous_reformulation(free_quadratic(2), 1).unwrap();
        assert_eq!((p.dim(), p.num_ineq(), p.num_eq()), (4, 1, 2));
        let z = IteratePair::new(vec![1.0, 0.0], vec![0.0, 1.0])
            .unwrap()
            .joint();
        assert!(feasible(&p, &z, 0.0));
    }

    #[test]
    fn kappa_out_of_range() {
        assert!(matches!(
            continuous_reformulation(free_quadratic(3), 0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            continuous_reformulation(free_quadratic(3), 3),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            scholtes_program(free_quadratic(3), 1, -0.1, true),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            kanzow_schwartz_program(free_quadratic(3), 1, f64::NAN, true),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn dense_x_has_no_certificate() {
        assert!(matches!(
            recover_y(&[0.5, 0.5], 1, 1e-6),
            Err(Error::Infeasible(_))
        ));
        let p = continuous_reformulation(free_quadratic(2), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let z = IteratePair::new(vec![0.5, 0.5], y).unwrap().joint();
            assert!(!feasible(&p, &z, 1e-9));
        }
    }

    #[test]
    fn recover_y_examples() {
        assert_eq!(
            recover_y(&[1.0, 0.0, 0.0], 1, 1e-6).unwrap(),
            vec![0.0, 1.0, 1.0]
        );
        assert_eq!(recover_y(&[0.0; 3], 1, 1e-6).unwrap(), vec![1.0; 3]);
        assert!(recover_y(&[0.5, 0.5, 0.0], 1, 1e-6).is_err());
        let base = nonneg_quadratic(3);
        let x = vec![2.0, 0.0, 0.0];
        let y = recover_y(&x, 1, 1e-6).unwrap();
        let pair = IteratePair::new(x, y).unwrap();
        assert!(pair.is_reformulation_feasible(base.as_ref(), 1, 1e-6));
    }

    #[test]
    fn scholtes_examples() {
        let base = nonneg_quadratic(2);
        let z = IteratePair::new(vec![2.0, 0.0], vec![0.4, 1.0])
            .unwrap()
            .joint();
        let p1 = scholtes_program(base.clone(), 1, 1.0, true).unwrap();
        assert!(feasible(&p1, &z, 0.0));
        let p05 = scholtes_program(base.clone(), 1, 0.5, true).unwrap();
        assert!(!feasible(&p05, &z, 0.0));
        // boundary: x_1 y_1 = t
        let p08 = scholtes_program(base, 1, 0.8, true).unwrap();
        let (g, _) = p08.ineq(&z);
        assert!(g[p08.layout().coupling_upper.start].abs() < 1e-15);
    }

    #[test]
    fn kanzow_schwartz_example() {
        let base = nonneg_quadratic(2);
        let p = kanzow_schwartz_program(base, 1, 1.0, true).unwrap();
        let z = IteratePair::new(vec![2.0, 0.0], vec![0.4, 1.0])
            .unwrap()
            .joint();
        let (g, _) = p.ineq(&z);
        let up = p.layout().coupling_upper;
        assert!((g[up.start] + 0.6).abs() < 1e-15);
        assert!((g[up.start + 1] + 0.5).abs() < 1e-15);
        assert!(feasible(&p, &z, 0.0));
    }

    #[test]
    fn row_layouts() {
        let base = free_quadratic(3);
        let s2 = scholtes_program(base.clone(), 1, 0.1, false).unwrap();
        assert_eq!(s2.num_ineq(), 7);
        assert_eq!(s2.layout().coupling_lower, 3..6);
        let s1 = scholtes_program(base.clone(), 1, 0.1, true).unwrap();
        assert_eq!(s1.num_ineq(), 4);
        assert_eq!(s1.layout().cardinality, 3);
        let c = continuous_reformulation(base, 2).unwrap();
        assert_eq!(c.num_eq(), 3);
        assert_eq!(c.layout().cardinality, 0);
    }

    /// Random points on a coarse lattice so that products are exactly zero
    /// or clearly nonzero.
    fn lattice_point(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        let xs = [0.0, 0.0, 0.5, 1.0, 2.0];
        let ys = [0.0, 0.0, 1.0, 1.0, 0.5];
        Vector::from_fn(2 * n, |i, _| {
            if i < n {
                xs[rng.random_range(0..xs.len())]
            } else {
                ys[rng.random_range(0..ys.len())]
            }
        })
    }

    #[test]
    fn zero_parameter_feasible_sets_agree() {
        let base = nonneg_quadratic(4);
        let c = continuous_reformulation(base.clone(), 2).unwrap();
        let s = scholtes_program(base.clone(), 2, 0.0, true).unwrap();
        let s2 = scholtes_program(base.clone(), 2, 0.0, false).unwrap();
        let k = kanzow_schwartz_program(base, 2, 0.0, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..1000 {
            let z = lattice_point(&mut rng, 4);
            let fc = feasible(&c, &z, 0.0);
            assert_eq!(fc, feasible(&s, &z, 0.0));
            assert_eq!(fc, feasible(&s2, &z, 0.0));
            assert_eq!(fc, feasible(&k, &z, 0.0));
            hits += fc as usize;
        }
        assert!(hits > 20, "too few feasible samples: {hits}");
    }

    #[test]
    fn scholtes_feasible_sets_grow_with_t() {
        let base = free_quadratic(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..2000 {
            let t1: f64 = rng.random_range(0.0..1.0);
            let t2 = t1 + rng.random_range(0.0..1.0);
            let z = Vector::from_fn(6, |i, _| {
                if i < 3 {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(0.0..1.0)
                }
            });
            let p1 = scholtes_program(base.clone(), 1, t1, false).unwrap();
            let p2 = scholtes_program(base.clone(), 1, t2, false).unwrap();
            if feasible(&p1, &z, 0.0) {
                assert!(feasible(&p2, &z, 0.0));
            }
        }
    }

    fn check_jacobians(p: &dyn SmoothProgram, z: &Vector) {
        let h = 1e-6;
        let (g0, jg) = p.ineq(z);
        let (h0, jh) = p.eq(z);
        let (_, gf) = p.objective(z);
        for j in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let dg = (p.ineq(&zp).0 - p.ineq(&zm).0) / (2.0 * h);
            let dh = (p.eq(&zp).0 - p.eq(&zm).0) / (2.0 * h);
            let df = (p.objective_value(&zp) - p.objective_value(&zm)) / (2.0 * h);
            for r in 0..g0.len() {
                let a = jg[(r, j)];
                assert!(
                    (dg[r] - a).abs() <= 1e-5 * a.abs().max(1.0),
                    "g[{r}] d{j}: {} vs {a}",
                    dg[r]
                );
            }
            for r in 0..h0.len() {
                let a = jh[(r, j)];
                assert!((dh[r] - a).abs() <= 1e-5 * a.abs().max(1.0));
            }
            assert!((df - gf[j]).abs() <= 1e-5 * gf[j].abs().max(1.0));
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let base = free_quadratic(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let progs = [
            continuous_reformulation(base.clone(), 1).unwrap(),
            scholtes_program(base.clone(), 1, 0.3, false).unwrap(),
            kanzow_schwartz_program(base.clone(), 1, 0.3, false).unwrap(),
        ];
        for _ in 0..100 {
            let z = Vector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            for p in &progs {
                check_jacobians(p, &z);
            }
        }
    }

    fn lagrangian_gradient(p: &dyn SmoothProgram, z: &Vector, lam: &Vector, mu: &Vector) -> Vector {
        let (_, gf) = p.objective(z);
        gf + p.ineq(z).1.tr_mul(lam) + p.eq(z).1.tr_mul(mu)
    }

    #[test]
    fn lagrangian_hessians_match_finite_differences() {
        use crate::bench::{generate_instance, GeneratorParams};
        use crate::model::{portfolio_program, RiskKind, RiskSpec};
        let inst = generate_instance(&GeneratorParams::new(4, 2, 3)).unwrap();
        let spec = RiskSpec::new(RiskKind::Cvar, 0.95).unwrap();
        let base: ProgramRef = Arc::new(portfolio_program(&inst, spec));
        let t = 0.3;
        let progs = [
            continuous_reformulation(base.clone(), 2).unwrap(),
            scholtes_program(base.clone(), 2, t, false).unwrap(),
            scholtes_program(base.clone(), 2, t, true).unwrap(),
            kanzow_schwartz_program(base.clone(), 2, t, false).unwrap(),
            kanzow_schwartz_program(base.clone(), 2, t, true).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let step = 1e-6;
        for _ in 0..50 {
            let z = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            // finite differences are only valid away from the KS switching lines
            let near_kink = (0..4).any(|i| {
                (z[i] + z[4 + i] - 2.0 * t).abs() < 1e-3
                    || (-z[i] + z[4 + i] - 2.0 * t).abs() < 1e-3
            });
            if near_kink {
                continue;
            }
            for p in &progs {
                let lam = Vector::from_fn(p.num_ineq(), |_, _| rng.random_range(0.0..2.0));
                let mu = Vector::from_fn(p.num_eq(), |_, _| rng.random_range(-2.0..2.0));
                let hess = p.lagrangian_hessian(&z, &lam, &mu).unwrap();
                for j in 0..8 {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[j] += step;
                    zm[j] -= step;
                    let col = (lagrangian_gradient(p, &zp, &lam, &mu)
                        - lagrangian_gradient(p, &zm, &lam, &mu))
                        / (2.0 * step);
                    for r in 0..8 {
                        let a = hess[(r, j)];
                        assert!(
                            (col[r] - a).abs() <= 1e-5 * a.abs().max(1.0),
                            "H[{r},{j}]: {} vs {a}",
                            col[r]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_needs_base_hessian() {
        let p = scholtes_program(free_quadratic(3), 1, 0.1, true).unwrap();
        let z = Vector::zeros(6);
        assert!(p
            .lagrangian_hessian(&z, &Vector::zeros(p.num_ineq()), &Vector::zeros(0))
            .is_none());
    }
}
