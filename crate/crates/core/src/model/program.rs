//! The smooth program abstraction shared by every solver in the crate.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Per-variable box `lower ≤ x ≤ upper`; infinite entries mean "unbounded".
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vector,
    pub upper: Vector,
}

impl Bounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::usage(format!(
                "bound lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::usage(format!(
                "empty box at index {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: Vector::from_element(n, f64::NEG_INFINITY),
            upper: Vector::from_element(n, f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut Vector) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn violation(&self, x: &Vector) -> f64 {
        (0..x.len())
            .map(|i| (self.lower[i] - x[i]).max(x[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Concatenates two boxes (used for joint `(x, y)` variables).
    pub fn stack(&self, other: &Bounds) -> Bounds {
        let lower = Vector::from_iterator(
            self.len() + other.len(),
            self.lower.iter().chain(other.lower.iter()).copied(),
        );
        let upper = Vector::from_iterator(
            self.len() + other.len(),
            self.upper.iter().chain(other.upper.iter()).copied(),
        );
        Bounds { lower, upper }
    }
}

/// A program `min f(x) s.t. g(x) ≤ 0, h(x) = 0, l ≤ x ≤ u` with first
/// derivatives.
///
/// Jacobians are dense with one row per constraint and `dim()` columns.
/// Evaluators must be deterministic and defined on the whole box.
pub trait SmoothProgram: Send + Sync {
    fn dim(&self) -> usize;

    fn num_ineq(&self) -> usize {
        0
    }

    fn num_eq(&self) -> usize {
        0
    }

    fn objective(&self, x: &Vector) -> (f64, Vector);

    fn objective_value(&self, x: &Vector) -> f64 {
        self.objective(x).0
    }

    fn ineq(&self, _x: &Vector) -> (Vector, Matrix) {
        (Vector::zeros(0), Matrix::zeros(0, self.dim()))
    }

    fn eq(&self, _x: &Vector) -> (Vector, Matrix) {
        (Vector::zeros(0), Matrix::zeros(0, self.dim()))
    }

    fn bounds(&self) -> Option<&Bounds> {
        None
    }

    /// Hessian of `f + λᵀg + μᵀh` at `x`, for programs that can supply it.
    fn lagrangian_hessian(&self, _x: &Vector, _lam: &Vector, _mu: &Vector) -> Option<Matrix> {
        None
    }
}

pub type ProgramRef = Arc<dyn SmoothProgram>;

/// Largest violation of `g ≤ 0`, `h = 0` and the box at `x`.
pub fn max_violation(prog: &dyn SmoothProgram, x: &Vector) -> f64 {
    let (g, _) = prog.ineq(x);
    let (h, _) = prog.eq(x);
    let gv = g.iter().fold(0.0f64, |a, &v| a.max(v));
    let hv = h.amax();
    let bv = prog.bounds().map_or(0.0, |b| b.violation(x));
    gv.max(hv).max(bv)
}

type ObjectiveFn = Arc<dyn Fn(&Vector) -> (f64, Vector) + Send + Sync>;
type ConstraintFn = Arc<dyn Fn(&Vector) -> (Vector, Matrix) + Send + Sync>;

/// A program assembled from closures.
#[derive(Clone)]
pub struct FnProgram {
    dim: usize,
    objective: ObjectiveFn,
    ineq: Option<(usize, ConstraintFn)>,
    eq: Option<(usize, ConstraintFn)>,
    bounds: Option<Bounds>,
}

impl fmt::Debug for FnProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProgram")
            .field("dim", &self.dim)
            .field("m", &self.num_ineq())
            .field("p", &self.num_eq())
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl FnProgram {
    pub fn new<F>(dim: usize, objective: F) -> Self
    where
        F: Fn(&Vector) -> (f64, Vector) + Send + Sync + 'static,
    {
        Self {
            dim,
            objective: Arc::new(objective),
            ineq: None,
            eq: None,
            bounds: None,
        }
    }

    pub fn with_ineq<F>(mut self, rows: usize, g: F) -> Self
    where
        F: Fn(&Vector) -> (Vector, Matrix) + Send + Sync + 'static,
    {
        self.ineq = Some((rows, Arc::new(g)));
        self
    }

    pub fn with_eq<F>(mut self, rows: usize, h: F) -> Self
    where
        F: Fn(&Vector) -> (Vector, Matrix) + Send + Sync + 'static,
    {
        self.eq = Some((rows, Arc::new(h)));
        self
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self> {
        if bounds.len() != self.dim {
            return Err(Error::usage(format!(
                "bounds have length {}, program dimension is {}",
                bounds.len(),
                self.dim
            )));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }
}

fn checked(rows: usize, dim: usize, (v, j): (Vector, Matrix)) -> (Vector, Matrix) {
    debug_assert_eq!(v.len(), rows);
    debug_assert_eq!(j.shape(), (rows, dim));
    (v, j)
}

impl SmoothProgram for FnProgram {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |(m, _)| *m)
    }

    fn num_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |(p, _)| *p)
    }

    fn objective(&self, x: &Vector) -> (f64, Vector) {
        (self.objective)(x)
    }

    fn ineq(&self, x: &Vector) -> (Vector, Matrix) {
        match &self.ineq {
            Some((m, g)) => checked(*m, self.dim, g(x)),
            None => (Vector::zeros(0), Matrix::zeros(0, self.dim)),
        }
    }

    fn eq(&self, x: &Vector) -> (Vector, Matrix) {
        match &self.eq {
            Some((p, h)) => checked(*p, self.dim, h(x)),
            None => (Vector::zeros(0), Matrix::zeros(0, self.dim)),
        }
    }

    fn bounds(&self) -> Option<&Bounds> {
        self.bounds.as_ref()
    }
}

/// The same program with its box replaced.
pub struct Rebounded {
    base: ProgramRef,
    bounds: Bounds,
}

impl Rebounded {
    pub fn new(base: ProgramRef, bounds: Bounds) -> Result<Self> {
        if bounds.len() != base.dim() {
            return Err(Error::usage("replacement bounds have the wrong length"));
        }
        Ok(Self { base, bounds })
    }

    /// Pins every variable outside `support` to zero. Zero must lie inside
    /// the original box for the pinned coordinates.
    pub fn restrict_to_support(base: ProgramRef, support: &[usize]) -> Result<Self> {
        let n = base.dim();
        let mut bounds = base
            .bounds()
            .cloned()
            .unwrap_or_else(|| Bounds::unbounded(n));
        let mut keep = vec![false; n];
        for &i in support {
            if i >= n {
                return Err(Error::usage(format!("support index {i} out of range")));
            }
            keep[i] = true;
        }
        for i in (0..n).filter(|&i| !keep[i]) {
            if bounds.lower[i] > 0.0 || bounds.upper[i] < 0.0 {
                return Err(Error::Infeasible(format!(
                    "variable {i} cannot be zero within its bounds"
                )));
            }
            bounds.lower[i] = 0.0;
            bounds.upper[i] = 0.0;
        }
        Self::new(base, bounds)
    }
}

impl SmoothProgram for Rebounded {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn num_ineq(&self) -> usize {
        self.base.num_ineq()
    }
    fn num_eq(&self) -> usize {
        self.base.num_eq()
    }
    fn objective(&self, x: &Vector) -> (f64, Vector) {
        self.base.objective(x)
    }
    fn objective_value(&self, x: &Vector) -> f64 {
        self.base.objective_value(x)
    }
    fn ineq(&self, x: &Vector) -> (Vector, Matrix) {
        self.base.ineq(x)
    }
    fn eq(&self, x: &Vector) -> (Vector, Matrix) {
        self.base.eq(x)
    }
    fn bounds(&self) -> Option<&Bounds> {
        Some(&self.bounds)
    }
    fn lagrangian_hessian(&self, x: &Vector, lam: &Vector, mu: &Vector) -> Option<Matrix> {
        self.base.lagrangian_hessian(x, lam, mu)
    }
}
