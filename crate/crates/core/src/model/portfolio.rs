//! Long-only portfolio selection under closed-form normal and
//! distribution-free risk measures.
//!
//! Every measure has the form `r(x) = c_β·√(xᵀQx) − μᵀx`; only the
//! coefficient `c_β` differs between them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::normal;
use super::program::{Bounds, Matrix, SmoothProgram, Vector};
use crate::error::{Error, Result};

/// Floor applied to `√(xᵀQx)` in the gradient only.
pub const GRADIENT_NORM_FLOOR: f64 = 1e-10;

const ASYMMETRY_REJECT: f64 = 1e-8;
const PSD_TOLERANCE: f64 = 1e-10;

/// Market data for one problem: expected returns, covariance, per-asset caps
/// and the cardinality budget.
#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioInstance {
    mean: Vector,
    cov: Matrix,
    ubound: Vector,
    kappa: usize,
}

impl PortfolioInstance {
    /// Validates and stores an instance. The covariance is symmetrized as
    /// `(Q + Qᵀ)/2`; gross asymmetry and indefiniteness are rejected.
    pub fn new(mean: Vector, cov: Matrix, ubound: Vector, kappa: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidInstance("empty instance".into()));
        }
        if cov.shape() != (n, n) {
            return Err(Error::InvalidInstance(format!(
                "covariance is {}x{}, expected {n}x{n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if ubound.len() != n {
            return Err(Error::InvalidInstance(format!(
                "upper bounds have length {}, expected {n}",
                ubound.len()
            )));
        }
        if kappa == 0 || kappa >= n {
            return Err(Error::InvalidInstance(format!(
                "kappa = {kappa} must satisfy 1 <= kappa < n = {n}"
            )));
        }
        if mean
            .iter()
            .chain(cov.iter())
            .chain(ubound.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInstance("non-finite entry".into()));
        }
        if let Some(u) = ubound.iter().find(|&&u| !(u > 0.0 && u <= 1.0)) {
            return Err(Error::InvalidInstance(format!(
                "upper bound {u} outside (0, 1]"
            )));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&cov - cov.transpose()).amax();
        if asym > ASYMMETRY_REJECT * scale {
            return Err(Error::InvalidInstance(format!(
                "covariance asymmetry {asym:e} exceeds tolerance"
            )));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if lo < -PSD_TOLERANCE * hi.max(0.0) {
            return Err(Error::InvalidInstance(format!(
                "covariance is not positive semidefinite (smallest eigenvalue {lo:e}, largest {hi:e})"
            )));
        }
        Ok(Self {
            mean,
            cov,
            ubound,
            kappa,
        })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn ubound(&self) -> &Vector {
        &self.ubound
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Same market data with another cardinality budget.
    pub fn with_kappa(&self, kappa: usize) -> Result<Self> {
        Self::new(
            self.mean.clone(),
            self.cov.clone(),
            self.ubound.clone(),
            kappa,
        )
    }

    fn check_len(&self, x: &Vector) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::usage(format!(
                "portfolio has length {}, instance has {} assets",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskKind {
    #[serde(rename = "VaR")]
    Var,
    #[serde(rename = "CVaR")]
    Cvar,
    #[serde(rename = "RVaR")]
    Rvar,
    #[serde(rename = "RCVaR")]
    Rcvar,
}

impl RiskKind {
    pub const ALL: [RiskKind; 4] = [
        RiskKind::Var,
        RiskKind::Cvar,
        RiskKind::Rvar,
        RiskKind::Rcvar,
    ];
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskKind::Var => "VaR",
            RiskKind::Cvar => "CVaR",
            RiskKind::Rvar => "RVaR",
            RiskKind::Rcvar => "RCVaR",
        })
    }
}

impl FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "var" => Ok(RiskKind::Var),
            "cvar" => Ok(RiskKind::Cvar),
            "rvar" => Ok(RiskKind::Rvar),
            "rcvar" => Ok(RiskKind::Rcvar),
            _ => Err(Error::Parse(format!("unknown risk measure '{s}'"))),
        }
    }
}

/// Coefficient `c_β` multiplying the portfolio standard deviation.
///
/// * VaR: `ζ_β = −Φ⁻¹(1−β)`
/// * CVaR: `η_β = ϕ(Φ⁻¹(1−β))/(1−β)`
/// * robust VaR: `(2β−1)/(2√(β(1−β)))`
/// * robust CVaR: `√(β/(1−β))`
pub fn risk_coefficient(kind: RiskKind, beta: f64) -> Result<f64> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level {beta} outside (0.5, 1)"
        )));
    }
    let tail = 1.0 - beta;
    Ok(match kind {
        RiskKind::Var => -normal::quantile(tail),
        RiskKind::Cvar => normal::pdf(normal::quantile(tail)) / tail,
        RiskKind::Rvar => (2.0 * beta - 1.0) / (2.0 * (beta * tail).sqrt()),
        RiskKind::Rcvar => (beta / tail).sqrt(),
    })
}

/// A risk measure at a fixed confidence level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskSpec {
    kind: RiskKind,
    beta: f64,
    coefficient: f64,
}

impl RiskSpec {
    pub fn new(kind: RiskKind, beta: f64) -> Result<Self> {
        let coefficient = risk_coefficient(kind, beta)?;
        Ok(Self {
            kind,
            beta,
            coefficient,
        })
    }

    pub fn kind(&self) -> RiskKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

fn quad_norm(cov: &Matrix, x: &Vector) -> (f64, Vector) {
    let qx = cov * x;
    (x.dot(&qx).max(0.0).sqrt(), qx)
}

/// `c_β·√(xᵀQx) − μᵀx`.
pub fn risk_value(inst: &PortfolioInstance, spec: &RiskSpec, x: &Vector) -> Result<f64> {
    inst.check_len(x)?;
    let (sd, _) = quad_norm(&inst.cov, x);
    Ok(spec.coefficient * sd - inst.mean.dot(x))
}

/// `c_β·Qx/√(xᵀQx) − μ`, with the square root floored at
/// [`GRADIENT_NORM_FLOOR`].
pub fn risk_gradient(inst: &PortfolioInstance, spec: &RiskSpec, x: &Vector) -> Result<Vector> {
    inst.check_len(x)?;
    let (sd, qx) = quad_norm(&inst.cov, x);
    Ok(qx * (spec.coefficient / sd.max(GRADIENT_NORM_FLOOR)) - &inst.mean)
}

/// Number of components with `|x_i| > tol` (strict).
pub fn cardinality(x: &[f64], tol: f64) -> usize {
    x.iter().filter(|v| v.abs() > tol).count()
}

/// `min r(x) s.t. eᵀx = 1, 0 ≤ x ≤ u`; the cardinality budget is left to the
/// reformulation layer.
#[derive(Clone, Debug)]
pub struct PortfolioProgram {
    inst: Arc<PortfolioInstance>,
    spec: RiskSpec,
    bounds: Bounds,
}

impl PortfolioProgram {
    pub fn instance(&self) -> &PortfolioInstance {
        &self.inst
    }

    pub fn spec(&self) -> &RiskSpec {
        &self.spec
    }
}

pub fn portfolio_program(inst: &PortfolioInstance, spec: RiskSpec) -> PortfolioProgram {
    let bounds = Bounds {
        lower: Vector::zeros(inst.n()),
        upper: inst.ubound.clone(),
    };
    PortfolioProgram {
        inst: Arc::new(inst.clone()),
        spec,
        bounds,
    }
}

impl SmoothProgram for PortfolioProgram {
    fn dim(&self) -> usize {
        self.inst.n()
    }

    fn num_eq(&self) -> usize {
        1
    }

    fn objective(&self, x: &Vector) -> (f64, Vector) {
        let (sd, qx) = quad_norm(&self.inst.cov, x);
        let c = self.spec.coefficient;
        let value = c * sd - self.inst.mean.dot(x);
        let grad = qx * (c / sd.max(GRADIENT_NORM_FLOOR)) - &self.inst.mean;
        (value, grad)
    }

    fn objective_value(&self, x: &Vector) -> f64 {
        let (sd, _) = quad_norm(&self.inst.cov, x);
        self.spec.coefficient * sd - self.inst.mean.dot(x)
    }

    fn eq(&self, x: &Vector) -> (Vector, Matrix) {
        let n = self.inst.n();
        (
            Vector::from_element(1, x.sum() - 1.0),
            Matrix::from_element(1, n, 1.0),
        )
    }

    fn bounds(&self) -> Option<&Bounds> {
        Some(&self.bounds)
    }

    /// `c (Q/s − QxxᵀQ/s³)` with `s = √(xᵀQx)`; the constraints are linear.
    fn lagrangian_hessian(&self, x: &Vector, _lam: &Vector, _mu: &Vector) -> Option<Matrix> {
        let (sd, qx) = quad_norm(&self.inst.cov, x);
        let s = sd.max(GRADIENT_NORM_FLOOR);
        let c = self.spec.coefficient;
        let mut h = &self.inst.cov * (c / s);
        h.ger(-c / (s * s * s), &qx, &qx, 1.0);
        Some(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_instance(n: usize) -> PortfolioInstance {
        PortfolioInstance::new(
            Vector::zeros(n),
            Matrix::identity(n, n),
            Vector::from_element(n, 1.0),
            1,
        )
        .unwrap()
    }

    fn random_instance(n: usize, seed: u64) -> PortfolioInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + Matrix::identity(n, n) * 0.01;
        let mean = Vector::from_fn(n, |_, _| rng.random_range(0.0..0.1));
        PortfolioInstance::new(mean, cov, Vector::from_element(n, 1.0), 2).unwrap()
    }

    #[test]
    fn coefficient_table_spot_values() {
        let cases = [
            (RiskKind::Var, 0.95, 1.6449),
            (RiskKind::Rcvar, 0.9, 3.0000),
            (RiskKind::Rvar, 0.99, 4.9247),
            (RiskKind::Cvar, 0.9, 1.7550),
        ];
        for (k, b, want) in cases {
            let c = risk_coefficient(k, b).unwrap();
            assert!((c - want).abs() < 5e-5, "{k} {b}: {c}");
        }
        assert!((risk_coefficient(RiskKind::Rcvar, 0.9).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn coefficient_rejects_beta_outside_open_interval() {
        for b in [0.5, 0.2, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                risk_coefficient(RiskKind::Cvar, b),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn coefficient_ordering_on_grid() {
        let mut beta = 0.51;
        while beta <= 0.99 + 1e-12 {
            let v = risk_coefficient(RiskKind::Var, beta).unwrap();
            let c = risk_coefficient(RiskKind::Cvar, beta).unwrap();
            let rv = risk_coefficient(RiskKind::Rvar, beta).unwrap();
            let rc = risk_coefficient(RiskKind::Rcvar, beta).unwrap();
            assert!(rc >= c && c >= v && rc >= rv, "beta {beta}");
            beta += 0.04;
        }
    }

    #[test]
    fn single_asset_value() {
        let inst = random_instance(4, 3);
        let spec = RiskSpec::new(RiskKind::Cvar, 0.95).unwrap();
        for i in 0..4 {
            let mut x = Vector::zeros(4);
            x[i] = 1.0;
            let want = spec.coefficient() * inst.cov()[(i, i)].sqrt() - inst.mean()[i];
            assert!((risk_value(&inst, &spec, &x).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_identity_value_and_gradient() {
        let inst = identity_instance(2);
        let spec = RiskSpec::new(RiskKind::Var, 0.9).unwrap();
        let c = spec.coefficient();
        let x = Vector::from_vec(vec![0.5, 0.5]);
        assert!((risk_value(&inst, &spec, &x).unwrap() - c * 0.5f64.sqrt()).abs() < 1e-15);
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let g = risk_gradient(&inst, &spec, &e1).unwrap();
        assert!((g[0] - c).abs() < 1e-15 && g[1].abs() < 1e-15);
    }

    #[test]
    fn gradient_at_origin_is_floored_and_finite() {
        let inst = random_instance(3, 1);
        let spec = RiskSpec::new(RiskKind::Rcvar, 0.99).unwrap();
        let g = risk_gradient(&inst, &spec, &Vector::zeros(3)).unwrap();
        assert_eq!(g, -inst.mean().clone());
        assert_eq!(risk_value(&inst, &spec, &Vector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = random_instance(4, 11);
        let spec = RiskSpec::new(RiskKind::Rvar, 0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Vector::from_fn(4, |_, _| rng.random_range(0.05..1.0));
        let g = risk_gradient(&inst, &spec, &x).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (risk_value(&inst, &spec, &xp).unwrap()
                - risk_value(&inst, &spec, &xm).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn gradient_is_scale_invariant() {
        let inst = random_instance(5, 7);
        let spec = RiskSpec::new(RiskKind::Cvar, 0.9).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.3, 0.0, 0.2, 0.4]);
        let g1 = risk_gradient(&inst, &spec, &x).unwrap();
        let g2 = risk_gradient(&inst, &spec, &(&x * 2.0)).unwrap();
        assert!((g1 - g2).amax() < 1e-14);
    }

    #[test]
    fn homogeneity_and_convexity() {
        let inst = random_instance(5, 21);
        let spec = RiskSpec::new(RiskKind::Rcvar, 0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = Vector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
            let z = Vector::from_fn(5, |_, _| rng.random_range(0.0..1.0));
            let lam: f64 = rng.random_range(0.1..10.0);
            let rx = risk_value(&inst, &spec, &x).unwrap();
            let rlx = risk_value(&inst, &spec, &(&x * lam)).unwrap();
            assert!((rlx - lam * rx).abs() <= 1e-12 * rlx.abs().max(1.0));
            let th: f64 = rng.random_range(0.0..1.0);
            let rz = risk_value(&inst, &spec, &z).unwrap();
            let mid = risk_value(&inst, &spec, &(&x * th + &z * (1.0 - th))).unwrap();
            assert!(mid <= th * rx + (1.0 - th) * rz + 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let inst = identity_instance(3);
        let spec = RiskSpec::new(RiskKind::Var, 0.95).unwrap();
        assert!(matches!(
            risk_value(&inst, &spec, &Vector::zeros(2)),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            risk_gradient(&inst, &spec, &Vector::zeros(4)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn program_structure() {
        let inst = identity_instance(3);
        let prog = portfolio_program(&inst, RiskSpec::new(RiskKind::Var, 0.95).unwrap());
        assert_eq!((prog.dim(), prog.num_ineq(), prog.num_eq()), (3, 0, 1));
        let (h, jh) = prog.eq(&Vector::from_element(3, 1.0 / 3.0));
        assert!(h[0].abs() < 1e-15);
        assert_eq!(jh, Matrix::from_element(1, 3, 1.0));
        let b = prog.bounds().unwrap();
        assert_eq!(b.lower, Vector::zeros(3));
        assert_eq!(b.upper, Vector::from_element(3, 1.0));
    }

    #[test]
    fn cardinality_counts_strictly() {
        assert_eq!(cardinality(&[0.5, 1e-9, 0.5], 1e-6), 2);
        assert_eq!(cardinality(&[0.0; 4], 1e-6), 0);
        assert_eq!(cardinality(&[1e-6, 2e-6], 1e-6), 1);
        assert_eq!(cardinality(&[-0.5, 0.2], 1e-6), 2);
    }

    #[test]
    fn instance_validation() {
        let n = 3;
        let ok = || {
            (
                Vector::zeros(n),
                Matrix::identity(n, n),
                Vector::from_element(n, 1.0),
            )
        };
        let (m, q, u) = ok();
        assert!(PortfolioInstance::new(m, q, u, 3).is_err());
        let (m, q, u) = ok();
        assert!(PortfolioInstance::new(m, q, u, 0).is_err());
        let (m, mut q, u) = ok();
        q[(0, 0)] = -1.0;
        assert!(PortfolioInstance::new(m, q, u, 1).is_err());
        let (m, mut q, u) = ok();
        q[(0, 1)] = 0.5;
        assert!(PortfolioInstance::new(m, q, u, 1).is_err());
        let (m, q, mut u) = ok();
        u[1] = 0.0;
        assert!(PortfolioInstance::new(m, q, u, 1).is_err());
        let (m, mut q, u) = ok();
        q[(0, 1)] = 0.1;
        q[(1, 0)] = 0.1 + 1e-14;
        let inst = PortfolioInstance::new(m, q, u, 1).unwrap();
        assert_eq!(inst.cov()[(0, 1)], inst.cov()[(1, 0)]);
    }
}
