//! Reference answers for small problems.
//!
//! [`enumerate_supports`] finds the global minimum of a cardinality-constrained
//! program by solving the convex restriction to every support of size κ.
//! [`mc_cvar`] estimates the conditional value-at-risk of a portfolio by
//! sampling, which checks the closed-form coefficients independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PortfolioInstance, ProgramRef, Rebounded, SmoothProgram, Vector};
use crate::nlp::{self, SolveStatus, SolverOptions};

pub const DEFAULT_N_LIMIT: usize = 15;
pub const MAX_SUPPORTS: u128 = 100_000;
pub const MIN_SAMPLES: usize = 10_000;
pub const ORACLE_TOL_KKT: f64 = 1e-10;

/// Two objective values closer than this (relative) count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub support: Vec<usize>,
    /// Number of restricted programs solved.
    pub supports_tried: usize,
    /// Number of restrictions that turned out infeasible.
    pub supports_infeasible: usize,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn solve_support(
    prog: &ProgramRef,
    support: &[usize],
    opts: &SolverOptions,
) -> Result<Option<(Vector, f64)>> {
    let restricted = match Rebounded::restrict_to_support(prog.clone(), support) {
        Ok(r) => r,
        Err(Error::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n = prog.dim();
    let mut x0 = Vector::zeros(n);
    for &i in support {
        x0[i] = 1.0 / support.len().max(1) as f64;
    }
    if let Some(b) = restricted.bounds() {
        b.project(&mut x0);
    }
    let report = nlp::solve(&restricted, &x0, opts)?;
    let ok = matches!(
        report.status,
        SolveStatus::Converged | SolveStatus::IterationLimit
    ) && report.violation <= opts.tol_feas.max(1e-8);
    Ok(ok.then(|| (report.point_vector(), report.objective)))
}

/// Global minimum of `prog` subject to `‖x‖₀ ≤ κ`, by solving the
/// restriction to every support of size `min(κ, n)`.
///
/// Every point with fewer than κ nonzeros is feasible for some size-κ
/// restriction, so larger supports are never needed and smaller ones add
/// nothing. Each restriction must be convex for the result to be global.
/// Equal objectives resolve to the lexicographically smallest support.
/// Restrictions are solved to a KKT tolerance of [`ORACLE_TOL_KKT`] so that
/// the result can serve as a reference for local methods.
pub fn enumerate_supports(prog: ProgramRef, kappa: usize, n_limit: usize) -> Result<OracleResult> {
    let opts = SolverOptions {
        tol_kkt: ORACLE_TOL_KKT,
        ..SolverOptions::default()
    };
    enumerate_supports_with(prog, kappa, n_limit, &opts)
}

pub fn enumerate_supports_with(
    prog: ProgramRef,
    kappa: usize,
    n_limit: usize,
    opts: &SolverOptions,
) -> Result<OracleResult> {
    let n = prog.dim();
    if n > n_limit {
        return Err(Error::usage(format!(
            "oracle is limited to n <= {n_limit}, got n = {n}"
        )));
    }
    let k = kappa.min(n);
    if binomial(n, k) > MAX_SUPPORTS {
        return Err(Error::usage(format!(
            "C({n}, {k}) = {} supports exceeds the limit of {MAX_SUPPORTS}",
            binomial(n, k)
        )));
    }
    let supports = combinations(n, k);
    let solved: Vec<Option<(Vector, f64)>> = supports
        .par_iter()
        .map(|s| solve_support(&prog, s, opts))
        .collect::<Result<_>>()?;

    let mut best: Option<(usize, &Vector, f64)> = None;
    let mut infeasible = 0;
    for (i, r) in solved.iter().enumerate() {
        let Some((x, f)) = r else {
            infeasible += 1;
            continue;
        };
        let better = match best {
            None => true,
            Some((_, _, fb)) => *f < fb - TIE_TOLERANCE * (1.0 + fb.abs()),
        };
        if better {
            best = Some((i, x, *f));
        }
    }
    let (i, x, objective) =
        best.ok_or_else(|| Error::Infeasible("every support restriction is infeasible".into()))?;
    Ok(OracleResult {
        x: x.iter().copied().collect(),
        objective,
        support: supports[i].clone(),
        supports_tried: supports.len(),
        supports_infeasible: infeasible,
    })
}

/// Sample CVaR of the loss `−xᵀξ`, `ξ ~ N(μ, Q)`, with its standard error.
///
/// Uses the Rockafellar–Uryasev form `v + E[(L − v)₊]/(1 − β)` at the
/// empirical β-quantile `v`; the standard error is that of the sample mean
/// of the summand.
pub fn mc_cvar(
    inst: &PortfolioInstance,
    beta: f64,
    x: &Vector,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level {beta} outside (0, 1)"
        )));
    }
    if samples < MIN_SAMPLES {
        return Err(Error::usage(format!(
            "at least {MIN_SAMPLES} samples are required"
        )));
    }
    let n = inst.n();
    if x.len() != n {
        return Err(Error::usage(format!(
            "portfolio has length {}, expected {n}",
            x.len()
        )));
    }
    let cov = inst.cov();
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            // a zero covariance has zero trace; fall back to an absolute jitter
            let jitter = 1e-12 * cov.trace().max(1.0);
            let shifted = cov + nalgebra::DMatrix::identity(n, n) * jitter;
            shifted.cholesky().ok_or_else(|| {
                Error::Numerical("covariance is not factorizable after jitter".into())
            })?
        }
    };
    // xᵀξ = μᵀx + (Lᵀx)ᵀz with z standard normal
    let lx = chol.l().transpose() * x;
    let mx = inst.mean().dot(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses: Vec<f64> = (0..samples)
        .map(|_| {
            let proj: f64 = lx
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c * z
                })
                .sum();
            -(mx + proj)
        })
        .collect();

    let rank = ((beta * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    let var = *losses.select_nth_unstable_by(rank, f64::total_cmp).1;
    let tail = 1.0 - beta;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for &l in &losses {
        let v = var + (l - var).max(0.0) / tail;
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let variance = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok((mean, (variance / m).sqrt()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bench::{generate_instance, GeneratorParams};
    use crate::model::{portfolio_program, risk_coefficient, Matrix, RiskKind, RiskSpec};

    fn diag_instance(d: &[f64], kappa: usize) -> PortfolioInstance {
        let n = d.len();
        PortfolioInstance::new(
            Vector::zeros(n),
            Matrix::from_diagonal(&Vector::from_column_slice(d)),
            Vector::from_element(n, 1.0),
            kappa,
        )
        .unwrap()
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(
            combinations(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(binomial(15, 7), 6435);
    }

    #[test]
    fn single_asset_is_smallest_variance() {
        let inst = diag_instance(&[1.0, 2.0, 3.0], 1);
        let spec = RiskSpec::new(RiskKind::Var, 0.95).unwrap();
        let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
        let r = enumerate_supports(prog, 1, DEFAULT_N_LIMIT).unwrap();
        assert_eq!(r.support, vec![0]);
        assert!((r.objective - spec.coefficient()).abs() < 1e-7);
    }

    #[test]
    fn full_support_matches_unrestricted_solve() {
        let inst = generate_instance(&GeneratorParams::new(5, 2, 3)).unwrap();
        let spec = RiskSpec::new(RiskKind::Cvar, 0.9).unwrap();
        let prog = portfolio_program(&inst, spec);
        let full = nlp::solve(
            &prog,
            &Vector::from_element(5, 0.2),
            &SolverOptions::default(),
        )
        .unwrap();
        let r = enumerate_supports(Arc::new(prog), 5, DEFAULT_N_LIMIT).unwrap();
        assert_eq!(r.supports_tried, 1);
        assert!((r.objective - full.objective).abs() < 1e-7);
    }

    #[test]
    fn ties_resolve_to_first_support() {
        let inst = diag_instance(&[1.0, 1.0, 1.0, 1.0], 2);
        let spec = RiskSpec::new(RiskKind::Var, 0.9).unwrap();
        let r = enumerate_supports(Arc::new(portfolio_program(&inst, spec)), 2, DEFAULT_N_LIMIT)
            .unwrap();
        assert_eq!(r.support, vec![0, 1]);
    }

    #[test]
    fn value_is_nonincreasing_in_kappa() {
        for seed in 0..3 {
            let inst = generate_instance(&GeneratorParams::new(7, 2, seed)).unwrap();
            let spec = RiskSpec::new(RiskKind::Rvar, 0.95).unwrap();
            let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
            let values: Vec<f64> = (1..=7)
                .map(|k| {
                    enumerate_supports(prog.clone(), k, DEFAULT_N_LIMIT)
                        .unwrap()
                        .objective
                })
                .collect();
            for w in values.windows(2) {
                assert!(w[1] <= w[0] + 1e-7, "{values:?}");
            }
        }
    }

    #[test]
    fn infeasible_restrictions_are_skipped() {
        // caps of 0.4 need three assets to reach a unit budget
        let n = 4;
        let inst = PortfolioInstance::new(
            Vector::zeros(n),
            Matrix::identity(n, n),
            Vector::from_element(n, 0.4),
            2,
        )
        .unwrap();
        let spec = RiskSpec::new(RiskKind::Var, 0.9).unwrap();
        let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
        assert!(matches!(
            enumerate_supports(prog.clone(), 2, 15),
            Err(Error::Infeasible(_))
        ));
        let r = enumerate_supports(prog, 3, 15).unwrap();
        assert_eq!(r.supports_infeasible, 0);
        assert_eq!(r.support, vec![0, 1, 2]);
    }

    #[test]
    fn size_guards() {
        let inst = generate_instance(&GeneratorParams::new(16, 3, 0)).unwrap();
        let spec = RiskSpec::new(RiskKind::Var, 0.9).unwrap();
        let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
        assert!(matches!(
            enumerate_supports(prog.clone(), 3, DEFAULT_N_LIMIT),
            Err(Error::Usage(_))
        ));
        let inst = generate_instance(&GeneratorParams::new(30, 10, 0)).unwrap();
        let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
        assert!(matches!(
            enumerate_supports(prog, 10, 40),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn deterministic_loss() {
        let n = 2;
        let inst = PortfolioInstance::new(
            Vector::from_vec(vec![0.05, 0.02]),
            Matrix::zeros(n, n),
            Vector::from_element(n, 1.0),
            1,
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.5, 0.5]);
        let (est, se) = mc_cvar(&inst, 0.95, &x, MIN_SAMPLES, 1).unwrap();
        assert!((est + 0.035).abs() < 1e-4, "{est}");
        assert!(se < 1e-4);
    }

    #[test]
    fn single_asset_matches_coefficient() {
        let inst = PortfolioInstance::new(
            Vector::zeros(2),
            Matrix::identity(2, 2),
            Vector::from_element(2, 1.0),
            1,
        )
        .unwrap();
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let (est, se) = mc_cvar(&inst, 0.9, &x, 200_000, 7).unwrap();
        let eta = risk_coefficient(RiskKind::Cvar, 0.9).unwrap();
        assert!((est - eta).abs() <= 3.0 * se, "{est} ± {se} vs {eta}");
    }

    #[test]
    fn standard_error_scales_with_root_samples() {
        let inst = PortfolioInstance::new(
            Vector::zeros(2),
            Matrix::identity(2, 2),
            Vector::from_element(2, 1.0),
            1,
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.6, 0.4]);
        let (_, se1) = mc_cvar(&inst, 0.95, &x, 100_000, 3).unwrap();
        let (_, se2) = mc_cvar(&inst, 0.95, &x, 200_000, 3).unwrap();
        let ratio = se1 / se2;
        assert!((ratio - 2f64.sqrt()).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = diag_instance(&[1.0, 1.0], 1);
        let x = Vector::from_vec(vec![1.0, 0.0]);
        assert!(mc_cvar(&inst, 0.9, &x, 100, 0).is_err());
        assert!(mc_cvar(&inst, 1.0, &x, MIN_SAMPLES, 0).is_err());
        assert!(mc_cvar(&inst, 0.9, &Vector::zeros(3), MIN_SAMPLES, 0).is_err());
    }
}
