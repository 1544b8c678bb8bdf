//! Batch runs over instances × measures × confidence levels × methods.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_instance, is_feasible, relative_gap, GeneratorParams, Method, RunRecord};
use super::{BEST_TIE_TOL, SUPPORT_TOL};
use crate::error::{Error, Result};
use crate::homotopy::{self, HomotopyResult, HomotopySchedule, StartY};
use crate::model::{
    cardinality, portfolio_program, PortfolioInstance, ProgramRef, RiskKind, RiskSpec, Vector,
};
use crate::oracle;
use crate::reformulate::{recover_y, IteratePair, Regularization, RegularizationKind};
use crate::stationarity;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSpec {
    pub n: usize,
    pub kappa: usize,
}

/// Optional replacements for the default homotopy parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub t0: Option<f64>,
    pub shrink: Option<f64>,
    pub tol_comp: Option<f64>,
    pub t_floor: Option<f64>,
}

impl ScheduleOverrides {
    pub fn apply(&self, mut s: HomotopySchedule) -> HomotopySchedule {
        s.t0 = self.t0.unwrap_or(s.t0);
        s.shrink = self.shrink.unwrap_or(s.shrink);
        s.tol_comp = self.tol_comp.unwrap_or(s.tol_comp);
        s.t_floor = self.t_floor.unwrap_or(s.t_floor);
        s
    }
}

fn default_classify() -> bool {
    true
}

/// Experiment description, read from TOML:
///
/// ```toml
/// seeds = [0, 1, 2]
/// methods = ["scholtes-01", "direct-01", "oracle"]
/// measures = ["VaR", "CVaR"]
/// betas = [0.95]
///
/// [[sizes]]
/// n = 8
/// kappa = 2
///
/// [schedule]
/// shrink = 0.01
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub sizes: Vec<SizeSpec>,
    pub methods: Vec<Method>,
    pub measures: Vec<RiskKind>,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    /// Report the support-polished point instead of the raw limit.
    #[serde(default)]
    pub polish: bool,
    /// Attach an S/M certificate to feasible homotopy results.
    #[serde(default = "default_classify")]
    pub classify: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.sizes.is_empty() || self.methods.is_empty() {
            return Err(Error::usage("seeds, sizes and methods must be nonempty"));
        }
        if self.measures.is_empty() || self.betas.is_empty() {
            return Err(Error::usage("measures and betas must be nonempty"));
        }
        for s in &self.sizes {
            if s.n < 2 || s.kappa == 0 || s.kappa >= s.n {
                return Err(Error::usage(format!(
                    "size n = {}, kappa = {} is invalid",
                    s.n, s.kappa
                )));
            }
        }
        for &b in &self.betas {
            RiskSpec::new(RiskKind::Var, b)?;
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> HomotopySchedule {
        self.schedule.apply(HomotopySchedule::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub measure: RiskKind,
    pub beta: f64,
    pub runs: usize,
    /// Mean gap over the runs that have one.
    pub avg_gap: Option<f64>,
    pub avg_time_ms: f64,
    pub best_count: usize,
    pub infeasible_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<GroupSummary>,
}

fn instance_id(n: usize, kappa: usize, seed: u64) -> String {
    format!("n{n}-k{kappa}-s{seed}")
}

struct Outcome {
    x: Vec<f64>,
    y: Option<Vec<f64>>,
    status: String,
}

fn homotopy_status(r: &HomotopyResult) -> String {
    match r.inner_failure {
        Some(s) => format!("{:?}({s:?})", r.status),
        None => format!("{:?}", r.status),
    }
}

fn solve(
    inst: &PortfolioInstance,
    prog: &ProgramRef,
    method: Method,
    schedule: &HomotopySchedule,
    polish: bool,
) -> Result<Outcome> {
    let n = inst.n();
    let kappa = inst.kappa();
    let regularized = |variant, y0: StartY| {
        let mut s = *schedule;
        s.method = RegularizationKind {
            variant,
            nonneg_x: true,
        };
        s.y0_mode = y0;
        homotopy::run(prog.clone(), kappa, &s, &Vector::zeros(n))
    };
    let result = match method {
        Method::Scholtes(y0) => regularized(Regularization::Scholtes, y0)?,
        Method::KanzowSchwartz(y0) => regularized(Regularization::KanzowSchwartz, y0)?,
        Method::Direct(y0) => homotopy::solve_direct(
            prog.clone(),
            kappa,
            y0,
            &Vector::zeros(n),
            &schedule.inner,
            schedule.tol_comp,
        )?,
        Method::Oracle => {
            let r = oracle::enumerate_supports(prog.clone(), kappa, oracle::DEFAULT_N_LIMIT)?;
            return Ok(Outcome {
                x: r.x,
                y: None,
                status: "Optimal".into(),
            });
        }
    };
    let status = homotopy_status(&result);
    if !polish {
        return Ok(Outcome {
            x: result.pair.x,
            y: Some(result.pair.y),
            status,
        });
    }
    let p = homotopy::polish(
        prog.clone(),
        kappa,
        &result.pair,
        SUPPORT_TOL,
        &schedule.inner,
    )?;
    let y = recover_y(&p.x, kappa, SUPPORT_TOL).ok();
    Ok(Outcome {
        x: p.x,
        y,
        status: format!("{status}+polished"),
    })
}

/// Solves one problem with one method. Failures are reported in `status`
/// with an infinite objective; the gap is left empty.
pub fn run_cell(
    inst: &PortfolioInstance,
    instance_id: &str,
    method: Method,
    spec: RiskSpec,
    schedule: &HomotopySchedule,
    polish: bool,
    classify: bool,
) -> RunRecord {
    let prog: ProgramRef = Arc::new(portfolio_program(inst, spec));
    let start = Instant::now();
    let outcome = solve(inst, &prog, method, schedule, polish);
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut record = RunRecord {
        instance_id: instance_id.to_string(),
        method,
        measure: spec.kind(),
        beta: spec.beta(),
        objective: f64::INFINITY,
        time_ms,
        cardinality: 0,
        feasible: false,
        gap: None,
        stationarity: None,
        status: String::new(),
    };
    match outcome {
        Err(e) => record.status = format!("error: {e}"),
        Ok(out) => {
            let x = Vector::from_column_slice(&out.x);
            record.objective = prog.objective_value(&x);
            record.cardinality = cardinality(&out.x, SUPPORT_TOL);
            record.feasible = is_feasible(inst, &out.x, out.y.as_deref());
            record.status = out.status;
            if classify && record.feasible {
                if let Some(y) = out.y {
                    let pair = IteratePair { x: out.x, y };
                    record.stationarity = stationarity::classify(
                        prog.as_ref(),
                        &pair,
                        stationarity::DEFAULT_TOL_ACT,
                        stationarity::DEFAULT_TOL_RES,
                    )
                    .ok()
                    .map(|c| c.classification);
                }
            }
        }
    }
    record
}

type ProblemKey = (String, RiskKind, u64);

fn problem_key(r: &RunRecord) -> ProblemKey {
    (r.instance_id.clone(), r.measure, r.beta.to_bits())
}

/// Best feasible objective of every problem present in `records`.
pub(crate) fn best_objectives(records: &[RunRecord]) -> BTreeMap<ProblemKey, f64> {
    let mut best: BTreeMap<ProblemKey, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.feasible) {
        let e = best.entry(problem_key(r)).or_insert(f64::INFINITY);
        *e = e.min(r.objective);
    }
    best
}

/// Fills `gap` for every feasible record against the best feasible
/// objective of its problem.
pub fn assign_gaps(records: &mut [RunRecord]) {
    let best = best_objectives(records);
    for r in records.iter_mut() {
        r.gap = match (r.feasible, best.get(&problem_key(r))) {
            (true, Some(&fb)) => relative_gap(r.objective, fb),
            _ => None,
        };
    }
}

/// Per (method, measure, β) statistics in the order methods first appear.
pub fn summarize(records: &[RunRecord]) -> Vec<GroupSummary> {
    let best = best_objectives(records);
    let mut groups: Vec<GroupSummary> = Vec::new();
    let mut gap_counts: Vec<usize> = Vec::new();
    for r in records {
        let idx = groups
            .iter()
            .position(|g| g.method == r.method && g.measure == r.measure && g.beta == r.beta)
            .unwrap_or_else(|| {
                groups.push(GroupSummary {
                    method: r.method,
                    measure: r.measure,
                    beta: r.beta,
                    runs: 0,
                    avg_gap: None,
                    avg_time_ms: 0.0,
                    best_count: 0,
                    infeasible_count: 0,
                });
                gap_counts.push(0);
                groups.len() - 1
            });
        let g = &mut groups[idx];
        g.runs += 1;
        g.avg_time_ms += r.time_ms;
        if let Some(gap) = r.gap {
            g.avg_gap = Some(g.avg_gap.unwrap_or(0.0) + gap);
            gap_counts[idx] += 1;
        }
        if !r.feasible {
            g.infeasible_count += 1;
        } else if best
            .get(&problem_key(r))
            .is_some_and(|&fb| r.objective <= fb + BEST_TIE_TOL)
        {
            g.best_count += 1;
        }
    }
    for (g, &c) in groups.iter_mut().zip(&gap_counts) {
        g.avg_time_ms /= g.runs as f64;
        g.avg_gap = g.avg_gap.map(|s| s / c as f64);
    }
    groups.sort_by(|a, b| {
        (a.measure, a.beta.to_bits(), a.method).cmp(&(b.measure, b.beta.to_bits(), b.method))
    });
    groups
}

/// Runs every cell of the configuration; cells run in parallel and the
/// records come back in configuration order (sizes, seeds, measures, betas,
/// methods).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let schedule = config.schedule();
    let mut instances = Vec::new();
    for size in &config.sizes {
        for &seed in &config.seeds {
            let inst = generate_instance(&GeneratorParams::new(size.n, size.kappa, seed))?;
            instances.push((instance_id(size.n, size.kappa, seed), inst));
        }
    }
    let mut cells = Vec::new();
    for (i, _) in instances.iter().enumerate() {
        for &kind in &config.measures {
            for &beta in &config.betas {
                for &method in &config.methods {
                    cells.push((i, RiskSpec::new(kind, beta)?, method));
                }
            }
        }
    }
    let mut records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(i, spec, method)| {
            let (id, inst) = &instances[i];
            run_cell(
                inst,
                id,
                method,
                spec,
                &schedule,
                config.polish,
                config.classify,
            )
        })
        .collect();
    assign_gaps(&mut records);
    let summary = summarize(&records);
    Ok(ExperimentResult { records, summary })
}
