//! Command-line front end: instance generation, single solves, the support
//! oracle, batch experiments and performance profiles.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cardopt::bench::{self, io as bio, ExperimentConfig, GeneratorParams, RunRecord};
use cardopt::homotopy::{self, HomotopyResult, HomotopySchedule, StartY, StepRecord};
use cardopt::model::{cardinality, portfolio_program, ProgramRef, RiskKind, RiskSpec, Vector};
use cardopt::oracle;
use cardopt::reformulate::{Regularization, RegularizationKind};
use cardopt::stationarity::{self, StationarityCertificate};
use cardopt::{Error, Result};

#[derive(Parser)]
#[command(name = "cardopt", version)]
#[command(about = "Sparse portfolio selection through regularized continuous reformulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Scholtes,
    KanzowSchwartz,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum StartArg {
    Ones,
    Zeros,
}

impl From<StartArg> for StartY {
    fn from(s: StartArg) -> Self {
        match s {
            StartArg::Ones => StartY::Ones,
            StartArg::Zeros => StartY::Zeros,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance as JSON
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output path
        #[arg(long)]
        out: PathBuf,
        /// Cardinality budget stored with the instance (default max(1, n/10))
        #[arg(long)]
        kappa: Option<usize>,
    },
    /// Solve one instance with one method and print the result as JSON
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "scholtes")]
        method: MethodArg,
        /// VaR, CVaR, RVaR or RCVaR
        #[arg(long, default_value = "CVaR")]
        measure: RiskKind,
        #[arg(long, default_value = "0.95")]
        beta: f64,
        /// Overrides the budget stored in the instance
        #[arg(long)]
        kappa: Option<usize>,
        #[arg(long, value_enum, default_value = "ones")]
        y0: StartArg,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        shrink: Option<f64>,
        #[arg(long)]
        tol_comp: Option<f64>,
        #[arg(long)]
        t_floor: Option<f64>,
        /// Write the JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Globally solve a small instance by enumerating supports
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "CVaR")]
        measure: RiskKind,
        #[arg(long, default_value = "0.95")]
        beta: f64,
        #[arg(long)]
        kappa: Option<usize>,
    },
    /// Run an experiment described by a TOML file
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Performance profile of a records CSV
    Profile {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct SolveOutput {
    method: String,
    measure: RiskKind,
    beta: f64,
    kappa: usize,
    objective: f64,
    feasible: bool,
    cardinality: usize,
    status: String,
    x: Vec<f64>,
    y: Vec<f64>,
    steps: Vec<StepSummary>,
    stationarity: Option<StationarityCertificate>,
}

#[derive(Serialize)]
struct StepSummary {
    t: f64,
    status: String,
    objective: f64,
    complementarity: f64,
    kkt_residual: f64,
    iterations: usize,
}

impl From<&StepRecord> for StepSummary {
    fn from(s: &StepRecord) -> Self {
        Self {
            t: s.t,
            status: format!("{:?}", s.status),
            objective: s.objective,
            complementarity: s.complementarity,
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("cardopt: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Generate {
            n,
            seed,
            out,
            kappa,
        } => {
            let kappa = kappa.unwrap_or((n / 10).max(1));
            let inst = bench::generate_instance(&GeneratorParams::new(n, kappa, seed))?;
            bio::write_instance(&out, &inst, Some(seed))?;
            Ok(0)
        }
        Command::Solve {
            instance,
            method,
            measure,
            beta,
            kappa,
            y0,
            t0,
            shrink,
            tol_comp,
            t_floor,
            out,
        } => {
            let overrides = bench::ScheduleOverrides {
                t0,
                shrink,
                tol_comp,
                t_floor,
            };
            let schedule = overrides.apply(HomotopySchedule::default());
            schedule.validate()?;
            solve(
                &instance,
                method,
                RiskSpec::new(measure, beta)?,
                kappa,
                y0.into(),
                schedule,
                out,
            )
        }
        Command::Oracle {
            instance,
            measure,
            beta,
            kappa,
        } => {
            let inst = load(&instance, kappa)?;
            let prog: ProgramRef =
                Arc::new(portfolio_program(&inst, RiskSpec::new(measure, beta)?));
            let r = oracle::enumerate_supports(prog, inst.kappa(), oracle::DEFAULT_N_LIMIT)?;
            print_json(&r, None)?;
            Ok(0)
        }
        Command::Bench { config, out_dir } => bench_cmd(&config, &out_dir),
        Command::Profile { records, out } => {
            let records = bio::load_records(&records)?;
            let curves = bench::performance_profile(&records)?;
            bench::write_profile(BufWriter::new(File::create(&out)?), &curves)?;
            Ok(0)
        }
    }
}

fn load(path: &Path, kappa: Option<usize>) -> Result<cardopt::model::PortfolioInstance> {
    let inst = bio::read_instance(path)?;
    match kappa {
        Some(k) => inst.with_kappa(k),
        None => Ok(inst),
    }
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => match writeln!(io::stdout().lock(), "{text}") {
            // a closed reader (e.g. `| head`) is not an error
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
            r => r?,
        },
    }
    Ok(())
}

fn solve(
    path: &Path,
    method: MethodArg,
    spec: RiskSpec,
    kappa: Option<usize>,
    y0: StartY,
    mut schedule: HomotopySchedule,
    out: Option<PathBuf>,
) -> Result<u8> {
    let inst = load(path, kappa)?;
    let n = inst.n();
    let kappa = inst.kappa();
    let prog: ProgramRef = Arc::new(portfolio_program(&inst, spec));
    let x0 = Vector::zeros(n);
    let (tag, result): (bench::Method, HomotopyResult) = match method {
        MethodArg::Direct => (
            bench::Method::Direct(y0),
            homotopy::solve_direct(
                prog.clone(),
                kappa,
                y0,
                &x0,
                &schedule.inner,
                schedule.tol_comp,
            )?,
        ),
        MethodArg::Scholtes | MethodArg::KanzowSchwartz => {
            let (variant, tag) = match method {
                MethodArg::Scholtes => (Regularization::Scholtes, bench::Method::Scholtes(y0)),
                _ => (
                    Regularization::KanzowSchwartz,
                    bench::Method::KanzowSchwartz(y0),
                ),
            };
            schedule.method = RegularizationKind {
                variant,
                nonneg_x: true,
            };
            schedule.y0_mode = y0;
            (tag, homotopy::run(prog.clone(), kappa, &schedule, &x0)?)
        }
    };
    let feasible = bench::is_feasible(&inst, &result.pair.x, Some(&result.pair.y));
    let certificate = if feasible {
        stationarity::classify(
            prog.as_ref(),
            &result.pair,
            stationarity::DEFAULT_TOL_ACT,
            stationarity::DEFAULT_TOL_RES,
        )
        .ok()
    } else {
        None
    };
    let status = match result.inner_failure {
        Some(s) => format!("{:?}({s:?})", result.status),
        None => format!("{:?}", result.status),
    };
    let output = SolveOutput {
        method: tag.to_string(),
        measure: spec.kind(),
        beta: spec.beta(),
        kappa,
        objective: prog.objective_value(&result.pair.x_vector()),
        feasible,
        cardinality: cardinality(&result.pair.x, bench::SUPPORT_TOL),
        status,
        x: result.pair.x.clone(),
        y: result.pair.y.clone(),
        steps: result.per_step.iter().map(StepSummary::from).collect(),
        stationarity: certificate,
    };
    print_json(&output, out.as_deref())?;
    Ok(match result.inner_failure {
        Some(cardopt::nlp::SolveStatus::NumericalFailure) => 4,
        _ if !feasible => 3,
        _ => 0,
    })
}

fn bench_cmd(config: &Path, out_dir: &Path) -> Result<u8> {
    let config = ExperimentConfig::from_toml(&fs::read_to_string(config)?)?;
    let result = bench::run_experiment(&config)?;
    fs::create_dir_all(out_dir)?;
    bio::save_records(&out_dir.join("records.csv"), &result.records)?;
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))
        .map_err(|e| Error::Parse(e.to_string()))?;
    for s in &result.summary {
        w.serialize(s).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;

    let solved: BTreeSet<_> = result
        .records
        .iter()
        .filter(|r| r.feasible)
        .map(problem)
        .collect();
    for &measure in &config.measures {
        for &beta in &config.betas {
            let group: Vec<RunRecord> = result
                .records
                .iter()
                .filter(|r| r.measure == measure && r.beta == beta && solved.contains(&problem(r)))
                .cloned()
                .collect();
            let unsolved = result
                .records
                .iter()
                .filter(|r| r.measure == measure && r.beta == beta)
                .map(problem)
                .collect::<BTreeSet<_>>()
                .len()
                - group.iter().map(problem).collect::<BTreeSet<_>>().len();
            if unsolved > 0 {
                eprintln!("{measure} β={beta}: {unsolved} problem(s) without a feasible run left out of the profile");
            }
            if group.is_empty() {
                continue;
            }
            let curves = bench::performance_profile(&group)?;
            let name = format!("profile-{measure}-{beta}.csv");
            bench::write_profile(BufWriter::new(File::create(out_dir.join(name))?), &curves)?;
        }
    }
    let infeasible = result.records.iter().filter(|r| !r.feasible).count();
    println!(
        "{} runs, {} infeasible; results in {}",
        result.records.len(),
        infeasible,
        out_dir.display()
    );
    Ok(0)
}

fn problem(r: &RunRecord) -> (String, RiskKind, u64) {
    (r.instance_id.clone(), r.measure, r.beta.to_bits())
}
