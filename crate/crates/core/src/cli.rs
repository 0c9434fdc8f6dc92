//! Command-line front end: `gen`, `solve`, `sweep` and `diagnose`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{self, DiagnoseOptions, Reference, ReferenceMonitor, DEFAULT_BURN_IN, DEFAULT_REF_TOL};
use crate::error::{AdmmError, Result};
use crate::generators::GeneratorSpec;
use crate::io::{read_json, read_problem, write_json, ProblemFile, SolveSummary, StatesFile};
use crate::problem::Problem;
use crate::solvers::{run_with_monitor, AlphaPolicy, RunResult, SolverConfig, Variant};
use crate::trace::write_trace_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "blockadmm", version, about = "Multi-block ADMM solvers and convergence diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a problem instance as JSON.
    Gen(GenArgs),
    /// Solve a problem and write the trace and a result summary.
    Solve(SolveArgs),
    /// Run a grid of dual step sizes and variants.
    Sweep(SweepArgs),
    /// Check the descent, gap and rate properties of a run.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    #[value(name = "l1_kblock")]
    L1Kblock,
    #[value(name = "group_l2")]
    GroupL2,
    Lasso,
    Consensus,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Number of blocks (local copies for consensus).
    #[arg(long = "K", default_value_t = 30)]
    k: usize,
    /// Number of coupling rows.
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long = "n-k", default_value_t = 3)]
    n_k: usize,
    /// Box lower bound.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    a: f64,
    /// Box upper bound.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
    #[arg(long = "n-obs", default_value_t = 40)]
    n_obs: usize,
    #[arg(long = "n-feat", default_value_t = 60)]
    n_feat: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    cols: usize,
    #[arg(long, default_value_t = 0.1)]
    w: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GenArgs {
    fn spec(&self) -> GeneratorSpec {
        match self.family {
            Family::L1Kblock => GeneratorSpec::L1Kblock {
                m: self.m,
                k: self.k,
                a: self.a,
                b: self.b,
                seed: self.seed,
            },
            Family::GroupL2 => GeneratorSpec::GroupL2 {
                m: self.m,
                k: self.k,
                n_k: self.n_k,
                a: self.a,
                b: self.b,
                seed: self.seed,
            },
            Family::Lasso => GeneratorSpec::Lasso {
                n_obs: self.n_obs,
                n_feat: self.n_feat,
                lambda: self.lambda,
                noise: self.noise,
                seed: self.seed,
            },
            Family::Consensus => GeneratorSpec::Consensus {
                k: self.k,
                rows: self.rows,
                cols: self.cols,
                w: self.w,
                seed: self.seed,
            },
        }
    }
}

/// `auto` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
enum AutoOr {
    Auto,
    Value(f64),
}

fn parse_auto_or(s: &str) -> std::result::Result<AutoOr, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(AutoOr::Auto);
    }
    s.parse::<f64>()
        .map(AutoOr::Value)
        .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// gs | prox | jacobi | jacobi-unsafe
    #[arg(long, default_value = "gs", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Dual step size, or `auto` for adaptive halving.
    #[arg(long, default_value = "auto", value_parser = parse_auto_or)]
    alpha: AutoOr,
    /// Proximal weight, or `auto` for 1.01·ν.
    #[arg(long, default_value = "auto", value_parser = parse_auto_or)]
    beta: AutoOr,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 5000)]
    max_iters: usize,
    /// Accepted for interface uniformity; the solvers are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run exact-minimization variants even when some E_k is rank deficient.
    #[arg(long = "allow-rank-deficient")]
    allow_rank_deficient: bool,
}

impl SolverArgs {
    fn config(&self, keep_states: bool) -> SolverConfig {
        SolverConfig {
            variant: self.variant,
            rho: self.rho,
            alpha: match self.alpha {
                AutoOr::Auto => AlphaPolicy::Auto,
                AutoOr::Value(a) => AlphaPolicy::Fixed(a),
            },
            beta: match self.beta {
                AutoOr::Auto => None,
                AutoOr::Value(b) => Some(b),
            },
            tol_outer: self.tol,
            max_iters: self.max_iters,
            allow_rank_deficient: self.allow_rank_deficient,
            keep_states,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Result JSON output; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Every iterate as JSON, for `diagnose --states`.
    #[arg(long)]
    states: Option<PathBuf>,
    /// Fill the gap columns of the trace for a fixed α too.
    #[arg(long)]
    gaps: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long = "alpha-grid", value_delimiter = ',', required = true)]
    alpha_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gs", value_parser = parse_variant)]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value = "auto", value_parser = parse_auto_or)]
    beta: AutoOr,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 5000)]
    max_iters: usize,
    #[arg(long = "allow-rank-deficient")]
    allow_rank_deficient: bool,
    /// Summary CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Iterates written by `solve --states`; without it the run is replayed
    /// from the solver flags.
    #[arg(long)]
    states: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Gap-annotated trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// DiagnosticsReport JSON output; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-check CSV output.
    #[arg(long)]
    checks: Option<PathBuf>,
    #[arg(long = "lipschitz-pairs", default_value_t = 20)]
    lipschitz_pairs: usize,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            match writeln!(io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let problem = args.spec().generate()?;
    emit_json(args.out.as_deref(), &ProblemFile::from_problem(&problem)?)?;
    Ok(EXIT_OK)
}

/// Runs with a reference monitor when α is automatic or gaps are requested.
fn solve_with_gaps(
    problem: &Problem,
    config: &SolverConfig,
    want_gaps: bool,
    reference: Option<&Reference>,
) -> Result<(RunResult, Option<Reference>)> {
    if !want_gaps && matches!(config.alpha, AlphaPolicy::Fixed(_)) {
        return Ok((run_with_monitor(problem, config, None, None)?, None));
    }
    config.validate(problem)?;
    let reference = match reference {
        Some(r) => r.clone(),
        None => diagnostics::reference_solution(problem, config.rho, DEFAULT_REF_TOL)?,
    };
    let mut monitor = ReferenceMonitor::with_reference(problem, config.rho, reference.clone());
    let result = run_with_monitor(problem, config, None, Some(&mut monitor))?;
    Ok((result, Some(reference)))
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let problem = read_problem(&args.problem)?;
    let config = args.solver.config(args.states.is_some());
    let (result, _) = solve_with_gaps(&problem, &config, args.gaps, None)?;
    if let Some(path) = &args.trace {
        write_trace_csv(File::create(path)?, &result.trace)?;
    }
    if let Some(path) = &args.states {
        write_json(
            path,
            &StatesFile {
                states: result.states.clone().unwrap_or_default(),
                alphas: result.alphas.clone(),
            },
        )?;
    }
    emit_json(args.report.as_deref(), &SolveSummary::from_run(&problem, &result))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    variant: String,
    alpha: f64,
    iterations: Option<usize>,
    termination: String,
    monotone: bool,
    mu: Option<f64>,
    r2: Option<f64>,
    final_objective: Option<f64>,
    final_feas: Option<f64>,
}

fn sweep_cell(problem: &Problem, config: &SolverConfig, reference: &Reference) -> SweepRow {
    let mut row = SweepRow {
        variant: config.variant.to_string(),
        alpha: match config.alpha {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::Auto => f64::NAN,
        },
        iterations: None,
        termination: "failed".into(),
        monotone: false,
        mu: None,
        r2: None,
        final_objective: None,
        final_feas: None,
    };
    let mut monitor = ReferenceMonitor::with_reference(problem, config.rho, reference.clone());
    let Ok(result) = run_with_monitor(problem, config, None, Some(&mut monitor)) else {
        return row;
    };
    let fit = diagnostics::estimate_rate(&result.trace, DEFAULT_BURN_IN, 100.0 * reference.tol_ref).ok();
    let summary = SolveSummary::from_run(problem, &result);
    row.iterations = Some(summary.iterations);
    row.termination = serde_json::to_value(summary.termination)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    row.monotone = result.gap_increases == 0;
    row.mu = fit.map(|f| f.mu);
    row.r2 = fit.map(|f| f.r2);
    row.final_objective = Some(summary.objective);
    row.final_feas = Some(summary.feas);
    row
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let problem = read_problem(&args.problem)?;
    let reference = diagnostics::reference_solution(&problem, args.rho, DEFAULT_REF_TOL)?;
    let cells: Vec<SolverConfig> = args
        .variants
        .iter()
        .flat_map(|&variant| {
            args.alpha_grid.iter().map(move |&alpha| SolverConfig {
                variant,
                rho: args.rho,
                alpha: AlphaPolicy::Fixed(alpha),
                beta: match args.beta {
                    AutoOr::Auto => None,
                    AutoOr::Value(b) => Some(b),
                },
                tol_outer: args.tol,
                max_iters: args.max_iters,
                allow_rank_deficient: args.allow_rank_deficient,
                ..SolverConfig::default()
            })
        })
        .collect();
    for cell in &cells {
        cell.validate(&problem)?;
    }
    // Collecting an indexed parallel iterator keeps grid order.
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|cfg| sweep_cell(&problem, cfg, &reference))
        .collect();
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<i32> {
    let problem = read_problem(&args.problem)?;
    let config = args.solver.config(true);
    let reference = diagnostics::reference_solution(&problem, config.rho, DEFAULT_REF_TOL)?;
    let (states, alphas) = match &args.states {
        Some(path) => {
            let file: StatesFile = read_json(path)?;
            (file.states, file.alphas)
        }
        None => {
            let (result, _) = solve_with_gaps(&problem, &config, false, Some(&reference))?;
            (result.states.unwrap_or_default(), result.alphas)
        }
    };
    if states.len() < 2 {
        return Err(AdmmError::Insufficient(
            "the run has no transitions to diagnose (converged at the start?)".into(),
        ));
    }
    let beta = config.validate(&problem)?;
    let options = DiagnoseOptions {
        lipschitz_pairs: args.lipschitz_pairs,
        seed: args.solver.seed,
        ..DiagnoseOptions::default()
    };
    let diagnosis = diagnostics::diagnose(
        &problem,
        &states,
        Some(&alphas),
        config.variant,
        config.rho,
        beta,
        Some(reference),
        &options,
    )?;
    if let Some(path) = &args.trace {
        let trace: Vec<_> = diagnosis.records.iter().map(|r| r.trace_record()).collect();
        write_trace_csv(File::create(path)?, &trace)?;
    }
    if let Some(path) = &args.checks {
        diagnostics::write_check_csv(File::create(path)?, &diagnosis.rows)?;
    }
    emit_json(args.report.as_deref(), &diagnosis.report)?;
    Ok(if diagnosis.report.total_violations() > 0 {
        EXIT_VIOLATION
    } else {
        EXIT_OK
    })
}
