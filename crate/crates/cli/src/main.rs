//! Command-line front end for the quadbranch solver library.
//!
//! Three subcommands: `solve` runs one problem on one grid and prints its
//! error norms, `study` sweeps a doubling sequence of grids and emits a CSV
//! or JSON convergence report, and `oracle` estimates a single solution
//! value by Monte Carlo simulation of the underlying diffusion.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! unknown problems, scheme/boundary mismatches), 3 for numeric failures
//! inside a solve.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use quadbranch::{
    builtin_problem, convergence_rates, error_norms, make_grid, mc_oracle, solve, solve_lisl,
    ErrorReport, Grid, LislBoundary, LislConfig, ProblemSpec, Scheme, Solution, SolverError,
};

/// Largest grid a study runs without the explicit --full opt-in.
const DEFAULT_GRID_CAP: usize = 160;

#[derive(Parser)]
#[command(name = "quadbranch", version, about = "Convergence studies for wide-stencil parabolic schemes", long_about = None)]
struct Cli {
    /// Worker threads for node-level parallelism (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem on a single grid and print its error norms
    Solve(SolveArgs),
    /// Run a grid refinement study and emit a CSV or JSON report
    Study(StudyArgs),
    /// Estimate one solution value by Monte Carlo simulation
    Oracle(OracleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    /// Explicit wide-stencil scheme with exact wall stopping (Dirichlet)
    Alg1,
    /// Wide-stencil scheme with implicit boundary-layer coupling (Dirichlet)
    Alg2,
    /// Wide-stencil scheme with reflected branches (Neumann)
    Alg3,
    /// Wide-stencil scheme on the torus (periodic)
    Alg4,
    /// Semi-Lagrangian baseline reading exact values outside the domain
    LislExact,
    /// Semi-Lagrangian baseline extrapolating from the nearest cell
    LislExtrap,
}

enum Engine {
    Grid(Scheme),
    Lisl(LislBoundary),
}

impl SchemeArg {
    fn engine(self) -> Engine {
        match self {
            SchemeArg::Alg1 => Engine::Grid(Scheme::NonUniform),
            SchemeArg::Alg2 => Engine::Grid(Scheme::Uniform),
            SchemeArg::Alg3 => Engine::Grid(Scheme::Reflective),
            SchemeArg::Alg4 => Engine::Grid(Scheme::Periodic),
            SchemeArg::LislExact => Engine::Lisl(LislBoundary::Exact),
            SchemeArg::LislExtrap => Engine::Lisl(LislBoundary::Extrapolation),
        }
    }

    fn is_lisl(self) -> bool {
        matches!(self, SchemeArg::LislExact | SchemeArg::LislExtrap)
    }

    fn name(self) -> &'static str {
        match self {
            SchemeArg::Alg1 => "alg1",
            SchemeArg::Alg2 => "alg2",
            SchemeArg::Alg3 => "alg3",
            SchemeArg::Alg4 => "alg4",
            SchemeArg::LislExact => "lisl-exact",
            SchemeArg::LislExtrap => "lisl-extrap",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BoundaryArg {
    /// Read the exact solution at points the stencil pushes outside
    Exact,
    /// Extrapolate outside points from the nearest interior cell
    Extrap,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in problem to solve
    #[arg(long)]
    problem: String,

    /// Scheme to run
    #[arg(long, value_enum)]
    scheme: SchemeArg,

    /// Cells per spatial axis on the (coarsest) grid
    #[arg(long, default_value_t = 20)]
    m: usize,

    /// Time steps on the (coarsest) grid; defaults to M for the grid
    /// schemes and to dt-ratio * M for the semi-Lagrangian baseline
    #[arg(long)]
    n: Option<usize>,

    /// Stencil radius for the semi-Lagrangian baseline; defaults to sqrt(2h)
    #[arg(long)]
    lisl_k: Option<f64>,

    /// Time steps per spatial cell for the semi-Lagrangian baseline
    /// (default 4, i.e. dt = h/4)
    #[arg(long)]
    lisl_dt_ratio: Option<usize>,

    /// Boundary treatment for the semi-Lagrangian baseline; must agree
    /// with the chosen scheme
    #[arg(long, value_enum)]
    lisl_boundary: Option<BoundaryArg>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Refinement levels; M and N double at each level
    #[arg(long, default_value_t = 4)]
    levels: usize,

    /// Allow grids beyond M = 160 (the full table sweep)
    #[arg(long)]
    full: bool,

    /// Report format
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,

    /// Write the report to this path instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Built-in problem to sample
    #[arg(long)]
    problem: String,

    /// Query point x
    #[arg(long, default_value_t = 0.5)]
    x: f64,

    /// Query point y
    #[arg(long, default_value_t = 0.5)]
    y: f64,

    /// Query time
    #[arg(long, default_value_t = 0.0)]
    t: f64,

    /// Simulated paths
    #[arg(long, default_value_t = 100_000)]
    paths: usize,

    /// Euler sub-steps per path
    #[arg(long, default_value_t = 200)]
    substeps: usize,

    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {err}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(solver) = cause.downcast_ref::<SolverError>() {
            return if solver.is_configuration() { 2 } else { 3 };
        }
    }
    2
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve(args) => run_solve(args),
        Command::Study(args) => run_study(args),
        Command::Oracle(args) => run_oracle(args),
    }
}

/// One grid of a refinement plan.
struct Level {
    m: usize,
    n: usize,
}

fn validate_scheme_flags(run: &RunArgs) -> Result<()> {
    if !run.scheme.is_lisl() {
        if run.lisl_k.is_some() || run.lisl_dt_ratio.is_some() || run.lisl_boundary.is_some() {
            bail!("--lisl-* flags only apply to the lisl-exact and lisl-extrap schemes");
        }
        return Ok(());
    }
    if let Some(flag) = run.lisl_boundary {
        let implied = match run.scheme {
            SchemeArg::LislExact => BoundaryArg::Exact,
            _ => BoundaryArg::Extrap,
        };
        if flag != implied {
            bail!(
                "--lisl-boundary {} conflicts with scheme {}",
                match flag {
                    BoundaryArg::Exact => "exact",
                    BoundaryArg::Extrap => "extrap",
                },
                run.scheme.name()
            );
        }
    }
    if run.lisl_dt_ratio == Some(0) {
        bail!("--lisl-dt-ratio must be at least 1");
    }
    Ok(())
}

fn plan_levels(run: &RunArgs, levels: usize) -> Result<Vec<Level>> {
    if !(1..=16).contains(&levels) {
        bail!("--levels must lie in 1..=16, got {levels}");
    }
    if run.n.is_some() && run.lisl_dt_ratio.is_some() {
        bail!("--n and --lisl-dt-ratio both fix the time step; pass only one");
    }
    let time_ratio = if run.scheme.is_lisl() {
        run.lisl_dt_ratio.unwrap_or(4)
    } else {
        1
    };
    let mut plan = Vec::with_capacity(levels);
    for doubling in 0..levels {
        let m = run
            .m
            .checked_shl(doubling as u32)
            .with_context(|| format!("grid size overflows at level {doubling}"))?;
        let n = match run.n {
            Some(base) => base
                .checked_shl(doubling as u32)
                .with_context(|| format!("step count overflows at level {doubling}"))?,
            None => m * time_ratio,
        };
        plan.push(Level { m, n });
    }
    Ok(plan)
}

fn solve_level(problem: &ProblemSpec, run: &RunArgs, level: &Level) -> Result<(Grid, Solution)> {
    let grid = make_grid(
        problem.domain(),
        level.m,
        level.m,
        level.n,
        problem.horizon(),
    )?;
    let solution = match run.scheme.engine() {
        Engine::Grid(scheme) => solve(problem, &grid, scheme)?,
        Engine::Lisl(mode) => {
            let mut config = LislConfig::for_grid(&grid, mode);
            if let Some(k) = run.lisl_k {
                config.k = k;
            }
            solve_lisl(problem, &grid, &config)?
        }
    };
    Ok((grid, solution))
}

fn run_solve(args: SolveArgs) -> Result<()> {
    let run = args.run;
    validate_scheme_flags(&run)?;
    let problem = builtin_problem(&run.problem)?;
    let level = plan_levels(&run, 1)?.remove(0);
    let (grid, solution) = solve_level(&problem, &run, &level)?;
    println!(
        "problem {}, scheme {}, grid {}x{}, steps {}",
        problem.name(),
        run.scheme.name(),
        grid.m1(),
        grid.m2(),
        grid.steps()
    );
    if problem.has_exact() {
        let (linf, l2) = error_norms(&solution.field, &problem, &grid)?;
        println!("err_linf {}, err_l2 {}", sci(linf), sci(l2));
    } else {
        println!(
            "field min {}, max magnitude {}",
            sci(solution.field.min_value()),
            sci(solution.field.max_abs())
        );
    }
    Ok(())
}

fn run_study(args: StudyArgs) -> Result<()> {
    let run = args.run;
    validate_scheme_flags(&run)?;
    let problem = builtin_problem(&run.problem)?;
    let plan = plan_levels(&run, args.levels)?;
    if !args.full {
        if let Some(level) = plan.iter().find(|level| level.m > DEFAULT_GRID_CAP) {
            bail!(
                "level M = {} exceeds the default cap of {DEFAULT_GRID_CAP}; pass --full to run the large grids",
                level.m
            );
        }
    }
    let mut rows = Vec::with_capacity(plan.len());
    for level in &plan {
        let (grid, solution) = solve_level(&problem, &run, level)?;
        let (linf, l2) = error_norms(&solution.field, &problem, &grid)?;
        // snap the errors to their printed form before computing rates, so
        // anyone recomputing rates from the emitted error columns lands on
        // the emitted rate columns
        rows.push(ErrorReport::new(&grid, snap(linf), snap(l2)));
    }
    let rows = convergence_rates(rows)?;
    let report = match args.format {
        FormatArg::Csv => render_csv(&rows, run.scheme.is_lisl()),
        FormatArg::Json => render_json(&rows, run.scheme.is_lisl()),
    };
    match &args.out {
        Some(path) => fs::write(path, &report)
            .with_context(|| format!("could not write the report to {}", path.display()))?,
        None => print!("{report}"),
    }
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<()> {
    let problem = builtin_problem(&args.problem)?;
    let estimate = mc_oracle(
        &problem,
        args.x,
        args.y,
        args.t,
        args.paths,
        args.substeps,
        args.seed,
    )?;
    println!(
        "problem {}, point ({}, {}, {})",
        problem.name(),
        sci(args.x),
        sci(args.y),
        sci(args.t)
    );
    println!(
        "paths {}, substeps {}, seed {}",
        estimate.paths, args.substeps, estimate.seed
    );
    println!("mean {}", sci(estimate.mean));
    println!("std_error {}", sci(estimate.std_error));
    if let Some(exact) = problem.exact(args.x, args.y, args.t) {
        println!("exact {}", sci(exact));
        if estimate.std_error > 0.0 {
            println!("z {}", sci((estimate.mean - exact) / estimate.std_error));
        }
    }
    Ok(())
}

/// Scientific notation with 6 significant digits, e.g. 5.47030e-2.
fn sci(value: f64) -> String {
    format!("{value:.5e}")
}

/// The value a reader of the report sees: rounded through the 6-digit form.
fn snap(value: f64) -> f64 {
    sci(value).parse().expect("formatted float")
}

fn rate_cell(rate: Option<f64>) -> String {
    rate.map(sci).unwrap_or_default()
}

fn render_csv(rows: &[ErrorReport], lisl: bool) -> String {
    let mut out = String::new();
    if lisl {
        out.push_str("M1,M2,N,err_linf,rate_linf\n");
        for row in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.m1,
                row.m2,
                row.n,
                sci(row.err_linf),
                rate_cell(row.rate_linf)
            );
        }
    } else {
        out.push_str("M1,M2,N,err_linf,rate_linf,err_l2,rate_l2\n");
        for row in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.m1,
                row.m2,
                row.n,
                sci(row.err_linf),
                rate_cell(row.rate_linf),
                sci(row.err_l2),
                rate_cell(row.rate_l2)
            );
        }
    }
    out
}

fn render_json(rows: &[ErrorReport], lisl: bool) -> String {
    let json_rate = |rate: Option<f64>| rate.map(sci).unwrap_or_else(|| "null".to_string());
    let mut out = String::from("[\n");
    for (i, row) in rows.iter().enumerate() {
        let sep = if i + 1 == rows.len() { "" } else { "," };
        if lisl {
            let _ = writeln!(
                out,
                "  {{\"M1\": {}, \"M2\": {}, \"N\": {}, \"err_linf\": {}, \"rate_linf\": {}}}{sep}",
                row.m1,
                row.m2,
                row.n,
                sci(row.err_linf),
                json_rate(row.rate_linf)
            );
        } else {
            let _ = writeln!(
                out,
                "  {{\"M1\": {}, \"M2\": {}, \"N\": {}, \"err_linf\": {}, \"rate_linf\": {}, \"err_l2\": {}, \"rate_l2\": {}}}{sep}",
                row.m1,
                row.m2,
                row.n,
                sci(row.err_linf),
                json_rate(row.rate_linf),
                sci(row.err_l2),
                json_rate(row.rate_l2)
            );
        }
    }
    out.push_str("]\n");
    out
}
