use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpec_svc::checks::{run_checks, CheckConfig};
use mpec_svc::report::{self, PipelineStatus};
use mpec_svc::{Error, Preconditioner, RunConfig};

/// Selects the cost parameter of an L1-loss linear SVM by solving the
/// cross-validation bilevel problem with a smoothed Newton continuation.
#[derive(Parser)]
#[command(name = "mpec-svc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for report.json, trace.csv, convergence.csv and grid.csv.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print the full result as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuation and report the selected C.
    Solve(SolveArgs),
    /// Cross-validation error of the dual solver over a log-spaced grid of C.
    Grid(GridArgs),
    /// Derivative and structure checks at a random point of the instance.
    Check(CheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// LIBSVM-format data file.
    #[arg(long)]
    data: PathBuf,
    /// Size of the cross-validation set; the rest is the test set.
    #[arg(long, default_value_t = 150)]
    p1: usize,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale every feature to [-1, 1] first.
    #[arg(long)]
    scale_features: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecondArg {
    None,
    Jacobi,
    Nullspace,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    eps0: f64,
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps_min: f64,
    /// Starting value of C.
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    /// Armijo constant.
    #[arg(long, default_value_t = 1e-4)]
    sigma: f64,
    /// Backtracking factor.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 200)]
    newton_maxit: usize,
    /// Tolerance on ‖F‖, tightened to 1e-2·ε² for small ε.
    #[arg(long, default_value_t = 1e-8)]
    ftol: f64,
    #[arg(long, default_value_t = 1e-10)]
    lin_rtol: f64,
    /// BiCGStab iteration cap (default: ten times the system size).
    #[arg(long)]
    lin_maxit: Option<usize>,
    #[arg(long, value_enum, default_value_t = PrecondArg::Nullspace)]
    precond: PrecondArg,
    /// Disable the reduced-space fallback for failed subproblems.
    #[arg(long)]
    no_fallback: bool,
    /// Also write problem.json with dimensions and sparsity.
    #[arg(long)]
    dump_problem: bool,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1e-3)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e3)]
    grid_max: f64,
    #[arg(long, default_value_t = 25)]
    grid_points: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    point_seed: u64,
    /// Entries of the random point are drawn from [-s, 1.5·s].
    #[arg(long, default_value_t = 1.0)]
    point_scale: f64,
}

/// Exit status for each error class: 2 input, 3 assembly, 4 solver.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Label { .. }
        | Error::FeatureOrder { .. }
        | Error::LabelSet(_)
        | Error::Split(_)
        | Error::Config(_) => 2,
        Error::Assembly(_) | Error::Dimension { .. } => 3,
        _ => 4,
    }
}

fn base_config(d: &DataArgs) -> RunConfig {
    let mut cfg = RunConfig::new(d.data.to_string_lossy(), d.p1, d.folds, d.seed);
    cfg.scale_features = d.scale_features;
    cfg
}

fn solve_config(a: &SolveArgs) -> RunConfig {
    let mut cfg = base_config(&a.data);
    cfg.outer.eps0 = a.eps0;
    cfg.outer.kappa = a.kappa;
    cfg.outer.eps_min = a.eps_min;
    cfg.outer.initial_c = a.c0;
    let n = &mut cfg.newton;
    n.sigma = a.sigma;
    n.rho = a.rho;
    n.max_iters = a.newton_maxit;
    n.f_tol = a.ftol;
    n.krylov.rel_tol = a.lin_rtol;
    n.krylov.max_iters = a.lin_maxit;
    n.reduced_fallback = !a.no_fallback;
    n.precond = match a.precond {
        PrecondArg::None => Preconditioner::None,
        PrecondArg::Jacobi => Preconditioner::Jacobi,
        PrecondArg::Nullspace => Preconditioner::Nullspace,
    };
    cfg
}

fn cmd_solve(a: &SolveArgs, out: &Path, json: bool, quiet: bool) -> Result<u8, Error> {
    let cfg = solve_config(a);
    cfg.validate()?;
    let instance = report::build_instance::<f64>(&cfg)?;
    if a.dump_problem {
        report::write_problem_dump(out, &instance)?;
    }
    let res = report::solve_instance(instance, &cfg)?;
    let r = &res.report;
    report::write_solve_artifacts(out, r, &res.run)?;
    if json {
        println!("{}", report::report_json(r)?);
    } else if !quiet {
        println!("status      {:?}", r.status);
        println!("C           {:.6e} (rescaled {:.6e})", r.C_raw, r.C_hat);
        println!("E_cv        {:.2}%", r.E_cv);
        match r.E_te {
            Some(e) => println!("E_te        {e:.2}%"),
            None => println!("E_te        n/a (empty test set)"),
        }
        println!(
            "iterations  {} outer, {} inner, {} linear",
            r.outer_iters, r.inner_iters_total, r.lin_iters_total
        );
        println!("final       eps {:.3e}, |F| {:.3e}", r.final_eps, r.final_norm_f);
        println!("written to  {}", out.display());
    }
    Ok(if r.status == PipelineStatus::Failed { 4 } else { 0 })
}

fn cmd_grid(a: &GridArgs, out: &Path, json: bool, quiet: bool) -> Result<u8, Error> {
    let mut cfg = base_config(&a.data);
    cfg.grid.min = a.grid_min;
    cfg.grid.max = a.grid_max;
    cfg.grid.points = a.grid_points;
    let table = report::grid::<f64>(&cfg)?;
    report::write_grid_artifact(out, &table)?;
    if json {
        println!("{}", report::grid_json(&table)?);
    } else if !quiet {
        for row in &table.rows {
            println!("C = {:<12.4e} E_cv = {:.2}%", row.c, row.e_cv);
        }
        let best = table.best_row();
        println!("best C = {:.4e} with E_cv = {:.2}%", best.c, best.e_cv);
    }
    Ok(0)
}

fn cmd_check(a: &CheckArgs, json: bool, quiet: bool) -> Result<u8, Error> {
    let cfg = base_config(&a.data);
    let instance = report::build_instance::<f64>(&cfg)?;
    let ccfg = CheckConfig {
        eps: a.eps,
        point_seed: a.point_seed,
        scale: a.point_scale,
        ..CheckConfig::default()
    };
    let results = run_checks(&instance.problem, &ccfg)?;
    if json {
        println!("{}", report::checks_json(&results)?);
    } else if !quiet {
        for c in &results {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("{tag} {:<26} {:.3e} (tol {:.1e})", c.name, c.value, c.tol);
        }
    }
    Ok(if results.iter().all(|c| c.passed) { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match &cli.command {
        Command::Solve(a) => cmd_solve(a, &cli.out, cli.json, cli.quiet),
        Command::Grid(a) => cmd_grid(a, &cli.out, cli.json, cli.quiet),
        Command::Check(a) => cmd_check(a, cli.json, cli.quiet),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
