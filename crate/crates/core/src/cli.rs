//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 solver did not
//! converge, 3 a diagnostic check failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::batch::{run_grid, BatchReport, BatchSettings, GridSpec};
use crate::benchmarks::{default_method, BenchmarkCase, Family};
use crate::config::{load_case, ProblemConfig};
use crate::diagnostics::{check_solution, fishing_perturbation, Tolerances};
use crate::error::{Result, ShootError};
use crate::integrate::TrajectoryRecord;
use crate::plot::plot_script;
use crate::shooting::Formulation;
use crate::solver::{solve, SolveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "shoot",
    about = "Shooting for optimal control problems with singular arcs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write its trajectory, report and plot script.
    Solve(SolveArgs),
    /// Solve from every point of a grid of initial guesses.
    Batch(BatchArgs),
    /// Check the optimality conditions along a solution.
    Check(CheckArgs),
    /// Write a benchmark as a TOML problem file.
    ExportConfig(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulationArg {
    Classical,
    Extended,
    Full,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Classical => Formulation::Classical,
            FormulationArg::Extended => Formulation::Extended,
            FormulationArg::Full => Formulation::FullUnconstrained,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BatchFormulation {
    Classical,
    Extended,
    Both,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Benchmark name (fishing, regulator, goddard) or TOML problem file.
    problem: String,
    #[arg(long, value_enum, default_value = "extended")]
    formulation: FormulationArg,
    /// Initial guess, comma separated, in unknown order.
    #[arg(long, allow_hyphen_values = true)]
    nu0: Option<String>,
    /// Residual norm at which the solve stops; defaults to the problem's.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap (default 1000).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Print the singular values of the final Jacobian.
    #[arg(long)]
    emit_svd: bool,
    /// Directory for the trajectory CSV, report and plot script.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// Benchmark name or TOML problem file.
    problem: String,
    #[arg(long, value_enum, default_value = "extended")]
    formulation: BatchFormulation,
    /// Grid as `name=lo:hi:count,...`; defaults to the benchmark grid.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Worker threads; defaults to SHOOT_WORKERS or all cores.
    #[arg(long, env = "SHOOT_WORKERS")]
    workers: Option<usize>,
    /// Directory for the per-point CSV files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Benchmark or problem file; re-solved unless --trajectory is given.
    problem: Option<String>,
    /// Trajectory CSV from a previous solve.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "extended")]
    formulation: FormulationArg,
    /// Initial guess for the re-solve, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    nu0: Option<String>,
    /// Also run the cost perturbation check with this relative size.
    #[arg(long)]
    perturb: Option<f64>,
    /// Print `key = value` lines instead of a table.
    #[arg(long)]
    key_value: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Benchmark name or TOML problem file.
    problem: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `args` (program name first), writing to stdout/stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Batch(a) => cmd_batch(&a, out),
        Command::Check(a) => cmd_check(&a, out),
        Command::ExportConfig(a) => cmd_export(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_CONFIG
        }
    }
}

fn parse_nu(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| ShootError::Config(format!("bad --nu0 component '{}'", v.trim())))
        })
        .collect()
}

fn start_point(
    case: &BenchmarkCase,
    formulation: Formulation,
    nu0: Option<&str>,
) -> Result<Vec<f64>> {
    match nu0 {
        Some(s) => parse_nu(s),
        None => case
            .reference(formulation)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| {
                ShootError::Config(format!(
                    "{} has no stored solution to start from; pass --nu0",
                    case.name
                ))
            }),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ShootError {
    ShootError::Io(format!("{}: {e}", path.display()))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.15e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn solve_case(
    case: &BenchmarkCase,
    formulation: Formulation,
    nu0: &[f64],
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> Result<(crate::shooting::ShootingProblem, SolveReport)> {
    let sp = case.shooting(formulation)?;
    if nu0.len() != sp.unknowns() {
        return Err(ShootError::Config(format!(
            "initial guess has {} components, the unknown has {} ({})",
            nu0.len(),
            sp.unknowns(),
            sp.layout.names().join(", ")
        )));
    }
    let mut settings = case.solver_settings();
    if let Some(t) = tol {
        settings.tol = t;
    }
    if let Some(m) = max_iter {
        settings.max_iter = m;
    }
    let rep = solve(&sp, nu0, default_method(formulation), &settings);
    Ok((sp, rep))
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    let case = load_case(&a.problem)?;
    let formulation: Formulation = a.formulation.into();
    let nu0 = start_point(&case, formulation, a.nu0.as_deref())?;
    let (sp, rep) = solve_case(&case, formulation, &nu0, a.tol, a.max_iter)?;
    let names = sp.layout.names();

    writeln!(
        out,
        "problem: {} ({formulation}, structure {})",
        case.name, case.structure
    )?;
    writeln!(
        out,
        "status: {}",
        if rep.converged() {
            "converged"
        } else {
            "not converged"
        }
    )?;
    writeln!(out, "iterations: {}", rep.iterations())?;
    writeln!(out, "residual norm: {:.6e}", rep.final_norm())?;
    for (n, v) in names.iter().zip(rep.solution()) {
        writeln!(out, "{n} = {v:.15e}")?;
    }
    let objective = sp.objective(rep.solution()).ok();
    match objective {
        Some(o) => writeln!(out, "objective: {o:.10}")?,
        None => writeln!(out, "objective: n/a")?,
    }
    if a.emit_svd {
        match &rep.svd {
            Some(svd) => {
                writeln!(out, "singular values: {}", fmt_vec(&svd.singular_values))?;
                writeln!(out, "condition number: {:.6e}", svd.condition)?;
            }
            None => writeln!(out, "singular values: n/a")?,
        }
    }

    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let stem = format!("{}_{formulation}", case.name);
    let report_path = a.out_dir.join(format!("{stem}_report.txt"));
    let mut report = rep.text();
    if let Ok(res) = sp.assemble(rep.solution()) {
        report.push_str("\nresidual blocks:\n");
        report.push_str(&res.report());
    }
    fs::write(&report_path, report).map_err(|e| io_err(&report_path, e))?;
    writeln!(out, "report: {}", report_path.display())?;

    if let Ok(traj) = sp.trajectory(rep.solution()) {
        let csv_name = format!("{stem}_trajectory.csv");
        let csv_path = a.out_dir.join(&csv_name);
        let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
        traj.write_csv(std::io::BufWriter::new(file))?;
        let plot_path = a.out_dir.join(format!("{stem}_plot.py"));
        fs::write(&plot_path, plot_script(&csv_name, &stem, traj.n, traj.m))
            .map_err(|e| io_err(&plot_path, e))?;
        writeln!(out, "trajectory: {}", csv_path.display())?;
        writeln!(out, "plot script: {}", plot_path.display())?;
    }
    Ok(if rep.converged() {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_batch(a: &BatchArgs, out: &mut dyn Write) -> Result<i32> {
    let case = load_case(&a.problem)?;
    let grid = GridSpec::parse(a.grid.as_deref().unwrap_or(&case.grid))?;
    let formulations: &[Formulation] = match a.formulation {
        BatchFormulation::Classical => &[Formulation::Classical],
        BatchFormulation::Extended => &[Formulation::Extended],
        BatchFormulation::Both => &[Formulation::Classical, Formulation::Extended],
    };
    let mut settings = BatchSettings::for_case(&case);
    settings.workers = a.workers;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let mut reports: Vec<BatchReport> = Vec::new();
    for &f in formulations {
        let rep = run_grid(&case, f, &grid, case.reference(f), &settings)?;
        let path = a.out_dir.join(format!("{}_{f}_batch.csv", case.name));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        rep.write_csv(std::io::BufWriter::new(file))?;
        writeln!(
            out,
            "points: {} ({}), csv: {}",
            rep.points.len(),
            rep.grid,
            path.display()
        )?;
        reports.push(rep);
    }
    writeln!(out, "{}", BatchReport::summary_header())?;
    for rep in &reports {
        writeln!(out, "{}", rep.summary())?;
    }
    Ok(EXIT_OK)
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let formulation: Formulation = a.formulation.into();
    let Some(name) = a.problem.as_deref() else {
        if let Some(path) = &a.trajectory {
            // Validate the file first so a corrupt file is reported as such.
            let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
            TrajectoryRecord::read_csv(file)?;
        }
        return Err(ShootError::Config(
            "check needs a problem name or config file".into(),
        ));
    };
    let case = load_case(name)?;
    let traj = match &a.trajectory {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
            TrajectoryRecord::read_csv(file)?
        }
        None => {
            let nu0 = start_point(&case, formulation, a.nu0.as_deref())?;
            let (sp, rep) = solve_case(&case, formulation, &nu0, None, None)?;
            if !rep.converged() {
                writeln!(
                    out,
                    "solve did not converge (residual {:.3e})",
                    rep.final_norm()
                )?;
                return Ok(EXIT_NOT_CONVERGED);
            }
            sp.trajectory(rep.solution())?
        }
    };
    let report = check_solution(
        &case.problem,
        &case.structure,
        &traj,
        &Tolerances::default(),
    );
    if a.key_value {
        write!(out, "{}", report.key_values())?;
    } else {
        write!(out, "{}", report.table())?;
    }
    let mut ok = report.passed();
    if let Some(mu) = a.perturb {
        let Family::Fishing(params) = &case.family else {
            return Err(ShootError::Config(
                "the perturbation check is available for fishing only".into(),
            ));
        };
        let calibration = mu / 10.0;
        let res = fishing_perturbation(params, formulation, mu, calibration)?;
        writeln!(out, "{}", res.line())?;
        ok &= res.passed;
    }
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<i32> {
    let case = load_case(&a.problem)?;
    let text = ProblemConfig::from_case(&case).to_toml()?;
    match &a.out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| io_err(path, e))?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => write!(out, "{text}")?,
    }
    Ok(EXIT_OK)
}
