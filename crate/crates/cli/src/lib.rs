//! Command-line front end: load a built-in problem or a grid file, run one method or
//! compare several, and write solution JSON and trace CSV.
//!
//! Exit codes: 0 when the run converged, 2 when it did not, 1 on bad input.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod methods;
pub mod output;
pub mod problem;

pub use methods::{run_method, Converged, Failure, Method, MethodRun, NodeReport, RunOptions};
pub use output::{emit_trace, format_table, write_solution, ConfigEcho, RunReport, SolutionFile};
pub use problem::{load_builtin, load_grid, BuiltIn, Loaded, Source};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nestdec", version, about = "Nested decomposition of hierarchical convex programs")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method and write its solution and trace.
    Solve(SolveArgs),
    /// Run several methods on the same problem and print a table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Built-in problem.
    #[arg(long, value_enum, conflicts_with = "grid", required_unless_present = "grid")]
    pub problem: Option<BuiltIn>,
    /// Grid-spec JSON file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Seed for randomized problems.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OptionArgs {
    /// Convergence tolerance on the boundary change (and ADMM residuals).
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Outer-iteration cap (ADMM: iteration cap per level pair).
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// ADMM penalty parameter.
    #[arg(long, default_value_t = 3.0)]
    pub rho: f64,
    /// Boundary-slack penalty for infeasible pins; default scales with each objective.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Run the first-order-only master alongside and roll back on repeats.
    #[arg(long)]
    pub anti_cycling: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub options: OptionArgs,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Solution JSON.
    #[arg(long)]
    pub solution_out: Option<PathBuf>,
    /// Run report JSON (adds wall time to the solution summary).
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated methods; the relative gap is taken against centralized.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "centralized,nested,benders,admm")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub options: OptionArgs,
    /// Reports of every run as JSON.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

impl OptionArgs {
    fn to_options(&self) -> anyhow::Result<RunOptions> {
        anyhow::ensure!(self.epsilon > 0.0 && self.epsilon.is_finite(), "--epsilon must be positive");
        anyhow::ensure!(self.rho > 0.0 && self.rho.is_finite(), "--rho must be positive");
        anyhow::ensure!(self.max_outer != Some(0), "--max-outer must be at least 1");
        if let Some(c) = self.penalty {
            anyhow::ensure!(c >= 0.0 && c.is_finite(), "--penalty must be nonnegative");
        }
        Ok(RunOptions {
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            rho: self.rho,
            penalty: self.penalty,
            anti_cycling: self.anti_cycling,
        })
    }
}

fn load(source: &SourceArgs) -> anyhow::Result<(Loaded, Source)> {
    match (&source.grid, source.problem) {
        (Some(path), _) => Ok((load_grid(path)?, Source::Grid { path: path.clone() })),
        (None, Some(name)) => Ok((load_builtin(name, source.seed), Source::Problem { name, seed: source.seed })),
        (None, None) => anyhow::bail!("one of --problem or --grid is required"),
    }
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .try_init();
    let result = match &cli.command {
        Command::Solve(a) => solve(a, stdout, stderr),
        Command::Compare(a) => compare(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_INPUT
        }
    }
}

fn solve(args: &SolveArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> anyhow::Result<i32> {
    let options = args.options.to_options()?;
    let (problem, source) = load(&args.source)?;
    let config = ConfigEcho { source, options };
    let run = run_method(args.method, &problem, &config.options);

    if let Some(path) = &args.solution_out {
        write_solution(path, &SolutionFile::new(&run, &config))?;
    }
    let report = RunReport::new(&run, &config);
    if let Some(path) = &args.report_out {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    write!(stdout, "{}", format_table(std::slice::from_ref(&report), None))?;

    let converged = match &run.outcome {
        Ok(c) => c,
        Err(f) => {
            writeln!(stderr, "error: {f}")?;
            return Ok(if f.input_error { EXIT_INPUT } else { EXIT_NOT_CONVERGED });
        }
    };
    if let Some(path) = &args.trace_out {
        match &converged.trace {
            Some(t) => emit_trace(t, path)?,
            None => anyhow::bail!("{} keeps no iteration trace; {} not written", args.method.name(), path.display()),
        }
    }
    Ok(EXIT_OK)
}

fn compare(args: &CompareArgs, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    anyhow::ensure!(!args.methods.is_empty(), "--methods is empty");
    let options = args.options.to_options()?;
    let (problem, source) = load(&args.source)?;
    let config = ConfigEcho { source, options };
    let runs: Vec<MethodRun> = args.methods.iter().map(|&m| run_method(m, &problem, &config.options)).collect();
    if let Some(f) = runs.iter().filter_map(|r| r.outcome.as_ref().err()).find(|f| f.input_error) {
        anyhow::bail!("{f}");
    }
    let reference = runs
        .iter()
        .find(|r| r.method == Method::Centralized)
        .and_then(|r| r.outcome.as_ref().ok())
        .map(|c| c.objective);
    let reports: Vec<RunReport> = runs.iter().map(|r| RunReport::new(r, &config)).collect();
    write!(stdout, "{}", format_table(&reports, reference))?;
    for r in &runs {
        if let Err(f) = &r.outcome {
            writeln!(stdout, "{}: {f}", r.method.name())?;
        }
    }
    if let Some(path) = &args.report_out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(EXIT_OK)
}
