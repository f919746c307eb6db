//! `graph-vortex`: solve, continue and analyze vortex equations on graphs.
//!
//! Exit status: 0 success, 2 invalid input, 3 numerical failure
//! (non-convergence, no solution, failed checks), 4 internal fault.

mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Context, MethodArg, Outcome};
use error::CliError;
use report::{emit, to_json, Report, CONVENTIONS};

#[derive(Parser)]
#[command(name = "graph-vortex", version, about = "Vortex solutions of the self-dual Chern-Simons equation on weighted graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Common {
    /// Instance file (JSON with `vertices`, `edges`, `vortices`).
    #[arg(long)]
    instance: PathBuf,
    /// Residual tolerance (default 1e-10); for `lambda-c`, the bracket width (default 1e-3).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Seed for multistart perturbations and randomized checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include wall-clock time in the report (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at one coupling.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
    },
    /// Bracket the critical coupling by bisection.
    LambdaC {
        #[command(flatten)]
        common: Common,
    },
    /// Follow the minimal branch over a coupling range.
    Continuation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda_min: f64,
        #[arg(long)]
        lambda_max: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
    /// Second solution by a numerical mountain pass.
    MountainPass {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        /// Path nodes.
        #[arg(long, default_value_t = 16)]
        points: usize,
    },
    /// Hessian spectrum at the minimal solution.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
    },
    /// Re-check a solution stored in a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common, .. }
            | Command::LambdaC { common }
            | Command::Continuation { common, .. }
            | Command::MountainPass { common, .. }
            | Command::Spectrum { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GRAPH_VORTEX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation("BAD_THREADS", format!("GRAPH_VORTEX_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::internal("THREAD_POOL", e.to_string()))
}

fn dispatch(cmd: &Command, ctx: &Context) -> Result<Outcome, CliError> {
    match cmd {
        Command::Solve { lambda, method, .. } => commands::solve(ctx, *lambda, *method),
        Command::LambdaC { .. } => commands::lambda_c(ctx),
        Command::Continuation { lambda_min, lambda_max, steps, .. } => commands::continuation(ctx, *lambda_min, *lambda_max, *steps),
        Command::MountainPass { lambda, points, .. } => commands::mountain(ctx, *lambda, *points),
        Command::Spectrum { lambda, .. } => commands::spectrum(ctx, *lambda),
        Command::Verify { report, .. } => commands::verify(ctx, report),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    configure_threads()?;
    let common = cli.command.common();
    let ctx = Context::load(&common.instance, common.tol, common.max_iter, common.seed, common.format == Format::Csv)?;
    let outcome = dispatch(&cli.command, &ctx)?;
    let text = match (&outcome.csv, common.format) {
        (Some(csv), Format::Csv) => csv.clone(),
        _ => to_json(&Report {
            command: outcome.command,
            instance: common.instance.display().to_string(),
            config: outcome.config,
            conventions: CONVENTIONS,
            result: outcome.result,
            timing_seconds: common.timing.then(|| start.elapsed().as_secs_f64()),
        })?,
    };
    emit(&text, common.output.as_deref())?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let diag = serde_json::json!({ "error": { "code": e.code, "message": e.message, "exit_code": e.exit } });
        eprintln!("{diag}");
        std::process::exit(e.exit);
    }
}
