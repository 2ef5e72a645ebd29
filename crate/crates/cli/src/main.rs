use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsm_cli::commands::{self, Common, FeigenbaumArgs, Failure, InequalityArgs, RatesArgs, SolveArgs, EXIT_CONFIG};
use dsm_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "dsm", version, about = "Regularized continuous solvers for ill-posed nonlinear equations")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `dsm-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Abort with exit code 2 when the pre-flight checks fail.
    #[arg(long, global = true)]
    strict: bool,
    /// Built-in benchmark, overriding `problem.benchmark`.
    #[arg(long, global = true)]
    seed_bench: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one flow on a benchmark and write the trajectory.
    Solve {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Feigenbaum alpha sweep with cross-method digit acceptance.
    Feigenbaum {
        /// Comma-separated degrees.
        #[arg(long, value_delimiter = ',')]
        z: Option<Vec<f64>>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Run an inequality-lab scenario.
    Inequality {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Fit the convergence rate of a benchmark with a known solution.
    Rates {
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Admissibility table for one or more schedules.
    CheckSchedule,
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(|error| Failure { code: EXIT_CONFIG, error })?;
    if let Some(dir) = cli.out {
        cfg.output.dir = Some(dir);
    }
    if let Some(b) = cli.seed_bench {
        cfg.problem.benchmark = Some(b);
    }
    let common = Common { workers: cli.workers, strict: cli.strict };
    match cli.command {
        Command::Solve { method, t_max } => commands::solve(&cfg, &SolveArgs { method, t_max }, &common, out),
        Command::Feigenbaum { z, n_max } => commands::feigenbaum(&cfg, &FeigenbaumArgs { z, n_max }, &common, out),
        Command::Inequality { scenario, t_max } => commands::inequality(&cfg, &InequalityArgs { scenario, t_max }, out),
        Command::Rates { t_max } => commands::rates(&cfg, &RatesArgs { t_max }, &common, out),
        Command::CheckSchedule => commands::check_schedule(&cfg, &common, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let _ = lock.flush();
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
