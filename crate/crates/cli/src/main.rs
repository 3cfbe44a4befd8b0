//! `nearfield`: solve scenes, check receivers and run the numerical experiments.
//!
//! Exit status: 0 when every check passes, 1 for invalid input, 2 when a
//! check or the solver fails (the report says which).

mod commands;
mod error;
mod experiments;
mod output;
mod scene;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Counterexample, Overrides};
use error::CliError;
use experiments::Experiment;
use output::Sink;

#[derive(Debug, Parser)]
#[command(name = "nearfield", version, about = "Semi-discrete near-field refractors and reflectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scene file (JSON).
    #[arg(long, global = true)]
    scene: Option<PathBuf>,

    /// Directory for reports and tables.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed for random sampling; overrides the scene's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Source cells per axis; overrides `solver.grid`.
    #[arg(long, global = true)]
    grid: Option<usize>,

    /// Tolerance of the command's main check.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the scene; writes surface.json, assignment.csv and report.json.
    Solve,
    /// Regularity verdicts for a graph receiver; writes report.json.
    CheckTarget,
    /// Solve, then trace one ray per source cell; writes trace.csv and summary.json.
    Trace,
    /// Reproduce a counterexample; writes report.json.
    Counterexample {
        #[arg(value_enum)]
        which: Counterexample,
    },
    /// Analytic derivatives against finite differences; writes table.csv and report.json.
    DerivativesCheck,
    /// Print the Hölder exponent for dimension n and integrability q.
    Alpha {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        q: f64,
    },
    /// Run an experiment; writes <name>.json.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let ov = Overrides { grid: cli.grid, tol: cli.tol };
    let loaded = match (&cli.command, &cli.scene) {
        (Command::Solve | Command::CheckTarget | Command::Trace | Command::Experiment { .. }, None) => {
            return Err(CliError::Scene("this command needs --scene".into()));
        }
        (_, Some(path)) => Some(scene::load(path)?),
        (_, None) => None,
    };
    let seed = cli.seed.or(loaded.as_ref().map(|l| l.scene.seed)).unwrap_or(0);
    let sink = || Sink::new(&cli.out, loaded.as_ref().map(|l| l.sha256.clone()), seed);
    let scene = || &loaded.as_ref().expect("scene checked above").scene;
    match cli.command {
        Command::Solve => commands::solve(scene(), &ov, &sink()?),
        Command::CheckTarget => commands::check_target(scene(), &sink()?),
        Command::Trace => commands::trace(scene(), &ov, &sink()?),
        Command::Counterexample { which } => commands::counterexample(which, cli.tol, &sink()?),
        Command::DerivativesCheck => commands::derivatives_check(seed, cli.tol, &sink()?),
        Command::Alpha { n, q } => {
            println!("{:.12}", commands::alpha(n, q)?);
            Ok(true)
        }
        Command::Experiment { which } => experiments::run(which, scene(), &ov, seed, &sink()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("nearfield: a check failed; see the report");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("nearfield: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
