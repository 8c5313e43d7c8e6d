use std::path::PathBuf;
use std::process::ExitCode;

use cbf_shaping::scenario::ControllerKind;
use cbfsim::{commands, CliResult};
use clap::{Parser, Subcommand};

/// Simulate and analyze CLF-CBF quadratic-program controllers.
///
/// Exit codes: 0 success, 1 check failed, 2 configuration error, 3 simulation error.
#[derive(Debug, Parser)]
#[command(name = "cbfsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one closed-loop trajectory and write it as CSV plus a summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_controller)]
        controller: ControllerKind,
        /// Initial state, comma separated (e.g. "4,4").
        #[arg(long, allow_hyphen_values = true)]
        ic: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate the equilibria of the nominal closed loop and classify them.
    Equilibria {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate every initial condition of a scenario.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_controller)]
        controller: ControllerKind,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Regenerate the data and phase portrait of one benchmark figure.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        figure: u8,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Compare the analytic gradients of D with finite differences.
    Gradcheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: cbf_shaping::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { scenario, controller, ic, out } => commands::simulate(&scenario, controller, &ic, &out),
        Command::Equilibria { scenario, out } => commands::equilibria(&scenario, &out),
        Command::Sweep { scenario, controller, outdir } => commands::sweep_cmd(&scenario, controller, &outdir),
        Command::Reproduce { figure, outdir } => commands::reproduce(figure, &outdir),
        Command::Gradcheck { scenario, samples, seed, corrupt_gradient } => {
            commands::gradcheck(&scenario, samples, seed, corrupt_gradient)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
