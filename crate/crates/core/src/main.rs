use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfstab::app::commands::{self, AppError, RunArgs, DEFAULT_BUDGET};
use rfstab::thermal::ControlMode;

#[derive(Parser)]
#[command(name = "rfstab", version, about = "Long-term RF amplitude and phase stability simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Control {
    On,
    Off,
}

impl From<Control> for ControlMode {
    fn from(c: Control) -> Self {
        match c {
            Control::On => ControlMode::On,
            Control::Off => ControlMode::Off,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a measurement campaign and write records, statistics and infidelities.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        control: Option<Control>,
        /// Campaign length in seconds, overriding the scenario.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory (default: $RFSTAB_OUT_DIR/<name>-<control>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every captured window, demodulated, to envelopes.csv.
        #[arg(long)]
        dump_envelopes: bool,
        /// Allow envelope dumps above the row limit.
        #[arg(long)]
        force: bool,
    },
    /// Compare two runs of the same scenario (ratios are B over A).
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gate infidelity per channel from a stats CSV.
    Fidelity {
        stats: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the scenario's coupling coefficients to the target mean stds.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate sync-counter skew across units.
    ClockSkew {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<String, AppError> {
    Ok(match cmd {
        Command::Run { scenario, seed, control, duration, out, dump_envelopes, force } => {
            let args = RunArgs {
                scenario,
                seed,
                control: control.map(Into::into),
                duration_s: duration,
                out,
                dump_envelopes,
                force,
            };
            commands::cmd_run(&args)?.to_string()
        }
        Command::Compare { run_a, run_b, out } => commands::cmd_compare(&run_a, &run_b, out.as_deref())?.to_string(),
        Command::Fidelity { stats, budget, out } => commands::cmd_fidelity(&stats, budget, out.as_deref())?.to_string(),
        Command::Calibrate { scenario, seed, duration, out } => {
            commands::cmd_calibrate(&scenario, seed, duration, out.as_deref())?.to_string()
        }
        Command::ClockSkew { scenario, duration, out } => {
            commands::cmd_clock_skew(&scenario, duration, out.as_deref())?.to_string()
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
