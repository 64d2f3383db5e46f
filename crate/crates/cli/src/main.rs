use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qloud_core::plot::{emit_plot, PlotKind};
use qloud_core::scenario::{run_scenario, write_csv, Mode, ResultRow, RunOutput, Scenario};
use qloud_core::{Error, ErrorKind};

/// Monte Carlo QKD rates for satellite and balloon linked Quantum Cities.
#[derive(Debug, Parser)]
#[command(name = "qloud", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pass geometry only: elevation and range while above the mask.
    Pass(RunArgs),
    /// BB84 from the satellite to the first station over its pass.
    Downlink(RunArgs),
    /// Trusted-node chains between Qlients of different Quantum Cities.
    Chain(RunArgs),
    /// Entanglement-based key distribution from the satellite.
    Bbm92(RunArgs),
    /// Trusted chain over two high-altitude balloons.
    Balloon(RunArgs),
    /// Repeat a downlink or balloon run for each value of the sweep.
    Sweep(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file, or the name of a built-in preset.
    #[arg(long, value_name = "FILE")]
    scenario: String,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of trials per point.
    #[arg(long)]
    trials: Option<usize>,
    /// Write CSV, summary (and plot) into this directory instead of stdout.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also render an SVG plot (requires --out).
    #[arg(long, requires = "out")]
    plot: bool,
}

impl Command {
    fn split(self) -> (Mode, RunArgs) {
        match self {
            Command::Pass(a) => (Mode::Pass, a),
            Command::Downlink(a) => (Mode::Downlink, a),
            Command::Chain(a) => (Mode::Chain, a),
            Command::Bbm92(a) => (Mode::Bbm92, a),
            Command::Balloon(a) => (Mode::Balloon, a),
            Command::Sweep(a) => (Mode::Sweep, a),
        }
    }
}

fn plot_kind(mode: Mode, rows: &[ResultRow]) -> PlotKind {
    if mode == Mode::Pass {
        return PlotKind::ElevationVsTime;
    }
    let single_time = rows.windows(2).all(|w| w[0].t_s == w[1].t_s);
    if single_time && rows.iter().all(|r| r.param.is_some()) {
        PlotKind::RateVsParam
    } else {
        PlotKind::RateVsTime
    }
}

fn write_outputs(mode: Mode, scenario: &Scenario, output: &RunOutput, args: &RunArgs) -> qloud_core::Result<()> {
    let Some(dir) = &args.out else {
        let stdout = io::stdout();
        write_csv(stdout.lock(), &output.rows)?;
        eprint!("{}", output.summary);
        return Ok(());
    };
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let stem = format!("{}-{}", scenario.name, mode);
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    write_csv(BufWriter::new(file), &output.rows)?;

    let summary_path = dir.join(format!("{stem}.txt"));
    fs::write(&summary_path, output.summary.to_string()).map_err(|e| io_error(&summary_path, e))?;

    if args.plot {
        if output.rows.is_empty() {
            eprintln!("no rows, so no plot");
        } else {
            emit_plot(
                &output.rows,
                plot_kind(mode, &output.rows),
                dir.join(format!("{stem}.svg")),
            )?;
        }
    }
    print!("{}", output.summary);
    let _ = io::stdout().flush();
    Ok(())
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run(mode: Mode, args: RunArgs) -> qloud_core::Result<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(trials) = args.trials {
        scenario.n_trials = trials;
    }
    let output = run_scenario(&scenario, mode)?;
    write_outputs(mode, &scenario, &output, &args)
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = cli.command.split();
    match run(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
