use std::fmt::Display;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cats_sim::curves::{self, Figure};
use cats_sim::{bench, compare_to_dir, config, gnuplot_to_dir, run_to_dir, write_file, CliError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cats-sim", version, about = "Deterministic credit-modulated traffic microsimulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// JSON scenario file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: replication, replication-nocam or replication-fullcam.
    #[arg(long)]
    preset: Option<String>,
    /// Override a field by dotted path, e.g. population.total=10.
    #[arg(long = "set", visible_alias = "override", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<cats_core::ScenarioConfig, CliError> {
        Ok(config::load(self.config.as_deref(), self.preset.as_deref(), &self.set)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, events.csv and summary.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the dynamics on the worker pool. Output is unchanged.
        #[arg(long)]
        parallel: bool,
    },
    /// Closed-form behavior curves against the number of violations.
    Curves {
        #[arg(value_enum)]
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seed-averaged comparison of cats and baseline at 0, 30 and 100% camera coverage.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Horizon in days; defaults to the scenario's.
        #[arg(long)]
        days: Option<u32>,
        /// Run the cells concurrently. Output is unchanged.
        #[arg(long)]
        parallel: bool,
    },
    /// Wall-clock scaling of the tick loop.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000])]
        counts: Vec<u32>,
        #[arg(long, default_value_t = 6000)]
        ticks: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also time each count with parallel dynamics.
        #[arg(long)]
        parallel: bool,
    },
    /// Convert a CSV into a gnuplot data file and script.
    Gnuplot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved scenario as JSON.
    Config {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(line: impl Display) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out, parallel } => {
            let config = scenario.load()?;
            let a = run_to_dir(&config, &out, parallel)?;
            let s = &a.summary;
            eprintln!(
                "{} days, {} accidents, {} violations; final conservative/normal/aggressive/banned = {}/{}/{}/{}; {:.1} s",
                s.days,
                s.total_accidents,
                s.total_violations,
                s.final_counts.conservative,
                s.final_counts.normal,
                s.final_counts.aggressive,
                s.final_counts.banned,
                s.wall_clock_s
            );
            emit(a.metrics.display());
            emit(a.events.display());
            emit(a.summary_path.display());
        }
        Command::Curves { figure, out } => {
            let name = match figure {
                Figure::Fig4 => "fig4.csv",
                Figure::Fig5 => "fig5.csv",
                Figure::Fig6 => "fig6.csv",
            };
            let path = write_file(&out, name, |b| curves::write(figure, b))?;
            emit(path.display());
        }
        Command::Compare { scenario, out, seeds, days, parallel } => {
            let mut base = scenario.load()?;
            if let Some(d) = days {
                if d == 0 {
                    return Err(CliError::Usage("--days must be at least 1".into()));
                }
                base.horizon_days = d;
            }
            let (daily, trends) = compare_to_dir(&base, &seeds, parallel, &out)?;
            emit(daily.display());
            emit(trends.display());
        }
        Command::Bench { counts, ticks, out, parallel } => {
            if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) || counts[0] == 0 {
                return Err(CliError::Usage("--counts must be positive and strictly ascending".into()));
            }
            let rows = bench::bench(&counts, ticks, parallel)?;
            for r in &rows {
                eprintln!("n={} parallel={} {:.3} s", r.n_vehicles, r.parallel, r.seconds);
            }
            let path = write_file(&out, "bench.csv", |b| bench::write(b, &rows))?;
            emit(path.display());
        }
        Command::Gnuplot { csv, out } => {
            let (dat, gp) = gnuplot_to_dir(&csv, &out)?;
            emit(dat.display());
            emit(gp.display());
        }
        Command::Config { scenario } => {
            let config = scenario.load()?;
            emit(serde_json::to_string_pretty(&config).expect("config serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
