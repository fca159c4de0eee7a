use std::path::PathBuf;
use std::process::ExitCode;

use agentsize_cli::commands::{self, Analysis, Finish, SimulateArgs};
use agentsize_core::optimizer::Algorithm;
use agentsize_core::simulator::AcGrid;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agentsize", version, about = "Agent-driven analog circuit sizing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the four-phase agent workflow described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one netlist and print the result as CSV.
    Simulate(SimulateCli),
    /// Run the optimizer alone on a config's sizing problem.
    Optimize {
        config: PathBuf,
        #[arg(long, value_parser = parse_algorithm)]
        algo: Algorithm,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the markdown report of an event log.
    Report {
        trace: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateCli {
    netlist: PathBuf,
    /// Placeholder value, `name=value` with SI suffixes; repeatable.
    #[arg(long = "param", short = 'p')]
    params: Vec<String>,
    #[arg(long, group = "analysis")]
    op: bool,
    #[arg(long, group = "analysis")]
    ac: bool,
    #[arg(long, group = "analysis")]
    tran: bool,
    /// TOML file of model cards keyed by model name.
    #[arg(long)]
    models: Option<PathBuf>,
    /// AC input source; defaults to the first source with an AC value.
    #[arg(long)]
    input: Option<String>,
    /// AC output net.
    #[arg(long, default_value = "out")]
    output: String,
    #[arg(long, default_value = "1", value_parser = parse_si)]
    f_lo: f64,
    #[arg(long, default_value = "10G", value_parser = parse_si)]
    f_hi: f64,
    #[arg(long, default_value_t = AcGrid::MIN_PTS_PER_DECADE)]
    points_per_decade: usize,
    #[arg(long, default_value = "100n", value_parser = parse_si)]
    tstop: f64,
    #[arg(long, default_value = "0.25n", value_parser = parse_si)]
    dt: f64,
    /// Step one source, `SOURCE=from:to`.
    #[arg(long)]
    step: Option<String>,
    /// Nets to record in a transient run; all nets when omitted.
    #[arg(long = "probe")]
    probes: Vec<String>,
}

fn parse_si(s: &str) -> Result<f64, String> {
    agentsize_core::netlist::parse_si_value(s).ok_or_else(|| format!("not a number: '{s}'"))
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse()
}

fn finish(f: Finish) -> ExitCode {
    ExitCode::from(f.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => commands::cmd_run(&config, out.as_deref()).map(|f| {
            if f == Finish::Incomplete {
                eprintln!("specs not met; see the report for the best point found");
            }
            finish(f)
        }),
        Command::Simulate(s) => {
            let analysis = if s.ac {
                Analysis::Ac
            } else if s.tran {
                Analysis::Tran
            } else {
                Analysis::Op
            };
            let args = SimulateArgs {
                netlist: s.netlist,
                params: s.params,
                analysis,
                models: s.models,
                input: s.input,
                output: s.output,
                grid: AcGrid { f_lo: s.f_lo, f_hi: s.f_hi, pts_per_decade: s.points_per_decade },
                t_stop: s.tstop,
                dt: s.dt,
                step: s.step,
                probes: s.probes,
            };
            commands::cmd_simulate(&args).map(|text| {
                print!("{text}");
                ExitCode::SUCCESS
            })
        }
        Command::Optimize { config, algo, budget, out } => {
            commands::cmd_optimize(&config, algo, budget, out.as_deref()).map(|s| {
                println!(
                    "best fom {:.6} after {} simulations; results in {}",
                    s.best_fom,
                    s.evaluations,
                    s.output_dir.display()
                );
                finish(s.finish)
            })
        }
        Command::Report { trace, out } => commands::cmd_report(&trace).and_then(|text| {
            match out {
                Some(p) => std::fs::write(&p, text)?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
