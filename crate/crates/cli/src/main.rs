use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use fscd_sim::par::Execution;
use fscd_sim::scenario::{parse_scenario, run_scenario, simulate, Scenario};

#[derive(Parser)]
#[command(name = "fscd-sim", version, about = "Simulate fibre sensing control devices and their control plane")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write every output under DIR.
    Simulate {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long, env = "FSCD_SIM_SEED")]
        seed: Option<u64>,
    },
    /// Print the gated OTDR trace of one scheduled pulse as CSV.
    OtdrTrace {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long, value_name = "K")]
        pulse_index: usize,
        #[arg(long, env = "FSCD_SIM_SEED")]
        seed: Option<u64>,
    },
    /// Print trial 0 of a path's SoP experiment (disturbance applied) as CSV.
    SopTrace {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long, value_name = "P")]
        path: String,
        #[arg(long, env = "FSCD_SIM_SEED")]
        seed: Option<u64>,
    },
    /// Print per-layer response times to the first unauthorized pulse as CSV.
    LatencyReport {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<Scenario> {
    let mut s = parse_scenario(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Simulate { scenario, out, seed } => {
            let s = load(&scenario, seed)?;
            let report = run_scenario(&s, &out, exec)?;
            println!(
                "{}: seed {}, {} files written to {}",
                report.scenario,
                report.seed,
                report.files.len() + 1,
                out.display()
            );
        }
        Command::OtdrTrace { scenario, pulse_index, seed } => {
            let mut s = load(&scenario, seed)?;
            let n = s.otdr_pulses.len();
            if pulse_index >= n {
                return Err(anyhow!("pulse index {pulse_index} out of range: scenario has {n} OTDR pulses"));
            }
            s.sop_experiments.clear();
            let out = simulate(&s, exec)?;
            print!("{}", out.pulses[pulse_index].trace.to_csv());
        }
        Command::SopTrace { scenario, path, seed } => {
            let mut s = load(&scenario, seed)?;
            s.otdr_pulses.retain(|_| false);
            s.sop_experiments.retain(|e| e.path_id == path);
            if s.sop_experiments.is_empty() {
                return Err(anyhow!("no SoP experiment on path {path}"));
            }
            s.sop_experiments.truncate(1);
            let out = simulate(&s, exec)?;
            print!("{}", out.sop[0].event_trace.to_csv());
        }
        Command::LatencyReport { scenario } => {
            let mut s = load(&scenario, None)?;
            s.sop_experiments.clear();
            let out = simulate(&s, exec)?;
            let report = out.latency.ok_or_else(|| anyhow!("scenario raises no unauthorized-pulse alert"))?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
