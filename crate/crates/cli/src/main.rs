use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedmarl::harness::{format_matrix, run_experiment, run_matrix, Axis};
use fedmarl::noise::{validate, NoiseSchedule, ScheduleKind};
use fedmarl::ExperimentConfig;

/// Log verbosity comes from `FEDMARL_LOG` (e.g. `info`, `debug`).
#[derive(Parser)]
#[command(name = "fedmarl", version, about = "Federated multi-agent actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed and write metrics.csv, summary.json and weights/.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Cartesian product of one or more axes over several seeds.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        /// KEY=V1,V2,... (repeatable)
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
        /// Comma-separated seeds; defaults to the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a noise schedule against the decay-shape conditions.
    ValidateNoise {
        #[arg(long = "fn")]
        kind: ScheduleKind,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        n0: f64,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load(config.as_ref())?;
            let s = run_experiment(&cfg, seed, &out)?;
            println!(
                "seed {seed}: final reward {:.4}, throughput {:.2} Mbps, latency {:.4} s, energy {:.2} J, converged at iteration {}",
                s.final_mean_reward, s.mean_throughput_mbps, s.mean_latency_s, s.total_energy_j, s.convergence_iteration
            );
            Ok(true)
        }
        Command::Matrix {
            config,
            axes,
            seeds,
            out,
        } => {
            let cfg = load(config.as_ref())?;
            let seeds = if seeds.is_empty() { cfg.run.seeds.clone() } else { seeds };
            let runs = run_matrix(&cfg, &axes, &seeds, &out)?;
            print!("{}", format_matrix(&runs, "tail_mean_reward"));
            println!("wrote {}", out.join(fedmarl::harness::MATRIX_FILE).display());
            Ok(true)
        }
        Command::ValidateNoise { kind, rate, n0, grid } => {
            let schedule = NoiseSchedule {
                kind,
                rate,
                n0,
                floor: 0.0,
            };
            let bad = schedule.validate();
            anyhow::ensure!(bad.is_empty(), "{}", bad.join("; "));
            let report = validate(&schedule, None, grid)?;
            match report.first_violation {
                None => println!("{kind} schedule passes on {} points", report.points_checked),
                Some(v) => println!("{kind} schedule fails: {:?} violated at t = {}", v.condition, v.t),
            }
            Ok(report.passed())
        }
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml_string()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDMARL_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
