//! `rpi` command-line entry point.
//!
//! Exit codes: 0 success, 1 invariant failure or runtime error, 2
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpi_core::harness::{
    emit_plots, parse_seed_list, run_cartpole_experiment, run_invariant_suite,
    run_inventory_experiment, ExperimentConfig, ExperimentKind, MetricsSummary,
};
use rpi_core::Error;

#[derive(Parser)]
#[command(name = "rpi", version, about = "Reliable policy iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-based comparison (RPI, AMPI-Q, TRPO) on the inventory MDP.
    Inventory(RunArgs),
    /// DQN versus RPI_DQN on cart-pole.
    Cartpole(RunArgs),
    /// Randomized invariant battery; exits 1 if any line fails.
    Invariants(RunArgs),
    /// Renders SVG band plots from iteration or checkpoint CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "out/plots")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; missing keys take the defaults for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list such as `0,3,7`, `0..20` or `0..3,10`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 500 inventory seeds, or 25 cart-pole seeds with 100 evaluation episodes.
    #[arg(long = "paper-scale")]
    full_scale: bool,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
    Invariants,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn resolve(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load_for(path, Some(kind))?,
        None => ExperimentConfig::default_for(kind),
    };
    if args.full_scale {
        config.apply_full_scale();
    }
    if let Some(list) = &args.seeds {
        config.seeds = parse_seed_list(list).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(summary: &MetricsSummary) {
    for a in &summary.algorithms {
        let value = a
            .value
            .map(|(m, s)| format!("{m:.3} ± {s:.3}"))
            .unwrap_or_else(|| "n/a".into());
        let solved = a
            .solved_seeds
            .map(|n| format!(", solved {n}/{}", a.n_seeds))
            .unwrap_or_default();
        println!(
            "{:<8} seeds {:>3}  value {value}{solved}  lower-bound holding {:.2} ± {:.2} %",
            a.algorithm.label(),
            a.n_seeds,
            a.holding.0,
            a.holding.1
        );
    }
    for (seed, reason) in &summary.excluded {
        println!("excluded seed {seed}: {reason}");
    }
    for file in &summary.files {
        println!("wrote {}", file.display());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (kind, args) = match &cli.command {
        Command::Inventory(a) => (ExperimentKind::InventoryModelBased, a),
        Command::Cartpole(a) => (ExperimentKind::CartpoleModelFree, a),
        Command::Invariants(a) => (ExperimentKind::InvariantSuite, a),
        Command::Plot { csv, out } => {
            for path in emit_plots(csv, out)? {
                println!("wrote {}", path.display());
            }
            return Ok(());
        }
    };
    let config = resolve(kind, args)?;
    if args.print_config {
        print!("{}", config.to_toml_string()?);
        return Ok(());
    }
    match kind {
        ExperimentKind::InventoryModelBased => print_summary(&run_inventory_experiment(&config)?),
        ExperimentKind::CartpoleModelFree => print_summary(&run_cartpole_experiment(&config)?),
        ExperimentKind::InvariantSuite => {
            let mut all_passed = true;
            let mut text = String::new();
            for &seed in &config.seeds {
                let mut settings = config.invariants.clone();
                settings.master_seed = settings.master_seed.wrapping_add(seed);
                let report = run_invariant_suite(&settings);
                all_passed &= report.passed();
                text.push_str(&format!("master seed {}\n{report}\n", settings.master_seed));
            }
            print!("{text}");
            std::fs::create_dir_all(&config.output_dir)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let path = config.output_dir.join("invariants_report.txt");
            std::fs::write(&path, &text).map_err(|e| Failure::Runtime(e.to_string()))?;
            if !all_passed {
                return Err(Failure::Invariants);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariants) => {
            log::error!("invariant suite reported failures");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            log::error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            log::error!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}
