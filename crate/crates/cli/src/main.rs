//! Command-line surface for solving, boundary extraction, simulation,
//! and verification experiments. All outputs are CSV files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_hjb::Error;

#[derive(Parser)]
#[command(
    name = "sparse-hjb",
    version,
    about = "Sparse stochastic optimal control: HJB solves, bang-off-bang feedback, Monte Carlo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file; omitted means the built-in
    /// scalar-linear defaults (c=1, sigma=0.1, T=1).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,

    /// Repeatable config override of the form section.key=value.
    #[arg(long = "override", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Value-field CSV produced by `solve`; defaults to <out>/field.csv.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HJB equation backward and write the value field.
    Solve(CommonArgs),
    /// Extract switching boundaries from a solved field.
    Boundary(BoundaryArgs),
    /// Run closed-loop Monte Carlo under a selected controller.
    Simulate(SimulateArgs),
    /// Run the verification battery for the configured problem.
    Compare(CommonArgs),
}

#[derive(Args)]
struct BoundaryArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Space-separated extraction times; overrides the config.
    #[arg(long)]
    times: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Controller: the sparse feedback from the solved field, the
    /// clamped minimum-energy baseline, the closed-form deterministic
    /// law, or the zero control.
    #[arg(long, default_value = "l0", value_parser = ["l0", "l2", "det-law", "zero"])]
    controller: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => commands::cmd_solve(&args).map(|_| ExitCode::SUCCESS),
        Command::Boundary(args) => {
            commands::cmd_boundary(&args.common, args.times.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            commands::cmd_simulate(&args.common, &args.controller).map(|_| ExitCode::SUCCESS)
        }
        Command::Compare(args) => commands::cmd_compare(&args).map(|ok| {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Divergence(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

impl CommonArgs {
    fn load_config(&self) -> sparse_hjb::Result<config::ExperimentConfig> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {}", path.display(), e))
            })?,
            None => String::new(),
        };
        let mut cfg = config::parse_config(&text, &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn field_path(&self) -> PathBuf {
        self.field
            .clone()
            .unwrap_or_else(|| self.out.join("field.csv"))
    }
}
