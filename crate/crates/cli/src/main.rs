use std::path::PathBuf;
use std::process::ExitCode;

use aft_cli::{
    efficiency_cmd, fit_cmd, generate_cmd, load_config, parse_grid, simulate_cmd, write_cohort, write_json,
    write_report, write_rows, CliError, CliResult, FitRequest,
};
use aft_core::{AlphaSource, RhoKind, Scheme, SolveOptions, TransformSpec};
use clap::{Parser, Subcommand};

/// Rank-based accelerated failure time estimation for case-cohort and
/// two-phase designs.
#[derive(Debug, Parser)]
#[command(name = "aft", version)]
struct Cli {
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a cohort CSV and write a JSON result document.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "identity")]
        transform: TransformSpec,
        #[arg(long, default_value = "full_data")]
        scheme: Scheme,
        #[arg(long, default_value = "true_pi")]
        alpha_source: AlphaSource,
        #[arg(long, default_value = "gehan")]
        rho: RhoKind,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Proceed despite validation violations.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = SolveOptions::default().tol_theta)]
        tol_theta: f64,
        #[arg(long, default_value_t = SolveOptions::default().max_iter)]
        max_iter: usize,
    },
    /// Run a Monte Carlo study and write the summary CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace relative efficiencies over a grid of subcohort fractions.
    Efficiency {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated fractions in (0, 1].
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one simulated cohort as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit {
            input,
            out,
            transform,
            scheme,
            alpha_source,
            rho,
            level,
            force,
            tol_theta,
            max_iter,
        } => {
            let request = FitRequest {
                transform,
                scheme,
                alpha_source,
                rho,
                options: SolveOptions {
                    tol_theta,
                    max_iter,
                    ..SolveOptions::default()
                },
                level,
                force,
            };
            let doc = fit_cmd(&input, &request)?;
            match out {
                Some(path) => write_json(&path, &doc)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?
                ),
            }
        }
        Command::Simulate { config, out } => {
            let report = simulate_cmd(load_config(&config)?, cli.seed, cli.threads)?;
            print!("{}", report.to_table());
            if let Some(path) = out {
                write_report(&path, &report)?;
            }
        }
        Command::Efficiency { config, grid, out } => {
            let grid = parse_grid(&grid)?;
            let rows = efficiency_cmd(load_config(&config)?, &grid, cli.seed, cli.threads)?;
            println!("{:>8} {:>8} {:>12} {:>10} {:>8}", "fraction", "weight", "method", "asym_var", "rel_eff");
            for r in &rows {
                println!(
                    "{:>8.3} {:>8} {:>12} {:>10.5} {:>8.4}",
                    r.fraction,
                    r.weight.as_str(),
                    r.method.as_str(),
                    r.asym_var,
                    r.rel_efficiency
                );
            }
            if let Some(path) = out {
                write_rows(&path, &rows)?;
            }
        }
        Command::Generate { config, out, replicate } => {
            let cohort = generate_cmd(load_config(&config)?, cli.seed, replicate)?;
            write_cohort(&out, &cohort)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aft: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
