use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use coagfrag::io_cli::{
    cmd_oracle_bernstein, cmd_oracle_constant_kernel, cmd_solve, cmd_verify, load_config,
    GridConfig,
};

/// Stationary solutions of the coagulation-fragmentation equation.
///
/// Exit status: 0 converged, 1 operational error, 2 not converged.
#[derive(Debug, Parser)]
#[command(name = "coagfrag", version)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the continuation described by a TOML config.
    Solve {
        config: PathBuf,
        /// Solution CSV (x, f, cumulative_mass); `-` for stdout. Overrides output.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// JSON report; `-` for stdout. Overrides output.json.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Recompute weak-form residuals, moments and the exponent fit of a stored solution.
    Verify {
        solution: PathBuf,
        config: PathBuf,
        #[arg(long, default_value = "-")]
        json: PathBuf,
    },
    /// Evaluate a reference solution.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Debug, Subcommand)]
enum Oracle {
    /// Integrate s(U² + U) = 2∫U and write (s, U, residual).
    Bernstein {
        #[arg(long, default_value_t = 1e4)]
        s_max: f64,
        #[arg(long, default_value_t = 400)]
        points: usize,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Closed-form constant-kernel state A0 z^x on a grid; writes (x, phi_ref).
    ConstantKernel {
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        a0: f64,
        #[arg(long, default_value_t = 1e-6)]
        x_min: f64,
        #[arg(long, default_value_t = 1e3)]
        x_max: f64,
        #[arg(long, default_value_t = 180)]
        n_cells: usize,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> coagfrag::Result<u8> {
    match cli.command {
        Command::Solve { config, csv, json } => {
            let mut cfg = load_config(&config)?;
            if csv.is_some() {
                cfg.output.csv = csv;
            }
            if json.is_some() {
                cfg.output.json = json;
            }
            Ok(cmd_solve(&cfg)?.code())
        }
        Command::Verify {
            solution,
            config,
            json,
        } => {
            let cfg = load_config(&config)?;
            cmd_verify(&solution, &cfg, &json)?;
            Ok(0)
        }
        Command::Oracle(Oracle::Bernstein { s_max, points, out }) => {
            let summary = cmd_oracle_bernstein(s_max, points, &out)?;
            eprintln!("{}", serde_json::to_string(&summary)?);
            Ok(0)
        }
        Command::Oracle(Oracle::ConstantKernel {
            rho,
            a0,
            x_min,
            x_max,
            n_cells,
            out,
        }) => {
            let grid = GridConfig {
                x_min,
                x_max,
                n_cells,
            };
            let summary = cmd_oracle_constant_kernel(rho, a0, &grid, &out)?;
            eprintln!("{}", serde_json::to_string(&summary)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
