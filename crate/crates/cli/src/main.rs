//! Experiment driver: runs convergence, conservation and stabilization studies
//! and writes CSV tables plus gnuplot data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};

use crate::commands::CmdError;
use crate::config::{Experiment, Overrides};

/// Environment variable that fixes the worker-thread count.
const THREADS_ENV: &str = "STCUTFEM_THREADS";

#[derive(Parser)]
#[command(name = "stcutfem", version, about = "Space-time cut finite element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error and EOC table over the h list.
    Convergence(Overrides),
    /// Conservation error e_c(t) per slab.
    Conservation(Overrides),
    /// Error and condition number against the ghost-penalty constant, macro vs full.
    TauSweep(Overrides),
    /// Error, condition number and nnz against the large-element threshold.
    DeltaSweep(Overrides),
    /// Error-vs-time traces over a grid of N_t and tau.
    StabilityScan(Overrides),
    /// Area and perimeter of the cut-cell quadrature against references.
    QuadratureTest(Overrides),
    /// Macroelement partition of one slab as CSV.
    PartitionDump(Overrides),
}

type Handler = fn(&Experiment) -> Result<(), CmdError>;

fn init_threads() -> Result<(), CmdError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CmdError::Config(config::ConfigError(format!("{THREADS_ENV}: expected a thread count, got '{v}'"))))?;
        // a second initialization only happens in tests; keep the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CmdError> {
    init_threads()?;
    let (f, o): (Handler, Overrides) = match cli.command {
        Command::Convergence(o) => (commands::convergence, o),
        Command::Conservation(o) => (commands::conservation, o),
        Command::TauSweep(o) => (commands::tau_sweep, o),
        Command::DeltaSweep(o) => (commands::delta_sweep, o),
        Command::StabilityScan(o) => (commands::stability_scan, o),
        Command::QuadratureTest(o) => (commands::quadrature_test, o),
        Command::PartitionDump(o) => (commands::partition_dump, o),
    };
    let exp = Experiment::from_overrides(&o)?;
    f(&exp)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
