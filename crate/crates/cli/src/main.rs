//! `tohm`: scan a model over a grid, calibrate the upcrossing bound by
//! simulation and write plot-ready tables.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 fit or scan
//! failure, 4 ensemble failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tohm::{Execution, TohmError};

mod commands;
mod config;

use config::{C0Setting, ModelKind, RunConfig, TestKind};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    /// Anything failing while an ensemble runs is an ensemble failure.
    pub fn ensemble(e: TohmError) -> Self {
        match e {
            TohmError::InvalidArgument(_) => e.into(),
            _ => CliError {
                code: 4,
                message: e.to_string(),
            },
        }
    }
}

impl From<TohmError> for CliError {
    fn from(e: TohmError) -> Self {
        let code = match e {
            TohmError::FitFailure { .. } | TohmError::NonConvergence { .. } => 3,
            TohmError::EnsembleFailure { .. } => 4,
            TohmError::InvalidArgument(_) | TohmError::Format { .. } | TohmError::Io(_) => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "tohm", version, about = "Global p-values for scans over a nuisance parameter")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set params.phi=1.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for replicates; 0 uses every core.
    #[arg(long, env = "TOHM_WORKERS", default_value_t = 0, global = true)]
    workers: usize,

    #[arg(long, global = true)]
    data: Option<PathBuf>,

    #[arg(long, value_enum, global = true)]
    model: Option<ModelKind>,

    #[arg(long, value_enum, global = true)]
    test: Option<TestKind>,

    #[arg(long, global = true)]
    resolution: Option<usize>,

    /// Reference threshold, or `auto`.
    #[arg(long, global = true)]
    c0: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    replicates: Option<usize>,

    #[arg(long, global = true)]
    n_obs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset (or, for synthetic processes, a trace).
    Simulate,
    /// Profile the model over the grid: trace.csv and scan.json.
    Scan,
    /// Bound and Bonferroni p-values for a trace: report.json.
    Pvalue {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Precomputed ensemble summary; simulated from the config otherwise.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Write every null trace under traces/.
        #[arg(long)]
        dump_traces: bool,
    },
    /// Expected upcrossings of c0 across resolutions: upcrossings.csv.
    Upcross,
    /// Null paths and mean upcrossings per candidate c0.
    Sensitivity,
    /// Berman condition curve from the score correlations: berman.csv.
    Berman {
        #[arg(long)]
        dump_covariance: bool,
    },
    /// Bonferroni over bound ratios: ratio.csv.
    Compare,
    /// Brute-force null tail probabilities next to the bound.
    Oracle,
}

fn configure(cli: &mut Cli) -> Result<commands::Ctx, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    if let Some(m) = cli.model {
        cfg.model = Some(m);
    }
    if let Some(t) = cli.test {
        cfg.test = Some(t);
    }
    if let Some(r) = cli.resolution {
        cfg.resolution = r;
    }
    if let Some(c) = &cli.c0 {
        cfg.c0 = Some(C0Setting::parse(c)?);
    }
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = cli.replicates {
        cfg.n_replicates = n;
    }
    if let Some(n) = cli.n_obs {
        cfg.n_obs = Some(n);
    }
    if let Some(d) = cli.data.take() {
        cfg.io.data = Some(d);
    }
    if let Command::Pvalue { trace, ensemble, .. } = &mut cli.command {
        if let Some(t) = trace.take() {
            cfg.io.trace = Some(t);
        }
        if let Some(e) = ensemble.take() {
            cfg.io.ensemble = Some(e);
        }
    }
    if let Some(o) = cli.out.take() {
        cfg.io.out = Some(o);
    }
    cfg.finish()?;
    let out = cfg.io.out.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok(commands::Ctx {
        cfg,
        out,
        execution: Execution::with_workers(cli.workers),
    })
}

fn run(mut cli: Cli) -> Result<(), CliError> {
    let ctx = configure(&mut cli)?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Scan => commands::scan_cmd(&ctx),
        Command::Pvalue { dump_traces, .. } => commands::pvalue(&ctx, dump_traces),
        Command::Upcross => commands::upcross(&ctx),
        Command::Sensitivity => commands::sensitivity(&ctx),
        Command::Berman { dump_covariance } => commands::berman(&ctx, dump_covariance),
        Command::Compare => commands::compare(&ctx),
        Command::Oracle => commands::oracle(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
