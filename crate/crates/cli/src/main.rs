use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use hubwind_cli::export::export_grid;
use hubwind_cli::pipeline::{run_pipeline, run_stage, Stage};
use hubwind_cli::simulate::simulate;
use hubwind_cli::PipelineConfig;

/// Hub-height wind speed estimation at unmonitored sites.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, default_value = "hubwind.toml")]
    config: PathBuf,

    /// Comma-separated YYYY-MM months, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    months: Option<Vec<String>>,

    /// Seed for `simulate`, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Single-threaded, ordered execution.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Rerun stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world into the configured data paths.
    Simulate,
    /// Quantile-map reanalysis profiles onto station climatologies.
    Downscale,
    /// Fit per-station shear models.
    FitShear,
    /// Fit monthly spatial models per hub height.
    FitSpatial,
    /// Krige hub-height speeds at the target sites.
    Predict,
    /// Write a posterior map on the configured lattice.
    ExportGrid,
    /// Score predictions against farm observations.
    Evaluate,
    /// All stages from downscale to evaluate.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(m) = cli.months {
        cfg.months = m;
    }
    if let Some(s) = cli.seed {
        cfg.synthetic.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.deterministic |= cli.deterministic;
    cfg.validate()?;

    let stage = |s| run_stage(&cfg, s, cli.force).map(|_| ());
    match cli.command {
        Command::Simulate => {
            let (_, files) = simulate(&cfg).map_err(|e| anyhow!("[simulate] {e:#}"))?;
            log::info!("simulate: wrote {} file(s)", files.len());
            Ok(())
        }
        Command::Downscale => stage(Stage::Downscale),
        Command::FitShear => stage(Stage::FitShear),
        Command::FitSpatial => stage(Stage::FitSpatial),
        Command::Predict => stage(Stage::Predict),
        Command::Evaluate => stage(Stage::Evaluate),
        Command::ExportGrid => {
            let spec = cfg.grid.clone().ok_or_else(|| anyhow!("[export-grid] no [grid] section in the config"))?;
            let path = export_grid(&cfg, &spec).map_err(|e| anyhow!("[export-grid] {e:#}"))?;
            log::info!("export-grid: wrote {}", path.display());
            Ok(())
        }
        Command::Run => {
            run_pipeline(&cfg, cli.force)?;
            Ok(())
        }
    }
}
