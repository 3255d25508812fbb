//! Command-line front end of the relative navigation toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use relnav::config::ScenarioConfig;
use relnav::harness::campaign::{default_threads, CampaignOptions};
use relnav::harness::{
    calibrate, load_or_calibrate, report, run_campaign, run_single, write_campaign, write_run, MeasurementNoise, Method,
    ReportFormat,
};

#[derive(Parser)]
#[command(name = "relnav", version, about = "Relative pose estimation with a dual-adaptive UKF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Adapt {
    /// Override the MTF (measurement noise) adaptation flag.
    #[arg(long, value_name = "BOOL")]
    adapt_r: Option<bool>,
    /// Override the process noise adaptation flag.
    #[arg(long, value_name = "BOOL")]
    adapt_q: Option<bool>,
}

impl Adapt {
    fn given(&self) -> bool {
        self.adapt_r.is_some() || self.adapt_q.is_some()
    }

    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(v) = self.adapt_r {
            cfg.filter.adapt_r = v;
        }
        if let Some(v) = self.adapt_q {
            cfg.filter.adapt_q = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the measurement noise on the initial scene.
    #[command(name = "calibrate-r")]
    CalibrateR {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulate one run and write its history.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        adapt: Adapt,
    },
    /// Monte Carlo campaign. Without adaptation overrides every method is run.
    Montecarlo {
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads (default: available cores).
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        adapt: Adapt,
    },
    /// Write a report of a campaign directory.
    Report {
        dir: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn noise(cfg: &ScenarioConfig) -> Result<MeasurementNoise> {
    let cal = load_or_calibrate(cfg).context("calibrating measurement noise")?;
    Ok(MeasurementNoise::from_config(&cal, cfg)?)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CalibrateR { config, output } => {
            let cfg = load(&config)?;
            let cal = calibrate(&cfg)?;
            cal.save(&output)?;
            println!("wrote {} ({} samples)", output.display(), cal.sample_count);
        }
        Command::Run { config, seed, output, adapt } => {
            let mut cfg = load(&config)?;
            adapt.apply(&mut cfg);
            let record = run_single(&cfg, &noise(&cfg)?, seed)?;
            let path = write_run(&output, &cfg, seed, &record)?;
            println!("wrote {}", path.display());
        }
        Command::Montecarlo { config, runs, output, threads, adapt } => {
            let mut cfg = load(&config)?;
            adapt.apply(&mut cfg);
            let runs = runs.unwrap_or(cfg.simulation.runs);
            let mut opts = CampaignOptions::full(&cfg, runs);
            opts.threads = threads.unwrap_or_else(default_threads);
            if adapt.given() {
                opts.methods = vec![Method::from_flags(cfg.filter.adapt_r, cfg.filter.adapt_q)];
            }
            let noise = noise(&cfg)?;
            let cells = run_campaign(&cfg, &noise, &opts)?;
            let manifest = write_campaign(&output, &cfg, &opts, &cells)?;
            for c in &cells {
                println!(
                    "{:<8} {:<18} mean SNEES {:.3}",
                    c.scenario.dir_name(),
                    c.method.label(),
                    c.summary.snees.mean
                );
            }
            println!("wrote {} files under {}", manifest.outputs.len() + 1, output.display());
        }
        Command::Report { dir, format } => {
            let format: ReportFormat = format.parse()?;
            let (paths, table) = report(&dir, format)?;
            if let Some(t) = table {
                print!("{t}");
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::DefaultConfig => print!("{}", ScenarioConfig::default().to_toml()),
    }
    Ok(())
}
