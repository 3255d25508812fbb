//! Monte Carlo campaigns: seeded batches of runs, aggregation and the
//! on-disk layout read back by the report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::dynamics::STATE_DIM;
use crate::error::{Error, Result};
use crate::metrics::{summarize, CampaignSummary, RunRecord};

use super::sim::{run_seed, run_single, MeasurementNoise, Method};

pub const VERSION: &str = concat!("relnav ", env!("CARGO_PKG_VERSION"));

pub const STATE_NAMES: [&str; STATE_DIM] =
    ["x", "y", "z", "vx", "vy", "vz", "p1", "p2", "p3", "wx", "wy", "wz"];

/// Lighting condition of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Eclipse,
    Nominal,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Eclipse, Scenario::Nominal];

    pub fn dir_name(self) -> &'static str {
        match self {
            Self::Eclipse => "eclipse",
            Self::Nominal => "nominal",
        }
    }

    pub fn from_dir_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.dir_name() == s)
    }

    /// Column label of the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Self::Eclipse => "E",
            Self::Nominal => "NE",
        }
    }

    pub fn apply(self, cfg: &ScenarioConfig) -> ScenarioConfig {
        let mut c = cfg.clone();
        if self == Self::Nominal {
            c.eclipse.enabled = false;
        }
        c
    }

    /// Scenarios a config supports: the eclipse one only when its window is
    /// non-empty.
    pub fn available(cfg: &ScenarioConfig) -> Vec<Scenario> {
        let eclipse = cfg.eclipse.window().is_some_and(|w| w.duration > 0.0 && w.start < cfg.simulation.duration);
        if eclipse {
            vec![Self::Eclipse, Self::Nominal]
        } else {
            vec![Self::Nominal]
        }
    }
}

/// Number of worker threads to use when none is given.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn with_run_index(e: Error, run: usize) -> Error {
    match e {
        Error::Run { time, source, .. } => Error::Run { run, time, source },
        other => Error::Run { run, time: f64::NAN, source: Box::new(other) },
    }
}

/// Run one record per seed on up to `threads` workers. Records come back in
/// seed order whatever the schedule; the first failing run (by index) is
/// reported.
pub fn run_batch(cfg: &ScenarioConfig, noise: &MeasurementNoise, seeds: &[u64], threads: usize) -> Result<Vec<RunRecord>> {
    let slots: Vec<Mutex<Option<Result<RunRecord>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, seeds.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= seeds.len() {
                    break;
                }
                let r = run_single(cfg, noise, seeds[j]).map_err(|e| with_run_index(e, j));
                *slots[j].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot is filled")).collect()
}

/// Derived seeds of runs `0..runs`.
pub fn campaign_seeds(master: u64, runs: usize) -> Vec<u64> {
    (0..runs).map(|j| run_seed(master, j)).collect()
}

/// `runs` seeded runs of `cfg` as configured, aggregated.
pub fn run_monte_carlo(cfg: &ScenarioConfig, noise: &MeasurementNoise, runs: usize, threads: usize) -> Result<CampaignSummary> {
    if runs == 0 {
        return Err(Error::Parameter("a campaign needs at least one run".into()));
    }
    let records = run_batch(cfg, noise, &campaign_seeds(cfg.simulation.seed, runs), threads)?;
    summarize(&records, cfg.simulation.rmse_skip)
}

/// Result of one (scenario, method) cell of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignCell {
    pub scenario: Scenario,
    pub method: Method,
    pub summary: CampaignSummary,
    pub mtf_trigger_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOptions {
    pub runs: usize,
    pub methods: Vec<Method>,
    pub scenarios: Vec<Scenario>,
    pub threads: usize,
}

impl CampaignOptions {
    /// Every method on every scenario the config supports.
    pub fn full(cfg: &ScenarioConfig, runs: usize) -> Self {
        Self { runs, methods: Method::ALL.to_vec(), scenarios: Scenario::available(cfg), threads: default_threads() }
    }
}

/// Run every requested cell. All cells share the same per-run seeds, so
/// methods are compared on common random numbers.
pub fn run_campaign(cfg: &ScenarioConfig, noise: &MeasurementNoise, opts: &CampaignOptions) -> Result<Vec<CampaignCell>> {
    if opts.runs == 0 {
        return Err(Error::Parameter("a campaign needs at least one run".into()));
    }
    let seeds = campaign_seeds(cfg.simulation.seed, opts.runs);
    let mut cells = Vec::new();
    for &scenario in &opts.scenarios {
        for &method in &opts.methods {
            let c = method.configure(&scenario.apply(cfg));
            let records = run_batch(&c, noise, &seeds, opts.threads)?;
            let triggered: usize = records.iter().map(|r| r.mtf_triggered.iter().filter(|t| **t).count()).sum();
            let measured: usize = records.iter().map(|r| r.nis.iter().filter(|n| n.is_some()).count()).sum();
            cells.push(CampaignCell {
                scenario,
                method,
                summary: summarize(&records, c.simulation.rmse_skip)?,
                mtf_trigger_fraction: if measured == 0 { 0.0 } else { triggered as f64 / measured as f64 },
            });
        }
    }
    Ok(cells)
}

/// Scalar results of one cell, stored as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSummary {
    pub scenario: Scenario,
    pub method: Method,
    pub runs: usize,
    pub rmse_skip: f64,
    /// Aggregate RMSE per state, in state order.
    pub rmse: Vec<f64>,
    pub mean_snees: f64,
    /// Smallest per-step 3σ position coverage inside the eclipse, if any.
    pub eclipse_coverage_min: Option<f64>,
    pub nis_exceedance: f64,
    pub mtf_trigger_fraction: f64,
}

impl CellSummary {
    pub fn from_cell(cell: &CampaignCell, rmse_skip: f64) -> Self {
        let s = &cell.summary;
        Self {
            scenario: cell.scenario,
            method: cell.method,
            runs: s.runs,
            rmse_skip,
            rmse: s.rmse.aggregate.to_vec(),
            mean_snees: s.snees.mean,
            eclipse_coverage_min: outage_coverage_min(s),
            nis_exceedance: s.nis_exceedance,
            mtf_trigger_fraction: cell.mtf_trigger_fraction,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse { what: "campaign summary", line: 0, reason: e.message().to_string() })
    }
}

/// Smallest position coverage over steps flagged as outages.
pub fn outage_coverage_min(s: &CampaignSummary) -> Option<f64> {
    s.position_coverage.iter().zip(&s.outage).filter(|(_, o)| **o).map(|(c, _)| *c).reduce(f64::min)
}

/// Provenance of a campaign directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignManifest {
    pub version: String,
    /// SHA-256 of the serialized config.
    pub config_hash: String,
    pub master_seed: u64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub scenarios: Vec<Scenario>,
    /// Written files, relative to the campaign directory.
    pub outputs: Vec<String>,
}

impl CampaignManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse { what: "campaign manifest", line: 0, reason: e.message().to_string() })
    }
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

fn state_header(prefix: &str) -> String {
    STATE_NAMES.iter().map(|n| format!("{prefix}{n}")).collect::<Vec<_>>().join(",")
}

fn rows_csv(header: &str, times: &[f64], rows: &[[f64; STATE_DIM]]) -> String {
    let mut s = format!("t,{header}\n");
    for (t, row) in times.iter().zip(rows) {
        let _ = writeln!(s, "{},{}", num(*t), row.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","));
    }
    s
}

/// CSV and TOML files of one cell, keyed by their relative path.
pub fn cell_files(cell: &CampaignCell, rmse_skip: f64) -> Vec<(String, String)> {
    let dir = format!("{}/{}", cell.scenario.dir_name(), cell.method.dir_name());
    let s = &cell.summary;
    let mut snees = String::from("t,outage,snees\n");
    let mut coverage = String::from("t,outage,position_coverage\n");
    for k in 0..s.times.len() {
        let o = u8::from(s.outage[k]);
        let _ = writeln!(snees, "{},{o},{}", num(s.times[k]), s.snees.per_step[k].map(num).unwrap_or_default());
        let _ = writeln!(coverage, "{},{o},{}", num(s.times[k]), num(s.position_coverage[k]));
    }
    let summary = toml::to_string(&CellSummary::from_cell(cell, rmse_skip)).expect("summary is serializable");
    vec![
        (format!("{dir}/rmse.csv"), rows_csv(&state_header("rmse_"), &s.times, &s.rmse.per_step)),
        (format!("{dir}/bounds.csv"), rows_csv(&state_header("bound3_"), &s.times, &s.bounds)),
        (format!("{dir}/snees.csv"), snees),
        (format!("{dir}/coverage.csv"), coverage),
        (format!("{dir}/summary.toml"), summary),
    ]
}

/// Write a campaign under `dir`: per-cell files, the config used and the
/// manifest. Returns the manifest.
pub fn write_campaign(dir: &Path, cfg: &ScenarioConfig, opts: &CampaignOptions, cells: &[CampaignCell]) -> Result<CampaignManifest> {
    let mut outputs = Vec::new();
    let config_text = cfg.to_toml();
    write_file(&dir.join("config.toml"), &config_text)?;
    outputs.push("config.toml".to_string());
    for cell in cells {
        for (rel, text) in cell_files(cell, cfg.simulation.rmse_skip) {
            write_file(&dir.join(&rel), &text)?;
            outputs.push(rel);
        }
    }
    let manifest = CampaignManifest {
        version: VERSION.to_string(),
        config_hash: config_hash(cfg),
        master_seed: cfg.simulation.seed,
        runs: opts.runs,
        seeds: campaign_seeds(cfg.simulation.seed, opts.runs),
        methods: opts.methods.clone(),
        scenarios: opts.scenarios.clone(),
        outputs,
    };
    write_file(&dir.join("manifest.toml"), &toml::to_string(&manifest).expect("manifest is serializable"))?;
    Ok(manifest)
}

/// Per-step history of a single run as CSV.
pub fn run_csv(record: &RunRecord) -> String {
    let mut s = format!(
        "t,outage,{},{},{},nees,nis,nis_dof,mtf_triggered\n",
        state_header("true_"),
        state_header("est_"),
        state_header("sigma_")
    );
    for k in 0..record.len() {
        let join = |row: [f64; STATE_DIM]| row.iter().map(|v| num(*v)).collect::<Vec<_>>().join(",");
        let sigma = record.cov_diag[k].map(|v| v.max(0.0).sqrt());
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let (nis, dof) = match record.nis[k] {
            Some((v, d)) => (num(v), d.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{nis},{dof},{}",
            num(record.times[k]),
            u8::from(record.outage[k]),
            join(record.truth[k]),
            join(record.estimate[k]),
            join(sigma),
            opt(record.nees[k]),
            u8::from(record.mtf_triggered[k])
        );
    }
    s
}

/// Write `run.csv`, `config.toml` and a one-run manifest under `dir`.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, seed: u64, record: &RunRecord) -> Result<PathBuf> {
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    let path = dir.join("run.csv");
    write_file(&path, &run_csv(record))?;
    let method = Method::from_flags(cfg.filter.adapt_r, cfg.filter.adapt_q);
    let manifest = CampaignManifest {
        version: VERSION.to_string(),
        config_hash: config_hash(cfg),
        master_seed: cfg.simulation.seed,
        runs: 1,
        seeds: vec![seed],
        methods: vec![method],
        scenarios: vec![if cfg.eclipse.enabled { Scenario::Eclipse } else { Scenario::Nominal }],
        outputs: vec!["config.toml".into(), "run.csv".into()],
    };
    write_file(&dir.join("manifest.toml"), &toml::to_string(&manifest).expect("manifest is serializable"))?;
    Ok(path)
}
