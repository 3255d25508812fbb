//! Scenario orchestration: single runs, Monte Carlo campaigns and reports.

pub mod campaign;
pub mod report;
pub mod sim;


pub use campaign::{run_campaign, run_monte_carlo, write_campaign, write_run, CampaignManifest, CampaignOptions, Scenario};
pub use report::{report, ReportFormat};
pub use sim::{calibrate, load_or_calibrate, run_seed, run_single, splitmix64, MeasurementNoise, Method};
