//! Run configuration files. Paths inside a config resolve relative to the
//! config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::ViolationBand;
use crate::fleet::{ArrivalProcess, HdevParams};
use crate::io::{self, IoError};
use crate::pf::{Feeder, PfOptions, DEFAULT_COLLAPSE_SENTINEL};
use crate::road::NodeId;
use crate::sim::{parse_timestamp, SeedVehicle, SweepConfig, TransmissionScenario};
use crate::stations::PortStrategy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{field}: file {path} does not exist")]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("{0}")]
    Value(String),
}

fn quarter_hour() -> f64 {
    0.25
}

fn sentinel() -> f64 {
    DEFAULT_COLLAPSE_SENTINEL
}

/// Transmission co-simulation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: PathBuf,
    pub road: PathBuf,
    #[serde(default)]
    pub stations: Option<PathBuf>,
    #[serde(default)]
    pub load_series: Option<PathBuf>,
    #[serde(default)]
    pub wind_series: Option<PathBuf>,
    #[serde(default)]
    pub solar_series: Option<PathBuf>,
    pub start_time: String,
    pub duration_hours: f64,
    #[serde(default = "quarter_hour")]
    pub dt_hours: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub initial_hdevs: u64,
    #[serde(default)]
    pub arrival_rate_per_hour: f64,
    #[serde(default)]
    pub hdev_params: HdevParams,
    /// Uniform over road nodes when absent.
    #[serde(default)]
    pub entry_distribution: Option<BTreeMap<NodeId, f64>>,
    #[serde(default)]
    pub destination_distribution: Option<BTreeMap<NodeId, f64>>,
    #[serde(default)]
    pub pf: PfOptions,
    #[serde(default)]
    pub band: ViolationBand,
    #[serde(default = "sentinel")]
    pub collapse_sentinel: f64,
    #[serde(default)]
    pub port_strategy: PortStrategy,
    #[serde(default)]
    pub seed_vehicles: Vec<SeedVehicle>,
}

fn resolve(base: &Path, field: &'static str, p: &Path) -> Result<PathBuf, ConfigError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if full.is_file() {
        Ok(full)
    } else {
        Err(ConfigError::MissingFile { field, path: full })
    }
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        Ok((io::load_json(path)?, base_dir(path)))
    }

    /// Loads every referenced file and builds the scenario.
    pub fn build(&self, base: &Path) -> Result<TransmissionScenario, ConfigError> {
        let network = io::load_network(&resolve(base, "network", &self.network)?)?;
        let road = io::load_road(&resolve(base, "road", &self.road)?)?;
        let start = parse_timestamp(&self.start_time)
            .ok_or_else(|| ConfigError::Value(format!("start_time: cannot parse {:?}", self.start_time)))?;
        let mut sc = TransmissionScenario::new(network, road, start, self.duration_hours);
        if let Some(p) = &self.stations {
            sc.stations = io::load_stations(&resolve(base, "stations", p)?)?;
        }
        let series = |field: &'static str, p: &Option<PathBuf>| -> Result<_, ConfigError> {
            p.as_ref()
                .map(|p| Ok(io::load_series(&resolve(base, field, p)?)?))
                .transpose()
        };
        sc.load = series("load_series", &self.load_series)?;
        sc.wind = series("wind_series", &self.wind_series)?;
        sc.solar = series("solar_series", &self.solar_series)?;
        let mut arrivals = ArrivalProcess::uniform(self.arrival_rate_per_hour, &sc.road);
        if let Some(d) = &self.entry_distribution {
            arrivals.entry_distribution = d.clone();
        }
        if let Some(d) = &self.destination_distribution {
            arrivals.destination_distribution = d.clone();
        }
        sc.arrivals = arrivals;
        sc.hdev_params = self.hdev_params;
        sc.initial_hdevs = self.initial_hdevs;
        sc.seed_vehicles = self.seed_vehicles.clone();
        sc.dt_hours = self.dt_hours;
        sc.rng_seed = self.rng_seed;
        sc.pf = self.pf;
        sc.band = self.band;
        sc.collapse_sentinel = self.collapse_sentinel;
        sc.port_strategy = self.port_strategy;
        Ok(sc)
    }
}

/// Distribution sweep config: feeder files plus the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub feeders: Vec<PathBuf>,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

impl SweepFile {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        Ok((io::load_json(path)?, base_dir(path)))
    }

    pub fn load_feeders(&self, base: &Path) -> Result<Vec<Feeder>, ConfigError> {
        if self.feeders.is_empty() {
            return Err(ConfigError::Value("feeders: list is empty".into()));
        }
        self.feeders
            .iter()
            .map(|p| Ok(io::load_feeder(&resolve(base, "feeders", p)?)?))
            .collect()
    }
}
