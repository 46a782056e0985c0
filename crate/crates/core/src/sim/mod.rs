//! Simulation drivers: the time-stepped transmission co-simulation and the
//! distribution snapshot sweeps.

pub mod mobility;
pub mod sweep;
pub mod timeseries;
pub mod transmission;

use thiserror::Error;

use crate::fleet::FleetError;
use crate::pf::{FeederError, PfError};
use crate::stations::StationError;

pub use mobility::{complete_stations, Mobility, SeedVehicle};
pub use sweep::{
    run_distribution_sweep, run_station_load_sweep, LoadSweepPoint, SkippedCell, SweepConfig, SweepOutput, SweepSample,
};
pub use timeseries::{format_timestamp, parse_timestamp, SeriesError, TimeSeries};
pub use transmission::{run_transmission_scenario, StepRecord, TransmissionScenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Station(#[from] StationError),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("time series: {0}")]
    Series(#[from] SeriesError),
    #[error("vehicle count not conserved at step {0}")]
    Conservation(usize),
}
