//! File formats: JSON data files, time-series and record CSVs, GeoJSON.

pub mod geojson;
pub mod records;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::grid::Network;
use crate::pf::Feeder;
use crate::road::{RoadError, RoadFile, RoadGraph};
use crate::sim::{SeriesError, TimeSeries};
use crate::stations::{StationFile, StationSpec};

pub use geojson::{export_geojson, network_coords};
pub use records::{read_step_records, read_sweep_samples, write_step_records, write_sweep_samples, StepSummary};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: at `{field}`: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::Open {
        path: path.to_path_buf(),
        source,
    })
}

/// Deserializes JSON from a reader; errors carry line, column and the
/// dotted path of the offending field.
pub fn parse_json<T: DeserializeOwned, R: std::io::Read>(reader: R, path: &Path) -> Result<T, IoError> {
    let mut de = serde_json::Deserializer::from_reader(reader);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            msg: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        msg: e.to_string(),
    })?;
    Ok(value)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    parse_json(open(path)?, path)
}

/// Parses a case file. Structural problems are left to `Network::validate`.
pub fn load_network(path: &Path) -> Result<Network, IoError> {
    load_json(path)
}

pub fn load_feeder(path: &Path) -> Result<Feeder, IoError> {
    let mut f: Feeder = load_json(path)?;
    if f.name.is_empty() {
        f.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(f)
}

pub fn load_road(path: &Path) -> Result<RoadGraph, IoError> {
    let file: RoadFile = load_json(path)?;
    RoadGraph::try_from(file).map_err(|e: RoadError| IoError::Invalid {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_stations(path: &Path) -> Result<Vec<StationSpec>, IoError> {
    let file: StationFile = load_json(path)?;
    Ok(file.stations)
}

pub fn load_series(path: &Path) -> Result<TimeSeries, IoError> {
    TimeSeries::from_csv(open(path)?).map_err(|e: SeriesError| IoError::Invalid {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
