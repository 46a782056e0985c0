//! Background load and renewable time series, interpolated per bus.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::Deserialize;
use thiserror::Error;

use crate::grid::BusId;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bus {bus}: samples cover {first}..{last}, run needs {start}..{end}")]
    Coverage {
        bus: BusId,
        first: NaiveDateTime,
        last: NaiveDateTime,
        start: NaiveDateTime,
        end: NaiveDateTime,
    },
    #[error("series is empty")]
    Empty,
}

/// Accepts `2024-06-01T00:00:00`, `2024-06-01 00:00:00`, fractional seconds
/// and RFC 3339 offsets (converted to UTC).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: NaiveDateTime,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Samples per bus, sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    buses: BTreeMap<BusId, Vec<Sample>>,
}

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: String,
    bus_id: BusId,
    p_mw: f64,
    #[serde(default)]
    q_mvar: Option<f64>,
}

impl TimeSeries {
    /// Parses `timestamp,bus_id,p_mw[,q_mvar]`. A missing `q_mvar` column
    /// reads as zero. Duplicate (bus, timestamp) pairs are rejected.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, SeriesError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut buses: BTreeMap<BusId, Vec<Sample>> = BTreeMap::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            // header is line 1
            let row = i + 2;
            let r = rec.map_err(|e| SeriesError::Row {
                row,
                msg: e.to_string(),
            })?;
            let t = parse_timestamp(&r.timestamp).ok_or_else(|| SeriesError::Row {
                row,
                msg: format!("bad timestamp {:?}", r.timestamp),
            })?;
            let q = r.q_mvar.unwrap_or(0.0);
            if !r.p_mw.is_finite() || !q.is_finite() {
                return Err(SeriesError::Row {
                    row,
                    msg: "non-finite power".into(),
                });
            }
            buses.entry(r.bus_id).or_default().push(Sample {
                t,
                p_mw: r.p_mw,
                q_mvar: q,
            });
        }
        let mut ts = TimeSeries { buses };
        for (bus, samples) in ts.buses.iter_mut() {
            samples.sort_by_key(|s| s.t);
            if let Some(w) = samples.windows(2).find(|w| w[0].t == w[1].t) {
                return Err(SeriesError::Row {
                    row: 0,
                    msg: format!("bus {bus}: duplicate timestamp {}", format_timestamp(&w[0].t)),
                });
            }
        }
        Ok(ts)
    }

    pub fn from_samples(buses: BTreeMap<BusId, Vec<Sample>>) -> Self {
        let mut ts = TimeSeries { buses };
        for s in ts.buses.values_mut() {
            s.sort_by_key(|s| s.t);
        }
        ts
    }

    pub fn buses(&self) -> impl Iterator<Item = BusId> + '_ {
        self.buses.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    /// Every bus must have samples at or before `start` and at or after `end`.
    pub fn check_coverage(&self, start: NaiveDateTime, end: NaiveDateTime) -> Result<(), SeriesError> {
        if self.buses.is_empty() {
            return Err(SeriesError::Empty);
        }
        for (&bus, s) in &self.buses {
            let first = s.first().map(|x| x.t).ok_or(SeriesError::Empty)?;
            let last = s.last().map(|x| x.t).ok_or(SeriesError::Empty)?;
            if first > start || last < end {
                return Err(SeriesError::Coverage {
                    bus,
                    first,
                    last,
                    start,
                    end,
                });
            }
        }
        Ok(())
    }

    /// Linearly interpolated `(p_mw, q_mvar)` per bus. Outside a bus's
    /// sample range the nearest sample is held.
    pub fn at(&self, t: NaiveDateTime) -> BTreeMap<BusId, (f64, f64)> {
        self.buses
            .iter()
            .filter_map(|(&bus, s)| interpolate(s, t).map(|v| (bus, v)))
            .collect()
    }
}

fn interpolate(samples: &[Sample], t: NaiveDateTime) -> Option<(f64, f64)> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t <= first.t {
        return Some((first.p_mw, first.q_mvar));
    }
    if t >= last.t {
        return Some((last.p_mw, last.q_mvar));
    }
    let hi = samples.partition_point(|s| s.t <= t);
    let (a, b) = (&samples[hi - 1], &samples[hi]);
    if a.t == t {
        return Some((a.p_mw, a.q_mvar));
    }
    let span = (b.t - a.t).num_milliseconds() as f64;
    let w = (t - a.t).num_milliseconds() as f64 / span;
    Some((a.p_mw + w * (b.p_mw - a.p_mw), a.q_mvar + w * (b.q_mvar - a.q_mvar)))
}
