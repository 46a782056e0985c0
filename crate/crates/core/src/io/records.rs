//! CSV export and re-import of step records and sweep samples.

use std::io::{Read, Write};

use chrono::NaiveDateTime;

use crate::sim::{format_timestamp, parse_timestamp, StepRecord, SweepSample};

use super::IoError;

pub const STEP_HEADER: [&str; 7] = [
    "timestamp",
    "n_charging",
    "n_idle",
    "n_moving",
    "n_departed",
    "converged",
    "n_violations",
];

/// The columns of a step record that go to CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSummary {
    pub timestamp: NaiveDateTime,
    pub n_charging: usize,
    pub n_idle: usize,
    pub n_moving: usize,
    pub n_departed: u64,
    pub converged: bool,
    pub n_violations: usize,
}

impl From<&StepRecord> for StepSummary {
    fn from(r: &StepRecord) -> Self {
        StepSummary {
            timestamp: r.timestamp,
            n_charging: r.n_charging,
            n_idle: r.n_idle,
            n_moving: r.n_moving,
            n_departed: r.n_departed,
            converged: r.converged,
            n_violations: r.n_violations,
        }
    }
}

pub fn write_step_records<W: Write>(records: &[StepRecord], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_HEADER)?;
    for r in records {
        w.write_record([
            format_timestamp(&r.timestamp),
            r.n_charging.to_string(),
            r.n_idle.to_string(),
            r.n_moving.to_string(),
            r.n_departed.to_string(),
            r.converged.to_string(),
            r.n_violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_step_records<R: Read>(input: R) -> Result<Vec<StepSummary>, IoError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(STEP_HEADER.iter().copied()) {
        return Err(IoError::Invalid {
            path: "<step records>".into(),
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |col: &str| IoError::Invalid {
            path: "<step records>".into(),
            msg: format!("line {line}: bad {col}"),
        };
        let num = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(STEP_HEADER[k]));
        out.push(StepSummary {
            timestamp: parse_timestamp(&rec[0]).ok_or_else(|| bad("timestamp"))?,
            n_charging: num(1)?,
            n_idle: num(2)?,
            n_moving: num(3)?,
            n_departed: rec[4].parse().map_err(|_| bad("n_departed"))?,
            converged: rec[5].parse().map_err(|_| bad("converged"))?,
            n_violations: num(6)?,
        });
    }
    Ok(out)
}

pub fn write_sweep_samples<W: Write>(samples: &[SweepSample], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_samples<R: Read>(input: R) -> Result<Vec<SweepSample>, IoError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(IoError::from))
        .collect()
}
