//! Snapshot Monte Carlo sweeps: station siting on distribution feeders and
//! simultaneous charging load on a transmission network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{count_violations, ChargingObservation, ViolationBand};
use crate::grid::{BusId, Network};
use crate::pf::{
    export_voltages, sample_placement, solve_fbs, solve_nr, ExtraLoads, Feeder, PfOptions, DEFAULT_COLLAPSE_SENTINEL,
    DEFAULT_VEHICLE_KW,
};

use super::SimError;

/// Mixes a master seed with cell coordinates (splitmix64 finaliser per
/// word) so every sample owns an independent, reproducible stream.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub station_counts: Vec<usize>,
    pub vehicle_grid: Vec<u32>,
    pub samples_per_cell: usize,
    pub master_seed: u64,
    pub per_vehicle_kw: f64,
    pub band: ViolationBand,
    pub collapse_sentinel: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            station_counts: vec![5, 10, 20, 50],
            vehicle_grid: vec![0, 10, 20, 50, 100],
            samples_per_cell: 100,
            master_seed: 0,
            per_vehicle_kw: DEFAULT_VEHICLE_KW,
            band: ViolationBand::default(),
            collapse_sentinel: DEFAULT_COLLAPSE_SENTINEL,
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Scenario(m.to_string()));
        if self.station_counts.is_empty() {
            return bad("station_counts is empty");
        }
        if self.vehicle_grid.is_empty() {
            return bad("vehicle_grid is empty");
        }
        if self.samples_per_cell == 0 {
            return bad("samples_per_cell must be >= 1");
        }
        if !(self.per_vehicle_kw >= 0.0 && self.per_vehicle_kw.is_finite()) {
            return bad("per_vehicle_kw must be finite and >= 0");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be > 0 and max_iter >= 1");
        }
        self.band.validate().map_err(|e| SimError::Scenario(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub feeder: String,
    pub n_stations: usize,
    pub n_vehicles: u32,
    pub sample: usize,
    pub seed: u64,
    pub n_violations: usize,
    pub converged: bool,
    pub min_v_pu: f64,
}

/// A (feeder, station count, vehicle count) cell that could not be sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub feeder: String,
    pub n_stations: usize,
    pub n_vehicles: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub samples: Vec<SweepSample>,
    pub skipped: Vec<SkippedCell>,
}

impl SweepOutput {
    pub fn cell(&self, feeder: &str, n_stations: usize, n_vehicles: u32) -> impl Iterator<Item = &SweepSample> {
        let feeder = feeder.to_string();
        self.samples
            .iter()
            .filter(move |s| s.feeder == feeder && s.n_stations == n_stations && s.n_vehicles == n_vehicles)
    }
}

/// For each (feeder, station count, vehicle count) cell draws
/// `samples_per_cell` random placements, solves each with the sweep solver
/// and counts violating nodes. Infeasible cells are skipped and recorded.
pub fn run_distribution_sweep(feeders: &[Feeder], config: &SweepConfig) -> Result<SweepOutput, SimError> {
    config.validate()?;
    if feeders.is_empty() {
        return Err(SimError::Scenario("no feeders given".into()));
    }
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (fi, feeder) in feeders.iter().enumerate() {
        let candidates = feeder.candidates()?.len();
        for &n_stations in &config.station_counts {
            for &n_vehicles in &config.vehicle_grid {
                let reason = if n_stations > candidates {
                    Some(format!("{n_stations} stations requested, {candidates} candidate nodes"))
                } else if n_stations == 0 && n_vehicles > 0 {
                    Some("vehicles without stations".to_string())
                } else {
                    None
                };
                if let Some(reason) = reason {
                    log::warn!(
                        "skipping {} / {n_stations} stations / {n_vehicles} vehicles: {reason}",
                        feeder.name
                    );
                    skipped.push(SkippedCell {
                        feeder: feeder.name.clone(),
                        n_stations,
                        n_vehicles,
                        reason,
                    });
                    continue;
                }
                for sample in 0..config.samples_per_cell {
                    let seed = derive_seed(
                        config.master_seed,
                        &[fi as u64, n_stations as u64, n_vehicles as u64, sample as u64],
                    );
                    jobs.push((fi, n_stations, n_vehicles, sample, seed));
                }
            }
        }
    }

    let samples = jobs
        .into_par_iter()
        .map(|(fi, n_stations, n_vehicles, sample, seed)| {
            let feeder = &feeders[fi];
            let placement = sample_placement(feeder, n_stations, n_vehicles, seed, config.per_vehicle_kw)?;
            let sol = solve_fbs(feeder, &placement, config.tol, config.max_iter)?;
            let v = if sol.converged {
                sol.v_mag.clone()
            } else {
                vec![config.collapse_sentinel; sol.v_mag.len()]
            };
            Ok(SweepSample {
                feeder: feeder.name.clone(),
                n_stations,
                n_vehicles,
                sample,
                seed,
                n_violations: count_violations(&v, &config.band).count,
                converged: sol.converged,
                min_v_pu: v.iter().copied().fold(f64::INFINITY, f64::min),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(SweepOutput { samples, skipped })
}

/// One snapshot of the transmission station-load sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSweepPoint {
    pub n_charging: usize,
    pub sample: usize,
    pub n_violations: usize,
    pub converged: bool,
}

impl ChargingObservation for LoadSweepPoint {
    fn n_charging(&self) -> usize {
        self.n_charging
    }

    fn n_violations(&self) -> usize {
        self.n_violations
    }
}

/// Spreads each fleet size uniformly at random over the station buses,
/// solves the network and counts violations, `samples` times per size.
#[allow(clippy::too_many_arguments)]
pub fn run_station_load_sweep(
    network: &Network,
    station_buses: &[BusId],
    fleet_sizes: &[usize],
    samples: usize,
    per_vehicle_kw: f64,
    master_seed: u64,
    opts: &PfOptions,
    band: &ViolationBand,
    collapse_sentinel: f64,
) -> Result<Vec<LoadSweepPoint>, SimError> {
    if station_buses.is_empty() {
        return Err(SimError::Scenario("no station buses".into()));
    }
    if let Some(b) = station_buses.iter().find(|b| network.bus(**b).is_none()) {
        return Err(SimError::Scenario(format!("station bus {b} not in network")));
    }
    let jobs: Vec<(usize, usize)> = fleet_sizes
        .iter()
        .flat_map(|&n| (0..samples).map(move |s| (n, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(n, sample)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[n as u64, sample as u64]));
            let mut extra = ExtraLoads::new();
            for _ in 0..n {
                let bus = station_buses[rng.random_range(0..station_buses.len())];
                extra.add(bus, per_vehicle_kw / 1000.0, 0.0);
            }
            let sol = solve_nr(network, &extra, opts)?;
            let v = export_voltages(&sol, collapse_sentinel);
            Ok(LoadSweepPoint {
                n_charging: n,
                sample,
                n_violations: count_violations(&v, band).count,
                converged: sol.converged,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pf::{FeederLine, FeederNode, ImpedanceUnit};

    fn star_feeder() -> Feeder {
        let mut nodes = vec![FeederNode {
            id: 0,
            load_p: 0.0,
            load_q: 0.0,
            coord: None,
        }];
        let mut lines = Vec::new();
        for i in 1..=8 {
            nodes.push(FeederNode {
                id: i,
                load_p: 50.0,
                load_q: 10.0,
                coord: None,
            });
            lines.push(FeederLine {
                from: i.saturating_sub(4),
                to: i,
                r: 3.0,
                x: 5.0,
            });
        }
        Feeder {
            name: "star".into(),
            source_v: 1.0,
            base_kv: 12.47,
            base_mva: 1.0,
            source_node: None,
            nodes,
            lines,
            impedance_unit: ImpedanceUnit::Ohm,
            candidate_station_nodes: None,
        }
    }

    #[test]
    fn seeds_differ_per_cell_and_repeat() {
        let a = derive_seed(7, &[0, 5, 10, 0]);
        assert_eq!(a, derive_seed(7, &[0, 5, 10, 0]));
        assert_ne!(a, derive_seed(7, &[0, 5, 10, 1]));
        assert_ne!(a, derive_seed(8, &[0, 5, 10, 0]));
        assert_ne!(derive_seed(7, &[1, 0]), derive_seed(7, &[0, 1]));
    }

    #[test]
    fn zero_vehicles_match_background() {
        let cfg = SweepConfig {
            station_counts: vec![2, 4],
            vehicle_grid: vec![0],
            samples_per_cell: 5,
            ..Default::default()
        };
        let out = run_distribution_sweep(&[star_feeder()], &cfg).unwrap();
        assert_eq!(out.samples.len(), 10);
        assert!(out.samples.iter().all(|s| s.n_violations == 0 && s.converged));
    }

    #[test]
    fn infeasible_cells_are_skipped() {
        let cfg = SweepConfig {
            station_counts: vec![3, 50],
            vehicle_grid: vec![4, 8],
            samples_per_cell: 2,
            ..Default::default()
        };
        let out = run_distribution_sweep(&[star_feeder()], &cfg).unwrap();
        assert_eq!(out.samples.len(), 4);
        assert_eq!(out.skipped.len(), 2);
        assert!(out.skipped.iter().all(|s| s.n_stations == 50));
    }

    #[test]
    fn sweep_is_reproducible() {
        let cfg = SweepConfig {
            station_counts: vec![1, 3],
            vehicle_grid: vec![5, 15],
            samples_per_cell: 4,
            master_seed: 42,
            ..Default::default()
        };
        let f = [star_feeder()];
        let a = run_distribution_sweep(&f, &cfg).unwrap();
        assert_eq!(a, run_distribution_sweep(&f, &cfg).unwrap());
        assert!(a.samples.iter().any(|s| s.n_violations > 0));
    }

    #[test]
    fn empty_grids_rejected() {
        let cfg = SweepConfig {
            station_counts: vec![],
            ..Default::default()
        };
        assert!(run_distribution_sweep(&[star_feeder()], &cfg).is_err());
    }
}
