//! Time-stepped fleet/grid co-simulation on a transmission network.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{count_violations, ChargingObservation, ViolationBand};
use crate::fleet::{ArrivalProcess, HdevParams};
use crate::grid::{BusId, Network};
use crate::pf::{export_voltages, solve_nr_from, ExtraLoads, PfOptions, PfSolution, DEFAULT_COLLAPSE_SENTINEL};
use crate::road::RoadGraph;
use crate::stations::{PortStrategy, StationSpec};

use super::mobility::{complete_stations, Mobility, SeedVehicle};
use super::timeseries::TimeSeries;
use super::SimError;

#[derive(Debug, Clone)]
pub struct TransmissionScenario {
    pub network: Network,
    pub road: RoadGraph,
    /// Explicit stations; road nodes without one get an unlimited station
    /// on their own bus.
    pub stations: Vec<StationSpec>,
    pub arrivals: ArrivalProcess,
    pub hdev_params: HdevParams,
    /// Vehicles drawn from the arrival distributions at the first step.
    pub initial_hdevs: u64,
    pub seed_vehicles: Vec<SeedVehicle>,
    /// Replaces bus loads (MW, MVAr) where present.
    pub load: Option<TimeSeries>,
    /// Injected as negative load.
    pub wind: Option<TimeSeries>,
    pub solar: Option<TimeSeries>,
    pub start_time: NaiveDateTime,
    pub duration_hours: f64,
    pub dt_hours: f64,
    pub rng_seed: u64,
    pub pf: PfOptions,
    pub band: ViolationBand,
    pub collapse_sentinel: f64,
    pub port_strategy: PortStrategy,
}

impl TransmissionScenario {
    /// A scenario with no vehicles, no background series and defaults for
    /// everything else.
    pub fn new(network: Network, road: RoadGraph, start_time: NaiveDateTime, duration_hours: f64) -> Self {
        let arrivals = ArrivalProcess::uniform(0.0, &road);
        TransmissionScenario {
            network,
            road,
            stations: Vec::new(),
            arrivals,
            hdev_params: HdevParams::default(),
            initial_hdevs: 0,
            seed_vehicles: Vec::new(),
            load: None,
            wind: None,
            solar: None,
            start_time,
            duration_hours,
            dt_hours: 0.25,
            rng_seed: 0,
            pf: PfOptions::default(),
            band: ViolationBand::default(),
            collapse_sentinel: DEFAULT_COLLAPSE_SENTINEL,
            port_strategy: PortStrategy::Fifo,
        }
    }

    pub fn n_steps(&self) -> usize {
        ((self.duration_hours / self.dt_hours).round() as usize).max(1)
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        let ms = (step as f64 * self.dt_hours * 3_600_000.0).round() as i64;
        self.start_time + Duration::milliseconds(ms)
    }

    /// Checks everything that can be checked before stepping. Returns
    /// non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, SimError> {
        if !(self.duration_hours > 0.0 && self.duration_hours.is_finite()) {
            return Err(SimError::Scenario(format!(
                "duration must be > 0, got {}",
                self.duration_hours
            )));
        }
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(SimError::Scenario(format!("dt must be > 0, got {}", self.dt_hours)));
        }
        self.band.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        let report = self.network.validate();
        if !report.is_valid() {
            return Err(SimError::Scenario(format!("network is invalid:\n{report}")));
        }
        let warnings = self.hdev_params.validate()?;
        self.arrivals.validate()?;
        for node in self
            .arrivals
            .entry_distribution
            .keys()
            .chain(self.arrivals.destination_distribution.keys())
        {
            if !self.road.contains(*node) {
                return Err(SimError::Scenario(format!(
                    "arrival distribution names unknown road node {node}"
                )));
            }
        }
        let stations = complete_stations(&self.road, &self.stations)?;
        for s in &stations {
            if self.network.bus(s.bus_id).is_none() {
                return Err(SimError::Scenario(format!(
                    "station {} sits on unknown bus {}",
                    s.id, s.bus_id
                )));
            }
        }
        let end = self.timestamp(self.n_steps() - 1);
        for (name, series) in [("load", &self.load), ("wind", &self.wind), ("solar", &self.solar)] {
            if let Some(ts) = series {
                if let Some(bus) = ts.buses().find(|b| self.network.bus(*b).is_none()) {
                    return Err(SimError::Scenario(format!("{name} series names unknown bus {bus}")));
                }
                ts.check_coverage(self.start_time, end)?;
            }
        }
        Ok(warnings)
    }
}

/// One simulated timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestamp: NaiveDateTime,
    pub n_charging: usize,
    pub n_idle: usize,
    pub n_moving: usize,
    /// Cumulative departures since the start of the run.
    pub n_departed: u64,
    /// Cumulative strandings since the start of the run.
    pub n_stranded: u64,
    /// Station charging power per bus, kW.
    pub station_kw: BTreeMap<BusId, f64>,
    pub converged: bool,
    pub collapsed: bool,
    pub iterations: usize,
    /// Per bus in network order; the collapse sentinel on collapsed steps.
    pub v_mag: Vec<f64>,
    pub n_violations: usize,
    pub violating: Vec<BusId>,
}

impl StepRecord {
    pub fn total_station_kw(&self) -> f64 {
        self.station_kw.values().sum()
    }

    pub fn in_system(&self) -> usize {
        self.n_charging + self.n_idle + self.n_moving
    }
}

impl ChargingObservation for StepRecord {
    fn n_charging(&self) -> usize {
        self.n_charging
    }

    fn n_violations(&self) -> usize {
        self.n_violations
    }
}

/// Background (MW, MVAr) at `t`: load series replace bus loads, wind and
/// solar become negative extra load.
fn background(scenario: &TransmissionScenario, t: NaiveDateTime) -> (Network, ExtraLoads) {
    let mut net = scenario.network.clone();
    let mut extra = ExtraLoads::new();
    if let Some(load) = &scenario.load {
        let now = load.at(t);
        for bus in net.buses.iter_mut() {
            if let Some(&(p, q)) = now.get(&bus.id) {
                bus.load_p = p;
                bus.load_q = q;
            }
        }
    }
    for series in [&scenario.wind, &scenario.solar].into_iter().flatten() {
        for (bus, (p, q)) in series.at(t) {
            extra.add(bus, -p, -q);
        }
    }
    (net, extra)
}

/// Runs the scenario. Per step, in order: spawn arrivals, step vehicles,
/// process station admissions and releases, aggregate station power per
/// bus, apply the background for the timestamp, solve the power flow
/// (warm-started from the previous converged step), record.
pub fn run_transmission_scenario(scenario: &TransmissionScenario) -> Result<Vec<StepRecord>, SimError> {
    for w in scenario.validate()? {
        log::warn!("{w}");
    }
    let stations = complete_stations(&scenario.road, &scenario.stations)?;
    let mut mobility = Mobility::new(&stations, scenario.port_strategy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let bus_ids = scenario.network.bus_ids();
    let mut previous: Option<PfSolution> = None;
    let mut records = Vec::with_capacity(scenario.n_steps());

    for step in 0..scenario.n_steps() {
        let t = scenario.timestamp(step);
        let (fixed, seeds) = if step == 0 {
            (scenario.initial_hdevs, scenario.seed_vehicles.as_slice())
        } else {
            (0, &[][..])
        };
        mobility.spawn(
            &scenario.arrivals,
            &scenario.hdev_params,
            scenario.dt_hours,
            fixed,
            seeds,
            &scenario.road,
            &mut rng,
        )?;
        let events = mobility.step(&scenario.road, scenario.dt_hours);
        mobility.process_events(&events, &scenario.road)?;
        if !mobility.fleet.is_conserved() {
            return Err(SimError::Conservation(step));
        }

        let station_kw = mobility.stations.bus_loads_kw(&mobility.fleet)?;
        let (net, mut extra) = background(scenario, t);
        for (&bus, &kw) in &station_kw {
            extra.add(bus, kw / 1000.0, 0.0);
        }

        let warm = previous.as_ref().filter(|p| p.converged && !p.collapsed);
        let opts = PfOptions {
            flat_start: warm.is_none(),
            ..scenario.pf
        };
        let sol = solve_nr_from(&net, &extra, &opts, warm)?;
        let v_mag = export_voltages(&sol, scenario.collapse_sentinel);
        let violations = count_violations(&v_mag, &scenario.band);
        let counts = mobility.fleet.counts();
        records.push(StepRecord {
            timestamp: t,
            n_charging: counts.charging,
            n_idle: counts.idle,
            n_moving: counts.moving,
            n_departed: mobility.fleet.counters.departed_total,
            n_stranded: mobility.fleet.counters.stranded_total,
            station_kw,
            converged: sol.converged,
            collapsed: sol.collapsed,
            iterations: sol.iterations,
            violating: violations.buses.iter().map(|&i| bus_ids[i]).collect(),
            n_violations: violations.count,
            v_mag,
        });
        previous = Some(sol);
    }
    Ok(records)
}
