//! Fleet and station bookkeeping shared by the transmission engine: spawning,
//! vehicle stepping, and the station event phase.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fleet::{
    dispatch, spawn_arrivals, spawn_count, step_vehicle, ArrivalProcess, Fleet, FleetError, Hdev, HdevParams,
    VehicleEvent, VehicleId, VehicleState,
};
use crate::road::{NodeId, RoadGraph};
use crate::stations::{PortStrategy, StationError, StationRegistry, StationSpec};

use super::SimError;

/// A vehicle placed explicitly at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVehicle {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Defaults to a full battery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soc_kwh: Option<f64>,
}

/// Adds an unlimited-port station for every road node without one. Station
/// ids are road node ids.
pub fn complete_stations(road: &RoadGraph, specs: &[StationSpec]) -> Result<Vec<StationSpec>, SimError> {
    let mut out = specs.to_vec();
    for s in specs {
        if !road.contains(s.id) {
            return Err(SimError::Scenario(format!("station {} is not a road node", s.id)));
        }
    }
    for node in road.nodes() {
        if !specs.iter().any(|s| s.id == node.id) {
            out.push(StationSpec {
                id: node.id,
                bus_id: node.bus_id,
                n_ports: None,
                lat: node.lat,
                lon: node.lon,
            });
        }
    }
    out.sort_by_key(|s| s.id);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Mobility {
    pub fleet: Fleet,
    pub stations: StationRegistry,
    pub strategy: PortStrategy,
    /// Vehicles asking for a port, resolved in the station phase.
    pending: Vec<VehicleId>,
}

impl Mobility {
    pub fn new(stations: &[StationSpec], strategy: PortStrategy) -> Result<Self, StationError> {
        Ok(Mobility {
            fleet: Fleet::new(),
            stations: StationRegistry::new(stations)?,
            strategy,
            pending: Vec::new(),
        })
    }

    /// Phase 1: Poisson arrivals plus any explicit vehicles.
    #[allow(clippy::too_many_arguments)]
    pub fn spawn<R: Rng + ?Sized>(
        &mut self,
        process: &ArrivalProcess,
        params: &HdevParams,
        dt_hours: f64,
        fixed_count: u64,
        seeds: &[SeedVehicle],
        road: &RoadGraph,
        rng: &mut R,
    ) -> Result<(), FleetError> {
        let mut arrivals: Vec<Hdev> = Vec::new();
        let mut next = self.fleet.next_id();
        for s in seeds {
            for node in [s.origin, s.destination] {
                if !road.contains(node) {
                    return Err(FleetError::UnknownNode(node));
                }
            }
            let soc = s.soc_kwh.unwrap_or(params.capacity_kwh);
            arrivals.push(Hdev::new(next, *params, s.origin, s.destination, soc));
            next += 1;
        }
        if fixed_count > 0 {
            let batch = spawn_count(process, params, fixed_count, next, rng)?;
            next += batch.len() as u64;
            arrivals.extend(batch);
        }
        arrivals.extend(spawn_arrivals(process, params, dt_hours, next, rng)?);
        let wants = self.fleet.admit_new(arrivals, road);
        self.pending.extend(wants);
        Ok(())
    }

    /// Phase 2: advance every vehicle. Stepping is data-parallel; events come
    /// back ordered by vehicle id.
    pub fn step(&mut self, road: &RoadGraph, dt_hours: f64) -> Vec<(VehicleId, Vec<VehicleEvent>)> {
        self.fleet
            .vehicles
            .par_iter_mut()
            .map(|(&id, v)| (id, step_vehicle(v, road, dt_hours)))
            .filter(|(_, ev)| !ev.is_empty())
            .collect()
    }

    /// Phase 3: admissions and releases, then port assignment and retirement.
    pub fn process_events(
        &mut self,
        events: &[(VehicleId, Vec<VehicleEvent>)],
        road: &RoadGraph,
    ) -> Result<(), SimError> {
        let mut admit = std::mem::take(&mut self.pending);
        let mut finished = Vec::new();
        for (id, evs) in events {
            for e in evs {
                match e {
                    VehicleEvent::NeedsCharge(_) => admit.push(*id),
                    VehicleEvent::FullyCharged(_) => finished.push(*id),
                    _ => {}
                }
            }
        }
        for id in finished {
            self.stations.release(id, self.strategy, &self.fleet)?;
            let v = self.fleet.vehicles.get_mut(&id).expect("charging vehicle exists");
            dispatch(v, road);
        }
        for id in admit {
            let station = match self.fleet.vehicles[&id].state {
                VehicleState::Idle { station } => station,
                ref other => {
                    return Err(SimError::Scenario(format!(
                        "vehicle {id} asked to charge while {other:?}"
                    )))
                }
            };
            self.stations.admit(station, id)?;
        }
        self.stations.assign_ports(self.strategy, &self.fleet)?;
        self.sync_states();
        self.fleet.retire();
        Ok(())
    }

    /// Vehicle states follow the station registry: port holders charge,
    /// queued vehicles idle.
    fn sync_states(&mut self) {
        for st in self.stations.iter() {
            for id in &st.charging_set {
                if let Some(v) = self.fleet.vehicles.get_mut(id) {
                    v.state = VehicleState::Charging { station: st.id };
                }
            }
            for id in &st.wait_queue {
                if let Some(v) = self.fleet.vehicles.get_mut(id) {
                    v.state = VehicleState::Idle { station: st.id };
                }
            }
        }
    }
}
