//! Charging stations: port assignment, queues and aggregate power draw.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{Fleet, VehicleId};
use crate::grid::BusId;
use crate::road::NodeId;

pub type StationId = NodeId;

/// What a station needs to know about the vehicles it serves.
pub trait FleetView {
    fn charge_kw(&self, id: VehicleId) -> Option<f64>;
    fn energy_to_full_kwh(&self, id: VehicleId) -> Option<f64>;
}

impl FleetView for Fleet {
    fn charge_kw(&self, id: VehicleId) -> Option<f64> {
        self.vehicles.get(&id).map(|v| v.params.charge_kw)
    }

    fn energy_to_full_kwh(&self, id: VehicleId) -> Option<f64> {
        self.vehicles.get(&id).map(|v| v.energy_to_full())
    }
}

/// `(charge_kw, energy_to_full_kwh)` per vehicle.
impl FleetView for HashMap<VehicleId, (f64, f64)> {
    fn charge_kw(&self, id: VehicleId) -> Option<f64> {
        self.get(&id).map(|v| v.0)
    }

    fn energy_to_full_kwh(&self, id: VehicleId) -> Option<f64> {
        self.get(&id).map(|v| v.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortStrategy {
    #[default]
    Fifo,
    ShortestRemainingCharge,
}

#[derive(Debug, Error, PartialEq)]
pub enum StationError {
    #[error("vehicle {vehicle} is already at station {station}")]
    Duplicate { vehicle: VehicleId, station: StationId },
    #[error("vehicle {vehicle} is not at station {station}")]
    Absent { vehicle: VehicleId, station: StationId },
    #[error("vehicle {0} cannot be resolved in the fleet")]
    Unresolved(VehicleId),
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("station {0} must have at least one port")]
    NoPorts(StationId),
    #[error("duplicate station {0}")]
    DuplicateStation(StationId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingStation {
    pub id: StationId,
    pub bus_id: BusId,
    /// `None` means unlimited ports.
    pub n_ports: Option<u32>,
    /// Occupied ports in admission order.
    pub charging_set: Vec<VehicleId>,
    pub wait_queue: VecDeque<VehicleId>,
}

impl ChargingStation {
    pub fn new(id: StationId, bus_id: BusId, n_ports: Option<u32>) -> Result<Self, StationError> {
        if n_ports == Some(0) {
            return Err(StationError::NoPorts(id));
        }
        Ok(ChargingStation {
            id,
            bus_id,
            n_ports,
            charging_set: Vec::new(),
            wait_queue: VecDeque::new(),
        })
    }

    pub fn contains(&self, vehicle: VehicleId) -> bool {
        self.charging_set.contains(&vehicle) || self.wait_queue.contains(&vehicle)
    }

    pub fn free_ports(&self) -> usize {
        match self.n_ports {
            None => usize::MAX,
            Some(n) => (n as usize).saturating_sub(self.charging_set.len()),
        }
    }

    /// Takes a free port when one exists, otherwise joins the queue tail.
    /// Returns whether the vehicle is charging.
    pub fn admit(&mut self, vehicle: VehicleId) -> Result<bool, StationError> {
        if self.contains(vehicle) {
            return Err(StationError::Duplicate {
                vehicle,
                station: self.id,
            });
        }
        if self.free_ports() > 0 && self.wait_queue.is_empty() {
            self.charging_set.push(vehicle);
            Ok(true)
        } else {
            self.wait_queue.push_back(vehicle);
            Ok(false)
        }
    }

    /// Removes a vehicle without filling the port it frees.
    pub fn withdraw(&mut self, vehicle: VehicleId) -> Result<(), StationError> {
        if let Some(i) = self.charging_set.iter().position(|&v| v == vehicle) {
            self.charging_set.remove(i);
        } else if let Some(i) = self.wait_queue.iter().position(|&v| v == vehicle) {
            self.wait_queue.remove(i);
        } else {
            return Err(StationError::Absent {
                vehicle,
                station: self.id,
            });
        }
        Ok(())
    }

    /// Removes a vehicle and promotes the queue head into any freed port.
    /// Returns the promoted vehicles.
    pub fn release(&mut self, vehicle: VehicleId) -> Result<Vec<VehicleId>, StationError> {
        self.withdraw(vehicle)?;
        let mut promoted = Vec::new();
        while self.free_ports() > 0 {
            let Some(next) = self.wait_queue.pop_front() else { break };
            self.charging_set.push(next);
            promoted.push(next);
        }
        Ok(promoted)
    }

    /// Fills free ports from the queue in strategy order. Vehicles already
    /// charging keep their ports. Returns the promoted vehicles.
    pub fn assign_ports(
        &mut self,
        strategy: PortStrategy,
        fleet: &impl FleetView,
    ) -> Result<Vec<VehicleId>, StationError> {
        let free = self.free_ports();
        if free == 0 || self.wait_queue.is_empty() {
            return Ok(Vec::new());
        }
        let chosen: Vec<VehicleId> = match strategy {
            PortStrategy::Fifo => self.wait_queue.iter().take(free).copied().collect(),
            PortStrategy::ShortestRemainingCharge => {
                let mut ranked = Vec::with_capacity(self.wait_queue.len());
                for (arrival, &v) in self.wait_queue.iter().enumerate() {
                    let need = fleet.energy_to_full_kwh(v).ok_or(StationError::Unresolved(v))?;
                    ranked.push((need, arrival, v));
                }
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                ranked.into_iter().take(free).map(|(_, _, v)| v).collect()
            }
        };
        self.wait_queue.retain(|v| !chosen.contains(v));
        self.charging_set.extend(&chosen);
        Ok(chosen)
    }

    /// kW drawn by the vehicles occupying ports; queued vehicles draw nothing.
    pub fn aggregate_power(&self, fleet: &impl FleetView) -> Result<f64, StationError> {
        self.charging_set
            .iter()
            .map(|&v| fleet.charge_kw(v).ok_or(StationError::Unresolved(v)))
            .sum()
    }
}

/// Station description as read from a station file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: StationId,
    pub bus_id: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ports: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFile {
    pub stations: Vec<StationSpec>,
}

/// All stations of a run, enforcing that a vehicle is at one station at most.
#[derive(Debug, Clone, Default)]
pub struct StationRegistry {
    stations: BTreeMap<StationId, ChargingStation>,
    location: HashMap<VehicleId, StationId>,
}

impl StationRegistry {
    pub fn new(specs: &[StationSpec]) -> Result<Self, StationError> {
        let mut stations = BTreeMap::new();
        for s in specs {
            let st = ChargingStation::new(s.id, s.bus_id, s.n_ports)?;
            if stations.insert(s.id, st).is_some() {
                return Err(StationError::DuplicateStation(s.id));
            }
        }
        Ok(StationRegistry {
            stations,
            location: HashMap::new(),
        })
    }

    pub fn get(&self, id: StationId) -> Option<&ChargingStation> {
        self.stations.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChargingStation> {
        self.stations.values()
    }

    pub fn station_of(&self, vehicle: VehicleId) -> Option<StationId> {
        self.location.get(&vehicle).copied()
    }

    pub fn admit(&mut self, station: StationId, vehicle: VehicleId) -> Result<bool, StationError> {
        if let Some(&at) = self.location.get(&vehicle) {
            return Err(StationError::Duplicate { vehicle, station: at });
        }
        let st = self
            .stations
            .get_mut(&station)
            .ok_or(StationError::UnknownStation(station))?;
        let charging = st.admit(vehicle)?;
        self.location.insert(vehicle, station);
        Ok(charging)
    }

    /// Releases a vehicle; freed ports are refilled per `strategy`.
    pub fn release(
        &mut self,
        vehicle: VehicleId,
        strategy: PortStrategy,
        fleet: &impl FleetView,
    ) -> Result<Vec<VehicleId>, StationError> {
        let station = self.location.get(&vehicle).copied().ok_or(StationError::Absent {
            vehicle,
            station: StationId::MAX,
        })?;
        let st = self.stations.get_mut(&station).expect("registry is consistent");
        let promoted = match strategy {
            PortStrategy::Fifo => st.release(vehicle)?,
            PortStrategy::ShortestRemainingCharge => {
                st.withdraw(vehicle)?;
                st.assign_ports(strategy, fleet)?
            }
        };
        self.location.remove(&vehicle);
        Ok(promoted)
    }

    pub fn assign_ports(
        &mut self,
        strategy: PortStrategy,
        fleet: &impl FleetView,
    ) -> Result<Vec<VehicleId>, StationError> {
        let mut promoted = Vec::new();
        for st in self.stations.values_mut() {
            promoted.extend(st.assign_ports(strategy, fleet)?);
        }
        Ok(promoted)
    }

    /// Charging kW summed per grid bus.
    pub fn bus_loads_kw(&self, fleet: &impl FleetView) -> Result<BTreeMap<BusId, f64>, StationError> {
        let mut out = BTreeMap::new();
        for st in self.stations.values() {
            let kw = st.aggregate_power(fleet)?;
            *out.entry(st.bus_id).or_insert(0.0) += kw;
        }
        Ok(out)
    }

    pub fn total_charging(&self) -> usize {
        self.stations.values().map(|s| s.charging_set.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(entries: &[(VehicleId, f64, f64)]) -> HashMap<VehicleId, (f64, f64)> {
        entries.iter().map(|&(id, kw, need)| (id, (kw, need))).collect()
    }

    #[test]
    fn admit_to_free_port_then_queue() {
        let mut st = ChargingStation::new(1, 10, Some(2)).unwrap();
        assert!(st.admit(1).unwrap());
        assert_eq!(st.charging_set, vec![1]);

        let mut full = ChargingStation::new(2, 10, Some(1)).unwrap();
        full.admit(1).unwrap();
        assert!(!full.admit(2).unwrap());
        assert_eq!(full.wait_queue, VecDeque::from([2]));
        assert!(matches!(full.admit(1), Err(StationError::Duplicate { .. })));
    }

    #[test]
    fn release_promotes_queue_head() {
        let mut st = ChargingStation::new(1, 10, Some(1)).unwrap();
        st.admit(1).unwrap();
        st.admit(2).unwrap();
        st.admit(3).unwrap();
        assert_eq!(st.release(1).unwrap(), vec![2]);
        assert_eq!(st.charging_set, vec![2]);
        // queued vehicle leaves: ports untouched
        assert!(st.release(3).unwrap().is_empty());
        assert_eq!(st.charging_set, vec![2]);
        assert!(st.wait_queue.is_empty());
        assert!(matches!(st.release(9), Err(StationError::Absent { vehicle: 9, .. })));
    }

    #[test]
    fn aggregate_counts_only_ports() {
        let fleet = view(&[(1, 150.0, 0.0), (2, 150.0, 0.0), (3, 150.0, 0.0), (4, 150.0, 0.0)]);
        let mut st = ChargingStation::new(1, 10, Some(3)).unwrap();
        assert_eq!(st.aggregate_power(&fleet).unwrap(), 0.0);
        for v in 1..=4 {
            st.admit(v).unwrap();
        }
        assert_eq!(st.aggregate_power(&fleet).unwrap(), 450.0);

        let ten: Vec<_> = (1..=10).map(|v| (v, 150.0, 0.0)).collect();
        let mut open = ChargingStation::new(1, 10, None).unwrap();
        for v in 1..=10 {
            open.admit(v).unwrap();
        }
        assert_eq!(open.aggregate_power(&view(&ten)).unwrap(), 1500.0);
        open.admit(99).unwrap();
        assert_eq!(open.aggregate_power(&view(&ten)), Err(StationError::Unresolved(99)));
    }

    #[test]
    fn fifo_and_shortest_remaining_assignment() {
        let fleet = view(&[(1, 150.0, 400.0), (2, 150.0, 50.0)]);
        let mut base = ChargingStation::new(1, 10, Some(1)).unwrap();
        base.wait_queue = VecDeque::from([1, 2]);

        let mut fifo = base.clone();
        assert_eq!(fifo.assign_ports(PortStrategy::Fifo, &fleet).unwrap(), vec![1]);
        let mut src = base.clone();
        assert_eq!(
            src.assign_ports(PortStrategy::ShortestRemainingCharge, &fleet).unwrap(),
            vec![2]
        );
        assert_eq!(src.wait_queue, VecDeque::from([1]));

        let tied = view(&[(1, 150.0, 100.0), (2, 150.0, 100.0)]);
        let mut tie = base.clone();
        assert_eq!(
            tie.assign_ports(PortStrategy::ShortestRemainingCharge, &tied).unwrap(),
            vec![1]
        );
    }

    #[test]
    fn registry_blocks_double_presence() {
        let specs = [
            StationSpec {
                id: 1,
                bus_id: 5,
                n_ports: Some(1),
                lat: None,
                lon: None,
            },
            StationSpec {
                id: 2,
                bus_id: 5,
                n_ports: None,
                lat: None,
                lon: None,
            },
        ];
        let mut reg = StationRegistry::new(&specs).unwrap();
        assert!(reg.admit(1, 7).unwrap());
        assert!(reg.admit(2, 7).is_err());
        assert!(reg.admit(1, 8).is_ok());
        let fleet = view(&[(7, 150.0, 0.0), (8, 150.0, 0.0)]);
        assert_eq!(reg.bus_loads_kw(&fleet).unwrap(), BTreeMap::from([(5, 150.0)]));
        assert_eq!(reg.release(7, PortStrategy::Fifo, &fleet).unwrap(), vec![8]);
        assert_eq!(reg.station_of(7), None);
        assert_eq!(reg.station_of(8), Some(1));
        assert!(ChargingStation::new(3, 1, Some(0)).is_err());
    }
}
