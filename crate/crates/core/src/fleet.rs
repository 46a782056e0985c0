//! Vehicle manager: HDEV state, battery dynamics, routing and arrivals.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::{NodeId, RoadGraph};

pub type VehicleId = u64;

/// Tolerance for treating a battery as full or an edge as finished.
const EPS: f64 = 1e-9;

/// Plausible charging-power envelope for heavy-duty vehicles, kW.
pub const CHARGE_KW_ENVELOPE: (f64, f64) = (75.0, 600.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdevParams {
    pub capacity_kwh: f64,
    pub consumption_kwh_per_mile: f64,
    pub speed_mph: f64,
    pub charge_kw: f64,
    /// Fraction of capacity kept in hand when deciding whether to charge.
    pub reserve_fraction: f64,
}

impl Default for HdevParams {
    fn default() -> Self {
        HdevParams {
            capacity_kwh: 900.0,
            consumption_kwh_per_mile: 2.0,
            speed_mph: 60.0,
            charge_kw: 150.0,
            reserve_fraction: 0.1,
        }
    }
}

impl HdevParams {
    /// Hard violations are errors; a charge rate outside the envelope is
    /// returned as a warning.
    pub fn validate(&self) -> Result<Vec<String>, FleetError> {
        let positive = [
            ("capacity_kwh", self.capacity_kwh),
            ("consumption_kwh_per_mile", self.consumption_kwh_per_mile),
            ("speed_mph", self.speed_mph),
            ("charge_kw", self.charge_kw),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FleetError::Params(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.reserve_fraction) {
            return Err(FleetError::Params(format!(
                "reserve_fraction must be in [0, 1), got {}",
                self.reserve_fraction
            )));
        }
        let (lo, hi) = CHARGE_KW_ENVELOPE;
        let mut warnings = Vec::new();
        if self.charge_kw < lo || self.charge_kw > hi {
            warnings.push(format!(
                "charge_kw {} outside the typical {lo}-{hi} kW range",
                self.charge_kw
            ));
        }
        Ok(warnings)
    }

    pub fn reserve_kwh(&self) -> f64 {
        self.reserve_fraction * self.capacity_kwh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VehicleState {
    /// Just entered the system at `node`; dispatched within the same step.
    Arriving {
        node: NodeId,
    },
    Moving {
        edge: (NodeId, NodeId),
        miles_remaining: f64,
    },
    Charging {
        station: NodeId,
    },
    /// Waiting at a station for a free port.
    Idle {
        station: NodeId,
    },
    Departed,
    /// Ran out of energy on the road.
    Stranded,
}

impl VehicleState {
    pub fn in_system(&self) -> bool {
        !matches!(self, VehicleState::Departed | VehicleState::Stranded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hdev {
    pub id: VehicleId,
    pub params: HdevParams,
    pub soc_kwh: f64,
    pub state: VehicleState,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Last node reached (the tail of the current edge while moving).
    pub location: NodeId,
    /// Nodes still to visit after `location` (after the current edge's head while moving).
    pub itinerary: VecDeque<NodeId>,
}

impl Hdev {
    pub fn new(id: VehicleId, params: HdevParams, origin: NodeId, destination: NodeId, soc_kwh: f64) -> Self {
        Hdev {
            id,
            params,
            soc_kwh: soc_kwh.clamp(0.0, params.capacity_kwh),
            state: VehicleState::Arriving { node: origin },
            origin,
            destination,
            location: origin,
            itinerary: VecDeque::new(),
        }
    }

    pub fn energy_to_full(&self) -> f64 {
        (self.params.capacity_kwh - self.soc_kwh).max(0.0)
    }

    fn is_full(&self) -> bool {
        self.soc_kwh >= self.params.capacity_kwh - EPS
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("invalid vehicle parameters: {0}")]
    Params(String),
    #[error("invalid arrival process: {0}")]
    Arrivals(String),
    #[error("vehicle {0} has already left the system")]
    NotInSystem(VehicleId),
    #[error("vehicle {0} is not at a node")]
    NotAtNode(VehicleId),
    #[error("negative leg length {0}")]
    NegativeLeg(f64),
    #[error("unknown road node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub rate_per_hour: f64,
    /// Starting-location weights by road node.
    pub entry_distribution: BTreeMap<NodeId, f64>,
    pub destination_distribution: BTreeMap<NodeId, f64>,
}

impl ArrivalProcess {
    /// Uniform entry and destination weights over every road node.
    pub fn uniform(rate_per_hour: f64, graph: &RoadGraph) -> Self {
        let weights: BTreeMap<NodeId, f64> = graph.node_ids().into_iter().map(|id| (id, 1.0)).collect();
        ArrivalProcess {
            rate_per_hour,
            entry_distribution: weights.clone(),
            destination_distribution: weights,
        }
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        if !(self.rate_per_hour >= 0.0 && self.rate_per_hour.is_finite()) {
            return Err(FleetError::Arrivals(format!(
                "rate must be >= 0, got {}",
                self.rate_per_hour
            )));
        }
        for (name, dist) in [
            ("entry", &self.entry_distribution),
            ("destination", &self.destination_distribution),
        ] {
            if dist.values().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(FleetError::Arrivals(format!("{name} weights must be finite and >= 0")));
            }
            if !dist.values().any(|w| *w > 0.0) {
                return Err(FleetError::Arrivals(format!("{name} weights are all zero")));
            }
        }
        let positive =
            |d: &BTreeMap<NodeId, f64>| d.iter().filter(|(_, w)| **w > 0.0).map(|(n, _)| *n).collect::<Vec<_>>();
        let (entries, dests) = (
            positive(&self.entry_distribution),
            positive(&self.destination_distribution),
        );
        if entries.len() == 1 && dests.len() == 1 && entries[0] == dests[0] {
            return Err(FleetError::Arrivals(
                "entry and destination weights only allow start == destination".into(),
            ));
        }
        Ok(())
    }
}

/// Draws a Poisson(rate·dt) count of new vehicles with distinct start and
/// destination nodes and initial SOC uniform in [50 %, 100 %] of capacity.
/// Ids are assigned consecutively from `first_id`.
pub fn spawn_arrivals<R: Rng + ?Sized>(
    process: &ArrivalProcess,
    params: &HdevParams,
    dt_hours: f64,
    first_id: VehicleId,
    rng: &mut R,
) -> Result<Vec<Hdev>, FleetError> {
    process.validate()?;
    if !(dt_hours > 0.0) {
        return Err(FleetError::Arrivals(format!("dt must be > 0, got {dt_hours}")));
    }
    let mean = process.rate_per_hour * dt_hours;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean)
        .map_err(|e| FleetError::Arrivals(e.to_string()))?
        .sample(rng) as u64;
    spawn_count(process, params, count, first_id, rng)
}

/// Same as [`spawn_arrivals`] with a fixed vehicle count.
pub fn spawn_count<R: Rng + ?Sized>(
    process: &ArrivalProcess,
    params: &HdevParams,
    count: u64,
    first_id: VehicleId,
    rng: &mut R,
) -> Result<Vec<Hdev>, FleetError> {
    process.validate()?;
    let (entry_nodes, entry_pick) = weighted(&process.entry_distribution)?;
    let (dest_nodes, dest_pick) = weighted(&process.destination_distribution)?;
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..count {
        let origin = entry_nodes[entry_pick.sample(rng)];
        let destination = loop {
            let d = dest_nodes[dest_pick.sample(rng)];
            if d != origin {
                break d;
            }
            // the only destination equals this origin: redraw the origin
            if dest_nodes.len() == 1 {
                break d;
            }
        };
        let soc = params.capacity_kwh * rng.random_range(0.5..=1.0);
        out.push(Hdev::new(first_id + k, *params, origin, destination, soc));
    }
    // a lone destination node forces origins elsewhere
    if dest_nodes.len() == 1 {
        for v in out.iter_mut().filter(|v| v.origin == v.destination) {
            let origin = loop {
                let o = entry_nodes[entry_pick.sample(rng)];
                if o != v.destination {
                    break o;
                }
            };
            v.origin = origin;
            v.location = origin;
            v.state = VehicleState::Arriving { node: origin };
        }
    }
    Ok(out)
}

fn weighted(dist: &BTreeMap<NodeId, f64>) -> Result<(Vec<NodeId>, WeightedIndex<f64>), FleetError> {
    let nodes: Vec<NodeId> = dist.keys().copied().collect();
    let index = WeightedIndex::new(dist.values().copied()).map_err(|e| FleetError::Arrivals(e.to_string()))?;
    Ok((nodes, index))
}

/// Stranding record kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrandedAudit {
    pub vehicle: VehicleId,
    pub at: NodeId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutePlan {
    Planned,
    AtDestination,
    Unreachable(StrandedAudit),
}

/// Replaces the itinerary with the shortest path from the current node.
/// Vehicles already at their destination, or unable to reach it, leave the
/// system as `Departed`.
pub fn plan_route(vehicle: &mut Hdev, graph: &RoadGraph) -> Result<RoutePlan, FleetError> {
    let here = match vehicle.state {
        VehicleState::Departed | VehicleState::Stranded => return Err(FleetError::NotInSystem(vehicle.id)),
        VehicleState::Moving { .. } => return Err(FleetError::NotAtNode(vehicle.id)),
        _ => vehicle.location,
    };
    let route = graph.shortest_path(here, vehicle.destination).map_err(|e| match e {
        crate::road::RoadError::UnknownNode(n) => FleetError::UnknownNode(n),
        other => FleetError::Arrivals(other.to_string()),
    })?;
    match route {
        None => {
            vehicle.itinerary.clear();
            vehicle.state = VehicleState::Departed;
            Ok(RoutePlan::Unreachable(StrandedAudit {
                vehicle: vehicle.id,
                at: here,
                reason: format!("destination {} unreachable", vehicle.destination),
            }))
        }
        Some(r) => {
            vehicle.itinerary = r.nodes.into_iter().skip(1).collect();
            if vehicle.itinerary.is_empty() {
                vehicle.state = VehicleState::Departed;
                Ok(RoutePlan::AtDestination)
            } else {
                Ok(RoutePlan::Planned)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeDecision {
    Proceed,
    ChargeFirst,
}

/// Charge first when SOC cannot cover the next leg plus the reserve.
pub fn charging_decision(vehicle: &Hdev, next_leg_miles: f64) -> Result<ChargeDecision, FleetError> {
    if next_leg_miles < 0.0 || next_leg_miles.is_nan() {
        return Err(FleetError::NegativeLeg(next_leg_miles));
    }
    let p = &vehicle.params;
    let needed = next_leg_miles * p.consumption_kwh_per_mile + p.reserve_kwh();
    Ok(if vehicle.soc_kwh < needed {
        ChargeDecision::ChargeFirst
    } else {
        ChargeDecision::Proceed
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum VehicleEvent {
    ArrivedAtNode(NodeId),
    /// Vehicle is now `Idle` at this station and asks for a port.
    NeedsCharge(NodeId),
    FullyCharged(NodeId),
    Departed(NodeId),
    Stranded {
        edge: (NodeId, NodeId),
        miles_short: f64,
    },
}

/// Sends a vehicle standing at `location` on its way: departs at the
/// destination, queues for charging when the next leg is not affordable,
/// otherwise starts the next edge. A full battery always proceeds.
pub fn dispatch(vehicle: &mut Hdev, graph: &RoadGraph) -> Vec<VehicleEvent> {
    let here = vehicle.location;
    let Some(&next) = vehicle.itinerary.front() else {
        vehicle.state = VehicleState::Departed;
        return vec![VehicleEvent::Departed(here)];
    };
    let leg = graph.edge_miles(here, next).expect("itinerary follows road edges");
    let decision = charging_decision(vehicle, leg).expect("edge lengths are positive");
    if decision == ChargeDecision::ChargeFirst && !vehicle.is_full() {
        vehicle.state = VehicleState::Idle { station: here };
        return vec![VehicleEvent::NeedsCharge(here)];
    }
    vehicle.itinerary.pop_front();
    vehicle.state = VehicleState::Moving {
        edge: (here, next),
        miles_remaining: leg,
    };
    Vec::new()
}

/// Advances one vehicle by `dt_hours`. Moving vehicles that reach a node use
/// the rest of the step on the next edge when they do not need to charge.
pub fn step_vehicle(vehicle: &mut Hdev, graph: &RoadGraph, dt_hours: f64) -> Vec<VehicleEvent> {
    let mut events = Vec::new();
    if !(dt_hours > 0.0) {
        return events;
    }
    let p = vehicle.params;
    match vehicle.state.clone() {
        VehicleState::Charging { station } => {
            let added = p.charge_kw * dt_hours;
            if vehicle.soc_kwh + added >= p.capacity_kwh - EPS {
                vehicle.soc_kwh = p.capacity_kwh;
                events.push(VehicleEvent::FullyCharged(station));
            } else {
                vehicle.soc_kwh += added;
            }
        }
        VehicleState::Moving { .. } => {
            let mut hours_left = dt_hours;
            while let VehicleState::Moving { edge, miles_remaining } = vehicle.state {
                if hours_left <= EPS * dt_hours {
                    break;
                }
                let reach = p.speed_mph * hours_left;
                let finishes = reach >= miles_remaining - EPS;
                let travel = if finishes { miles_remaining } else { reach };
                let energy = travel * p.consumption_kwh_per_mile;
                if energy > vehicle.soc_kwh + EPS {
                    let covered = vehicle.soc_kwh / p.consumption_kwh_per_mile;
                    vehicle.soc_kwh = 0.0;
                    vehicle.state = VehicleState::Stranded;
                    events.push(VehicleEvent::Stranded {
                        edge,
                        miles_short: miles_remaining - covered,
                    });
                    break;
                }
                vehicle.soc_kwh = (vehicle.soc_kwh - energy).max(0.0);
                if !finishes {
                    vehicle.state = VehicleState::Moving {
                        edge,
                        miles_remaining: miles_remaining - travel,
                    };
                    break;
                }
                hours_left -= travel / p.speed_mph;
                vehicle.location = edge.1;
                events.push(VehicleEvent::ArrivedAtNode(edge.1));
                events.extend(dispatch(vehicle, graph));
            }
        }
        VehicleState::Arriving { .. } | VehicleState::Idle { .. } | VehicleState::Departed | VehicleState::Stranded => {
        }
    }
    events
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetCounters {
    pub arrivals_total: u64,
    pub departed_total: u64,
    pub stranded_total: u64,
}

/// Owns every vehicle currently in the system. Vehicles that leave are
/// dropped and only counted.
#[derive(Debug, Clone, Default)]
pub struct Fleet {
    pub vehicles: BTreeMap<VehicleId, Hdev>,
    pub counters: FleetCounters,
    pub audits: Vec<StrandedAudit>,
    next_id: VehicleId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StateCounts {
    pub charging: usize,
    pub idle: usize,
    pub moving: usize,
}

impl Fleet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> VehicleId {
        self.next_id
    }

    pub fn in_system(&self) -> u64 {
        self.vehicles.len() as u64
    }

    /// Registers new vehicles, plans their routes and dispatches them.
    /// Returns ids of those now waiting for a charger.
    pub fn admit_new(&mut self, arrivals: Vec<Hdev>, graph: &RoadGraph) -> Vec<VehicleId> {
        let mut wants_charge = Vec::new();
        for mut v in arrivals {
            self.next_id = self.next_id.max(v.id + 1);
            self.counters.arrivals_total += 1;
            match plan_route(&mut v, graph) {
                Ok(RoutePlan::Planned) => {
                    let events = dispatch(&mut v, graph);
                    if events.iter().any(|e| matches!(e, VehicleEvent::NeedsCharge(_))) {
                        wants_charge.push(v.id);
                    }
                    self.vehicles.insert(v.id, v);
                }
                Ok(RoutePlan::AtDestination) => self.counters.departed_total += 1,
                Ok(RoutePlan::Unreachable(audit)) => {
                    self.counters.departed_total += 1;
                    self.audits.push(audit);
                }
                Err(e) => {
                    self.counters.departed_total += 1;
                    self.audits.push(StrandedAudit {
                        vehicle: v.id,
                        at: v.location,
                        reason: e.to_string(),
                    });
                }
            }
        }
        wants_charge
    }

    /// Removes vehicles that left the system and updates counters.
    pub fn retire(&mut self) {
        let gone: Vec<VehicleId> = self
            .vehicles
            .iter()
            .filter(|(_, v)| !v.state.in_system())
            .map(|(&id, _)| id)
            .collect();
        for id in gone {
            let v = self.vehicles.remove(&id).unwrap();
            if v.state == VehicleState::Stranded {
                self.counters.stranded_total += 1;
                self.audits.push(StrandedAudit {
                    vehicle: id,
                    at: v.location,
                    reason: "battery depleted on the road".into(),
                });
            } else {
                self.counters.departed_total += 1;
            }
        }
    }

    pub fn counts(&self) -> StateCounts {
        let mut c = StateCounts::default();
        for v in self.vehicles.values() {
            match v.state {
                VehicleState::Charging { .. } => c.charging += 1,
                VehicleState::Idle { .. } => c.idle += 1,
                VehicleState::Moving { .. } => c.moving += 1,
                _ => {}
            }
        }
        c
    }

    /// arrivals = departed + stranded + in-system.
    pub fn is_conserved(&self) -> bool {
        let c = self.counters;
        c.arrivals_total == c.departed_total + c.stranded_total + self.in_system()
    }
}
