//! Shared fixtures for the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use gridhaul::fleet::{ArrivalProcess, HdevParams, VehicleState};
use gridhaul::grid::{Branch, Bus, BusKind, Generator, Network};
use gridhaul::road::{RoadEdge, RoadGraph, RoadNode};
use gridhaul::sim::Mobility;
use gridhaul::stations::{PortStrategy, StationSpec};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn data(name: &str) -> PathBuf {
    data_dir().join(name)
}

// ---------------------------------------------------------------------------
// Gauss-Seidel reference solver. Deliberately shares nothing with the
// library solver: dense admittance built straight from the branch list,
// plain complex arithmetic, no Jacobian.

fn dense_ybus(net: &Network) -> Vec<Vec<Complex64>> {
    let n = net.buses.len();
    let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, b) in net.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.shunt_g, b.shunt_b);
    }
    for br in net.branches.iter().filter(|b| b.in_service) {
        let (f, t) = (pos(br.from_bus), pos(br.to_bus));
        let z = Complex64::new(br.r, br.x);
        let ys = Complex64::new(1.0, 0.0) / z;
        let bc = Complex64::new(0.0, br.b_charging / 2.0);
        // ideal transformer a = tap·e^{j·shift} on the from side
        let a = Complex64::new(br.tap * br.shift.cos(), br.tap * br.shift.sin());
        y[f][f] += (ys + bc) / (a * a.conj());
        y[t][t] += ys + bc;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    y
}

/// Gauss-Seidel power flow. Returns (|V|, angle) per bus in network order.
pub fn gauss_seidel(net: &Network) -> (Vec<f64>, Vec<f64>) {
    let n = net.buses.len();
    let y = dense_ybus(net);
    let base = net.base_mva;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut vset = vec![1.0; n];
    for (i, b) in net.buses.iter().enumerate() {
        p[i] -= b.load_p / base;
        q[i] -= b.load_q / base;
        vset[i] = b.v_set;
        if let Some(g) = net.generators.iter().find(|g| g.bus == b.id) {
            vset[i] = g.v_set;
        }
    }
    for g in &net.generators {
        let i = net.buses.iter().position(|b| b.id == g.bus).unwrap();
        p[i] += g.p_set / base;
    }
    let kind: Vec<BusKind> = net.buses.iter().map(|b| b.kind).collect();
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| match kind[i] {
            BusKind::PQ => Complex64::new(1.0, 0.0),
            _ => Complex64::new(vset[i], 0.0),
        })
        .collect();

    for _ in 0..500_000 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if kind[i] == BusKind::Slack {
                continue;
            }
            let sum: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[i][j] * v[j]).sum();
            let qi = if kind[i] == BusKind::PV {
                -(v[i].conj() * (sum + y[i][i] * v[i])).im
            } else {
                q[i]
            };
            let s = Complex64::new(p[i], qi);
            let mut next = (s.conj() / v[i].conj() - sum) / y[i][i];
            if kind[i] == BusKind::PV {
                next = next / next.norm() * vset[i];
            }
            worst = worst.max((next - v[i]).norm());
            v[i] = next;
        }
        if worst < 1e-14 {
            break;
        }
    }
    (
        v.iter().map(|x| x.norm()).collect(),
        v.iter().map(|x| x.arg()).collect(),
    )
}

// ---------------------------------------------------------------------------
// Hand-built networks of at most ten buses.

fn bus(id: u32, kind: BusKind, v_set: f64, p: f64, q: f64) -> Bus {
    let mut b = Bus::new(id as _, kind, 138.0);
    b.v_set = v_set;
    b.load_p = p;
    b.load_q = q;
    b
}

fn gen(bus: u32, p_set: f64, v_set: f64) -> Generator {
    Generator {
        bus: bus as _,
        p_set,
        q_min: -9999.0,
        q_max: 9999.0,
        v_set,
    }
}

fn line(f: u32, t: u32, r: f64, x: f64, b: f64) -> Branch {
    let mut br = Branch::line(f as _, t as _, r, x);
    br.b_charging = b;
    br
}

fn network(buses: Vec<Bus>, branches: Vec<Branch>, generators: Vec<Generator>) -> Network {
    Network {
        base_mva: 100.0,
        buses,
        branches,
        generators,
        bus_names: Default::default(),
    }
}

pub fn oracle_networks() -> Vec<(&'static str, Network)> {
    use BusKind::*;
    let two = network(
        vec![bus(1, Slack, 1.0, 0.0, 0.0), bus(2, PQ, 1.0, 100.0, 20.0)],
        vec![line(1, 2, 0.02, 0.1, 0.0)],
        vec![gen(1, 0.0, 1.0)],
    );

    let three = network(
        vec![
            bus(1, Slack, 1.02, 0.0, 0.0),
            bus(2, PV, 1.01, 0.0, 0.0),
            bus(3, PQ, 1.0, 90.0, 30.0),
        ],
        vec![
            line(1, 2, 0.01, 0.08, 0.02),
            line(2, 3, 0.012, 0.09, 0.02),
            line(1, 3, 0.02, 0.12, 0.03),
        ],
        vec![gen(1, 0.0, 1.02), gen(2, 60.0, 1.01)],
    );

    let ring = network(
        vec![
            bus(1, Slack, 1.0, 0.0, 0.0),
            bus(2, PQ, 1.0, 50.0, 20.0),
            bus(3, PQ, 1.0, 80.0, 35.0),
            bus(4, PQ, 1.0, 40.0, 10.0),
        ],
        vec![
            line(1, 2, 0.01, 0.05, 0.04),
            line(2, 3, 0.015, 0.06, 0.03),
            line(3, 4, 0.01, 0.05, 0.04),
            line(4, 1, 0.02, 0.08, 0.05),
        ],
        vec![gen(1, 0.0, 1.0)],
    );

    // off-nominal tap with phase shift, shunts on both sides
    let mut five_buses = vec![
        bus(1, Slack, 1.05, 0.0, 0.0),
        bus(2, PQ, 1.0, 30.0, 10.0),
        bus(3, PV, 1.02, 20.0, 5.0),
        bus(4, PQ, 1.0, 60.0, 25.0),
        bus(5, PQ, 1.0, 45.0, 15.0),
    ];
    five_buses[3].shunt_b = 0.19;
    five_buses[4].shunt_g = 0.02;
    let mut xf = line(2, 4, 0.0, 0.06, 0.0);
    xf.tap = 0.975;
    xf.shift = 0.05;
    let five = network(
        five_buses,
        vec![
            line(1, 2, 0.02, 0.06, 0.03),
            line(1, 3, 0.08, 0.24, 0.025),
            xf,
            line(3, 4, 0.01, 0.03, 0.01),
            line(4, 5, 0.08, 0.24, 0.025),
            line(2, 5, 0.06, 0.18, 0.02),
        ],
        vec![gen(1, 0.0, 1.05), gen(3, 40.0, 1.02)],
    );

    let mut six_buses = vec![
        bus(1, Slack, 1.05, 0.0, 0.0),
        bus(2, PV, 1.05, 0.0, 0.0),
        bus(3, PV, 1.07, 0.0, 0.0),
        bus(4, PQ, 1.0, 70.0, 70.0),
        bus(5, PQ, 1.0, 70.0, 70.0),
        bus(6, PQ, 1.0, 70.0, 70.0),
    ];
    six_buses[4].shunt_b = 0.1;
    let six = network(
        six_buses,
        vec![
            line(1, 2, 0.1, 0.2, 0.04),
            line(1, 4, 0.05, 0.2, 0.04),
            line(1, 5, 0.08, 0.3, 0.06),
            line(2, 3, 0.05, 0.25, 0.06),
            line(2, 4, 0.05, 0.1, 0.02),
            line(2, 5, 0.1, 0.3, 0.04),
            line(2, 6, 0.07, 0.2, 0.05),
            line(3, 5, 0.12, 0.26, 0.05),
            line(3, 6, 0.02, 0.1, 0.02),
            line(4, 5, 0.2, 0.4, 0.08),
            line(5, 6, 0.1, 0.3, 0.06),
        ],
        vec![gen(1, 0.0, 1.05), gen(2, 50.0, 1.05), gen(3, 60.0, 1.07)],
    );

    // the classic three-machine, nine-bus system
    let nine = network(
        vec![
            bus(1, Slack, 1.0, 0.0, 0.0),
            bus(2, PV, 1.0, 0.0, 0.0),
            bus(3, PV, 1.0, 0.0, 0.0),
            bus(4, PQ, 1.0, 0.0, 0.0),
            bus(5, PQ, 1.0, 90.0, 30.0),
            bus(6, PQ, 1.0, 0.0, 0.0),
            bus(7, PQ, 1.0, 100.0, 35.0),
            bus(8, PQ, 1.0, 0.0, 0.0),
            bus(9, PQ, 1.0, 125.0, 50.0),
        ],
        vec![
            line(1, 4, 0.0, 0.0576, 0.0),
            line(4, 5, 0.017, 0.092, 0.158),
            line(5, 6, 0.039, 0.17, 0.358),
            line(3, 6, 0.0, 0.0586, 0.0),
            line(6, 7, 0.0119, 0.1008, 0.209),
            line(7, 8, 0.0085, 0.072, 0.149),
            line(8, 2, 0.0, 0.0625, 0.0),
            line(8, 9, 0.032, 0.161, 0.306),
            line(9, 4, 0.01, 0.085, 0.176),
        ],
        vec![gen(1, 0.0, 1.0), gen(2, 163.0, 1.0), gen(3, 85.0, 1.0)],
    );

    vec![
        ("two-bus", two),
        ("three-bus", three),
        ("four-bus ring", ring),
        ("five-bus phase shifter", five),
        ("six-bus mesh", six),
        ("nine-bus", nine),
    ]
}

/// Largest angle difference, wrapped to (-π, π].
pub fn angle_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        })
        .fold(0.0, f64::max)
}

pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Randomized fleet runs for invariant checking.

#[derive(Debug, Clone)]
pub struct FleetCase {
    pub parents: Vec<(usize, f64)>,
    pub chords: Vec<(usize, usize, f64)>,
    pub ports: Vec<Option<u32>>,
    pub params: HdevParams,
    pub strategy: PortStrategy,
    pub initial: u64,
    pub rate: f64,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

pub fn fleet_case() -> impl Strategy<Value = FleetCase> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec((any::<prop::sample::Index>(), 10.0f64..250.0), n - 1),
                proptest::collection::vec((0..n, 0..n, 10.0f64..250.0), 0..3),
                proptest::collection::vec(proptest::option::of(1u32..4), n),
                (150.0f64..900.0, 1.5f64..2.5, 40.0f64..70.0, 75.0f64..600.0, 0.0f64..0.3),
                any::<bool>(),
                (
                    0u64..30,
                    0.0f64..30.0,
                    prop::sample::select(vec![0.1, 0.25, 0.5]),
                    5usize..40,
                    any::<u64>(),
                ),
            )
        })
        .prop_map(
            |(parents, chords, ports, p, srtf, (initial, rate, dt, steps, seed))| FleetCase {
                parents: parents
                    .into_iter()
                    .enumerate()
                    .map(|(i, (ix, miles))| (ix.index(i + 1), miles))
                    .collect(),
                chords: chords.into_iter().filter(|(a, b, _)| a != b).collect(),
                ports,
                params: HdevParams {
                    capacity_kwh: p.0,
                    consumption_kwh_per_mile: p.1,
                    speed_mph: p.2,
                    charge_kw: p.3,
                    reserve_fraction: p.4,
                },
                strategy: if srtf {
                    PortStrategy::ShortestRemainingCharge
                } else {
                    PortStrategy::Fifo
                },
                initial,
                rate,
                dt,
                steps,
                seed,
            },
        )
}

impl FleetCase {
    pub fn road(&self) -> RoadGraph {
        let n = self.ports.len();
        let nodes = (0..n)
            .map(|i| RoadNode {
                id: i as _,
                bus_id: i as _,
                lat: None,
                lon: None,
            })
            .collect();
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        let tree = self.parents.iter().enumerate().map(|(i, &(p, m))| (i + 1, p, m));
        let chords = self.chords.iter().copied();
        for (a, b, miles) in tree.chain(chords) {
            if seen.insert((a.min(b), a.max(b))) {
                edges.push(RoadEdge {
                    a: a as _,
                    b: b as _,
                    miles,
                });
            }
        }
        RoadGraph::new(nodes, edges).unwrap()
    }

    pub fn stations(&self) -> Vec<StationSpec> {
        self.ports
            .iter()
            .enumerate()
            .map(|(i, &n_ports)| StationSpec {
                id: i as _,
                bus_id: i as _,
                n_ports,
                lat: None,
                lon: None,
            })
            .collect()
    }
}

/// The four invariant families checked on every step of a fleet run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Invariant {
    SocBounds,
    SocDirection,
    Conservation,
    PortCapacity,
}

/// Drives a mobility run without the grid and reports the first broken
/// invariant of the requested family.
pub fn run_fleet_case(case: &FleetCase, check: Invariant) -> Result<(), String> {
    let road = case.road();
    let arrivals = ArrivalProcess::uniform(case.rate, &road);
    let mut mob = Mobility::new(&case.stations(), case.strategy).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let cap = case.params.capacity_kwh;
    let tol = 1e-9 * cap.max(1.0);

    for step in 0..case.steps {
        let initial = if step == 0 { case.initial } else { 0 };
        mob.spawn(&arrivals, &case.params, case.dt, initial, &[], &road, &mut rng)
            .map_err(|e| e.to_string())?;
        let before: BTreeMap<_, _> = mob
            .fleet
            .vehicles
            .iter()
            .map(|(&id, v)| (id, (v.state.clone(), v.soc_kwh)))
            .collect();
        let events = mob.step(&road, case.dt);

        match check {
            Invariant::SocBounds => {
                for v in mob.fleet.vehicles.values() {
                    if !(v.soc_kwh >= 0.0 && v.soc_kwh <= cap + tol) {
                        return Err(format!(
                            "step {step}: vehicle {} soc {} outside [0, {cap}]",
                            v.id, v.soc_kwh
                        ));
                    }
                }
            }
            Invariant::SocDirection => {
                for (id, (state, soc0)) in &before {
                    let soc1 = mob.fleet.vehicles[id].soc_kwh;
                    let ok = match state {
                        VehicleState::Charging { .. } => soc1 >= *soc0 - tol,
                        VehicleState::Moving { .. } => soc1 <= *soc0 + tol,
                        _ => (soc1 - soc0).abs() <= tol,
                    };
                    if !ok {
                        return Err(format!(
                            "step {step}: vehicle {id} went {soc0} -> {soc1} while {state:?}"
                        ));
                    }
                }
            }
            _ => {}
        }

        mob.process_events(&events, &road).map_err(|e| e.to_string())?;

        match check {
            Invariant::Conservation => {
                let c = mob.fleet.counters;
                let present = mob.fleet.vehicles.len() as u64;
                if c.arrivals_total != c.departed_total + c.stranded_total + present {
                    return Err(format!("step {step}: counters {c:?} with {present} present"));
                }
                let counts = mob.fleet.counts();
                if counts.charging + counts.idle + counts.moving != mob.fleet.vehicles.len() {
                    return Err(format!("step {step}: a present vehicle is in no active state"));
                }
            }
            Invariant::PortCapacity => {
                let mut placed = BTreeSet::new();
                for st in mob.stations.iter() {
                    if let Some(n) = st.n_ports {
                        if st.charging_set.len() > n as usize {
                            return Err(format!(
                                "step {step}: station {} has {} on {n} ports",
                                st.id,
                                st.charging_set.len()
                            ));
                        }
                        if !st.wait_queue.is_empty() && st.charging_set.len() < n as usize {
                            return Err(format!("step {step}: station {} queues with a free port", st.id));
                        }
                    }
                    for id in st.charging_set.iter().chain(st.wait_queue.iter()) {
                        if !placed.insert(*id) {
                            return Err(format!("step {step}: vehicle {id} held by two stations"));
                        }
                    }
                    for id in &st.charging_set {
                        if !matches!(mob.fleet.vehicles[id].state, VehicleState::Charging { station } if station == st.id)
                        {
                            return Err(format!("step {step}: port holder {id} is not charging there"));
                        }
                    }
                }
                if mob.stations.total_charging() != mob.fleet.counts().charging {
                    return Err(format!("step {step}: registry and fleet disagree on charging count"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}
