//! Radial feeder model and forward-backward sweep solver.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Branch, Bus, BusKind, Coord, Network};

pub type FeederNodeId = u32;

/// Default per-vehicle charging power, kW.
pub const DEFAULT_VEHICLE_KW: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpedanceUnit {
    #[default]
    Ohm,
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederNode {
    pub id: FeederNodeId,
    /// kW
    #[serde(default)]
    pub load_p: f64,
    /// kVAr
    #[serde(default)]
    pub load_q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord: Option<Coord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederLine {
    pub from: FeederNodeId,
    pub to: FeederNodeId,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    #[serde(default)]
    pub name: String,
    /// Substation head voltage, pu.
    pub source_v: f64,
    pub base_kv: f64,
    pub base_mva: f64,
    /// Head node; the first entry of `nodes` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_node: Option<FeederNodeId>,
    pub nodes: Vec<FeederNode>,
    pub lines: Vec<FeederLine>,
    #[serde(default)]
    pub impedance_unit: ImpedanceUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_station_nodes: Option<Vec<FeederNodeId>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeederError {
    #[error("feeder has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(FeederNodeId),
    #[error("line {from}-{to} references unknown node {missing}")]
    UnknownNode {
        from: FeederNodeId,
        to: FeederNodeId,
        missing: FeederNodeId,
    },
    #[error("line {0}-{1} closes a loop")]
    Cycle(FeederNodeId, FeederNodeId),
    #[error("node {0} is not reachable from the source")]
    Disconnected(FeederNodeId),
    #[error("line {0}-{1} has zero impedance")]
    ZeroImpedance(FeederNodeId, FeederNodeId),
    #[error("invalid feeder parameter: {0}")]
    Parameter(String),
    #[error("invalid placement: {0}")]
    Placement(String),
}

impl Feeder {
    pub fn source(&self) -> Result<FeederNodeId, FeederError> {
        match (self.source_node, self.nodes.first()) {
            (Some(id), _) => Ok(id),
            (None, Some(n)) => Ok(n.id),
            (None, None) => Err(FeederError::Empty),
        }
    }

    pub fn node_position(&self, id: FeederNodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Series impedance of a line in pu.
    pub fn line_z_pu(&self, line: &FeederLine) -> Complex64 {
        let z = Complex64::new(line.r, line.x);
        match self.impedance_unit {
            ImpedanceUnit::Ohm => z / self.z_base_ohm(),
            ImpedanceUnit::PerUnit => z,
        }
    }

    /// Candidate station nodes: the explicit list, or every non-source node.
    pub fn candidates(&self) -> Result<Vec<FeederNodeId>, FeederError> {
        if let Some(list) = &self.candidate_station_nodes {
            return Ok(list.clone());
        }
        let source = self.source()?;
        Ok(self.nodes.iter().map(|n| n.id).filter(|&id| id != source).collect())
    }

    /// Positive-sequence transmission-style case: the source becomes the
    /// slack at `source_v`, all other nodes PQ buses; loads in MW.
    pub fn to_network(&self) -> Result<Network, FeederError> {
        let source = self.source()?;
        let buses = self
            .nodes
            .iter()
            .map(|n| Bus {
                v_set: if n.id == source { self.source_v } else { 1.0 },
                load_p: n.load_p / 1000.0,
                load_q: n.load_q / 1000.0,
                coord: n.coord,
                ..Bus::new(
                    n.id,
                    if n.id == source { BusKind::Slack } else { BusKind::PQ },
                    self.base_kv,
                )
            })
            .collect();
        let branches = self
            .lines
            .iter()
            .map(|l| {
                let z = self.line_z_pu(l);
                Branch::line(l.from, l.to, z.re, z.im)
            })
            .collect();
        Ok(Network {
            base_mva: self.base_mva,
            buses,
            branches,
            generators: vec![],
            bus_names: BTreeMap::new(),
        })
    }
}

/// Breadth-first sweep order from the source.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialOrder {
    /// Node positions (into `Feeder::nodes`), source first, parents before children.
    pub forward: Vec<usize>,
    /// Parent node position and the connecting line position, per node.
    pub parent: Vec<Option<(usize, usize)>>,
}

impl RadialOrder {
    /// Children before parents.
    pub fn reverse(&self) -> impl Iterator<Item = usize> + '_ {
        self.forward.iter().rev().copied()
    }
}

pub fn order_radial(feeder: &Feeder) -> Result<RadialOrder, FeederError> {
    let source = feeder.source()?;
    let mut pos: HashMap<FeederNodeId, usize> = HashMap::new();
    for (i, n) in feeder.nodes.iter().enumerate() {
        if pos.insert(n.id, i).is_some() {
            return Err(FeederError::DuplicateNode(n.id));
        }
    }
    let root = *pos.get(&source).ok_or(FeederError::Parameter(format!(
        "source node {source} is not in the node list"
    )))?;

    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); feeder.nodes.len()];
    for (li, line) in feeder.lines.iter().enumerate() {
        let lookup = |id| {
            pos.get(&id).copied().ok_or(FeederError::UnknownNode {
                from: line.from,
                to: line.to,
                missing: id,
            })
        };
        let (a, b) = (lookup(line.from)?, lookup(line.to)?);
        if a == b {
            return Err(FeederError::Cycle(line.from, line.to));
        }
        adj[a].push((b, li));
        adj[b].push((a, li));
    }

    // first line (in file order) joining two already-connected nodes closes the loop
    let mut root_of: Vec<usize> = (0..feeder.nodes.len()).collect();
    fn find(root_of: &mut [usize], mut i: usize) -> usize {
        while root_of[i] != i {
            root_of[i] = root_of[root_of[i]];
            i = root_of[i];
        }
        i
    }
    for line in &feeder.lines {
        let (a, b) = (pos[&line.from], pos[&line.to]);
        let (ra, rb) = (find(&mut root_of, a), find(&mut root_of, b));
        if ra == rb {
            return Err(FeederError::Cycle(line.from, line.to));
        }
        root_of[ra] = rb;
    }

    let mut parent = vec![None; feeder.nodes.len()];
    let mut visited = vec![false; feeder.nodes.len()];
    let mut forward = Vec::with_capacity(feeder.nodes.len());
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        forward.push(u);
        for &(v, li) in &adj[u] {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            parent[v] = Some((u, li));
            queue.push_back(v);
        }
    }
    if let Some(i) = visited.iter().position(|v| !v) {
        return Err(FeederError::Disconnected(feeder.nodes[i].id));
    }
    Ok(RadialOrder { forward, parent })
}

fn default_kw() -> f64 {
    DEFAULT_VEHICLE_KW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPlacement {
    pub station_nodes: Vec<FeederNodeId>,
    pub vehicles_per_station: Vec<u32>,
    #[serde(default = "default_kw")]
    pub per_vehicle_kw: f64,
    /// Reactive draw per kW of charging; 0 is unity power factor.
    #[serde(default)]
    pub kvar_per_kw: f64,
}

impl StationPlacement {
    pub fn empty() -> Self {
        StationPlacement {
            station_nodes: vec![],
            vehicles_per_station: vec![],
            per_vehicle_kw: DEFAULT_VEHICLE_KW,
            kvar_per_kw: 0.0,
        }
    }

    pub fn total_vehicles(&self) -> u64 {
        self.vehicles_per_station.iter().map(|&c| c as u64).sum()
    }

    pub fn validate(&self, feeder: &Feeder) -> Result<(), FeederError> {
        if self.station_nodes.len() != self.vehicles_per_station.len() {
            return Err(FeederError::Placement(format!(
                "{} station nodes but {} vehicle counts",
                self.station_nodes.len(),
                self.vehicles_per_station.len()
            )));
        }
        if !(self.per_vehicle_kw >= 0.0 && self.per_vehicle_kw.is_finite()) || !self.kvar_per_kw.is_finite() {
            return Err(FeederError::Placement(
                "per-vehicle power must be finite and >= 0".into(),
            ));
        }
        for id in &self.station_nodes {
            if feeder.node_position(*id).is_none() {
                return Err(FeederError::Placement(format!("unknown station node {id}")));
            }
        }
        Ok(())
    }

    /// Node loads (kW, kVAr) after adding charging demand.
    pub fn loaded_nodes(&self, feeder: &Feeder) -> Result<Vec<(f64, f64)>, FeederError> {
        self.validate(feeder)?;
        let mut loads: Vec<(f64, f64)> = feeder.nodes.iter().map(|n| (n.load_p, n.load_q)).collect();
        for (&node, &count) in self.station_nodes.iter().zip(&self.vehicles_per_station) {
            let i = feeder.node_position(node).expect("validated");
            let kw = count as f64 * self.per_vehicle_kw;
            loads[i].0 += kw;
            loads[i].1 += kw * self.kvar_per_kw;
        }
        Ok(loads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbsSolution {
    /// Per node in `Feeder::nodes` order, pu.
    pub v: Vec<Complex64>,
    pub v_mag: Vec<f64>,
    /// Current entering each line from its upstream end, pu, per `Feeder::lines`.
    pub line_current: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_delta: f64,
}

impl FbsSolution {
    /// Complex power leaving the source, pu.
    pub fn source_power(&self, order: &RadialOrder) -> Complex64 {
        let root = order.forward[0];
        let out: Complex64 = order
            .parent
            .iter()
            .filter(|p| matches!(p, Some((u, _)) if *u == root))
            .map(|p| self.line_current[p.unwrap().1])
            .sum();
        self.v[root] * out.conj()
    }

    /// Series losses `Σ |I|²·Z`, pu.
    pub fn losses(&self, feeder: &Feeder) -> Complex64 {
        feeder
            .lines
            .iter()
            .zip(&self.line_current)
            .map(|(l, i)| feeder.line_z_pu(l) * i.norm_sqr())
            .sum()
    }
}

/// Constant-power loads, backward current summation then forward voltage
/// drop, repeated until the largest voltage update is below `tol`.
pub fn solve_fbs(
    feeder: &Feeder,
    placement: &StationPlacement,
    tol: f64,
    max_iter: usize,
) -> Result<FbsSolution, FeederError> {
    if !(feeder.base_mva > 0.0) || !(feeder.base_kv > 0.0) || !(feeder.source_v > 0.0) {
        return Err(FeederError::Parameter(
            "source_v, base_kv and base_mva must be > 0".into(),
        ));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(FeederError::Parameter("tol must be > 0 and max_iter >= 1".into()));
    }
    let order = order_radial(feeder)?;
    let z: Vec<Complex64> = feeder.lines.iter().map(|l| feeder.line_z_pu(l)).collect();
    if let Some(l) = feeder.lines.iter().zip(&z).find(|(_, z)| z.norm() == 0.0) {
        return Err(FeederError::ZeroImpedance(l.0.from, l.0.to));
    }
    let scale = 1000.0 * feeder.base_mva;
    let s_load: Vec<Complex64> = placement
        .loaded_nodes(feeder)?
        .into_iter()
        .map(|(p, q)| Complex64::new(p, q) / scale)
        .collect();

    let n = feeder.nodes.len();
    let root = order.forward[0];
    let source = Complex64::new(feeder.source_v, 0.0);
    let mut v = vec![source; n];
    let mut injected = vec![Complex64::new(0.0, 0.0); n];
    let mut line_current = vec![Complex64::new(0.0, 0.0); feeder.lines.len()];
    let mut max_delta = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        for i in order.reverse() {
            injected[i] = (s_load[i] / v[i]).conj();
        }
        for i in order.reverse() {
            if let Some((parent, li)) = order.parent[i] {
                line_current[li] = injected[i];
                let carried = injected[i];
                injected[parent] += carried;
            }
        }
        max_delta = 0.0;
        let mut finite = true;
        for &i in &order.forward[1..] {
            let (parent, li) = order.parent[i].expect("non-root has a parent");
            let updated = v[parent] - z[li] * line_current[li];
            // f64::max drops NaN, so a blown-up node has to be caught here
            let delta = (updated - v[i]).norm();
            finite &= delta.is_finite() && updated.norm() > 0.0;
            max_delta = max_delta.max(delta);
            v[i] = updated;
        }
        v[root] = source;
        if !finite {
            max_delta = f64::INFINITY;
            break;
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }

    Ok(FbsSolution {
        v_mag: v.iter().map(|c| c.norm()).collect(),
        v,
        line_current,
        converged,
        iterations,
        max_delta,
    })
}

/// Picks `n_stations` distinct candidate nodes uniformly and assigns each of
/// `n_vehicles` to a uniformly chosen station.
pub fn sample_placement(
    feeder: &Feeder,
    n_stations: usize,
    n_vehicles: u32,
    seed: u64,
    per_vehicle_kw: f64,
) -> Result<StationPlacement, FeederError> {
    let candidates = feeder.candidates()?;
    let distinct: HashSet<_> = candidates.iter().collect();
    if distinct.len() != candidates.len() {
        return Err(FeederError::Placement("candidate list has duplicates".into()));
    }
    if n_stations > candidates.len() {
        return Err(FeederError::Placement(format!(
            "{n_stations} stations requested but only {} candidate nodes",
            candidates.len()
        )));
    }
    if n_stations == 0 && n_vehicles > 0 {
        return Err(FeederError::Placement("vehicles need at least one station".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let station_nodes: Vec<FeederNodeId> = index::sample(&mut rng, candidates.len(), n_stations)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    let mut vehicles_per_station = vec![0u32; n_stations];
    for _ in 0..n_vehicles {
        vehicles_per_station[rng.random_range(0..n_stations)] += 1;
    }
    Ok(StationPlacement {
        station_nodes,
        vehicles_per_station,
        per_vehicle_kw,
        kvar_per_kw: 0.0,
    })
}
