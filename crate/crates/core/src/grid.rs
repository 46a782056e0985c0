//! Per-unit bus/branch network model and bus-admittance construction.
//!
//! Loads and generator set-points are stored in MW/MVAr as they appear in
//! case files. Line parameters and shunts are already per-unit on the system
//! base. The one MW→pu conversion happens in [`Network::scheduled_power_pu`].

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub base_kv: f64,
    #[serde(default = "one")]
    pub v_set: f64,
    /// MW
    #[serde(default)]
    pub load_p: f64,
    /// MVAr
    #[serde(default)]
    pub load_q: f64,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord: Option<Coord>,
}

impl Bus {
    pub fn new(id: BusId, kind: BusKind, base_kv: f64) -> Self {
        Bus {
            id,
            kind,
            base_kv,
            v_set: 1.0,
            load_p: 0.0,
            load_q: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
            coord: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    #[serde(default = "one")]
    pub tap: f64,
    /// radians
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

impl Branch {
    pub fn line(from_bus: BusId, to_bus: BusId, r: f64, x: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_charging: 0.0,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
        }
    }
}

fn q_floor() -> f64 {
    -9999.0
}

fn q_ceiling() -> f64 {
    9999.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    /// MW
    #[serde(default)]
    pub p_set: f64,
    /// MVAr
    #[serde(default = "q_floor")]
    pub q_min: f64,
    /// MVAr
    #[serde(default = "q_ceiling")]
    pub q_max: f64,
    #[serde(default = "one")]
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    /// External labels for buses, keyed by bus id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bus_names: BTreeMap<BusId, String>,
}

/// What a validation entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Network,
    Bus(BusId),
    /// Position in `Network::branches`.
    Branch(usize),
    /// Position in `Network::generators`.
    Generator(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: Subject,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subject {
            Subject::Network => write!(f, "network: {}", self.reason),
            Subject::Bus(id) => write!(f, "bus {id}: {}", self.reason),
            Subject::Branch(i) => write!(f, "branch #{i}: {}", self.reason),
            Subject::Generator(i) => write!(f, "generator #{i}: {}", self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: Subject, reason: impl Into<String>) {
        self.violations.push(Violation {
            subject,
            reason: reason.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid network:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown bus id {0}")]
    UnknownBus(BusId),
}

/// Maps opaque bus ids onto dense matrix positions (the order of `Network::buses`).
#[derive(Debug, Clone)]
pub struct BusIndex {
    positions: HashMap<BusId, usize>,
}

impl BusIndex {
    pub fn position(&self, id: BusId) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn require(&self, id: BusId) -> Result<usize, GridError> {
        self.position(id).ok_or(GridError::UnknownBus(id))
    }
}

impl Network {
    pub fn bus_index(&self) -> BusIndex {
        BusIndex {
            positions: self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect(),
        }
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_ids(&self) -> Vec<BusId> {
        self.buses.iter().map(|b| b.id).collect()
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            report.push(Subject::Network, format!("base_mva must be > 0, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            report.push(Subject::Network, "no buses");
        }

        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                report.push(Subject::Bus(bus.id), "duplicate bus id");
            }
            if !(bus.base_kv > 0.0 && bus.base_kv.is_finite()) {
                report.push(
                    Subject::Bus(bus.id),
                    format!("base_kv must be > 0, got {}", bus.base_kv),
                );
            }
            if !bus.load_p.is_finite() || !bus.load_q.is_finite() {
                report.push(Subject::Bus(bus.id), "non-finite load");
            }
            if !bus.shunt_g.is_finite() || !bus.shunt_b.is_finite() {
                report.push(Subject::Bus(bus.id), "non-finite shunt");
            }
            if bus.kind != BusKind::PQ && !(bus.v_set > 0.0 && bus.v_set.is_finite()) {
                report.push(Subject::Bus(bus.id), format!("v_set must be > 0, got {}", bus.v_set));
            }
        }

        let slacks: Vec<BusId> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            0 if !self.buses.is_empty() => report.push(Subject::Network, "no slack bus"),
            0 | 1 => {}
            _ => report.push(Subject::Network, format!("multiple slack buses: {slacks:?}")),
        }

        let kinds: HashMap<BusId, BusKind> = self.buses.iter().map(|b| (b.id, b.kind)).collect();
        let mut endpoints_ok = true;
        for (i, br) in self.branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !kinds.contains_key(&end) {
                    endpoints_ok = false;
                    report.push(Subject::Branch(i), format!("references nonexistent bus {end}"));
                }
            }
            if br.from_bus == br.to_bus {
                report.push(Subject::Branch(i), format!("self-loop on bus {}", br.from_bus));
            }
            let finite = [br.r, br.x, br.b_charging, br.tap, br.shift]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                report.push(Subject::Branch(i), "non-finite parameter");
            }
            if br.in_service && br.r == 0.0 && br.x == 0.0 {
                report.push(Subject::Branch(i), "zero series impedance");
            }
            if br.tap <= 0.0 {
                report.push(Subject::Branch(i), format!("tap must be > 0, got {}", br.tap));
            }
        }

        for (i, gen) in self.generators.iter().enumerate() {
            match kinds.get(&gen.bus) {
                None => report.push(Subject::Generator(i), format!("references nonexistent bus {}", gen.bus)),
                Some(BusKind::PQ) => report.push(
                    Subject::Generator(i),
                    format!("bus {} is PQ; generators must sit on Slack or PV buses", gen.bus),
                ),
                Some(_) => {}
            }
            if gen.q_min > gen.q_max {
                report.push(
                    Subject::Generator(i),
                    format!("q_min {} exceeds q_max {}", gen.q_min, gen.q_max),
                );
            }
            if !(gen.v_set > 0.0 && gen.v_set.is_finite()) || !gen.p_set.is_finite() {
                report.push(Subject::Generator(i), "invalid set-point");
            }
        }

        if endpoints_ok && !self.buses.is_empty() && seen.len() == self.buses.len() {
            for id in self.islanded_buses() {
                report.push(Subject::Bus(id), "not connected to the slack island");
            }
        }

        report
    }

    /// Buses unreachable from the first bus (the slack when present) over
    /// in-service branches.
    fn islanded_buses(&self) -> Vec<BusId> {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(f), Some(t)) = (index.position(br.from_bus), index.position(br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let root = self.buses.iter().position(|b| b.kind == BusKind::Slack).unwrap_or(0);
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        self.buses
            .iter()
            .zip(seen)
            .filter(|(_, s)| !s)
            .map(|(b, _)| b.id)
            .collect()
    }

    /// Bus-admittance matrix in per-unit, rows/columns in `buses` order.
    pub fn admittance(&self) -> Result<AdmittanceMatrix, GridError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(GridError::Invalid(report));
        }
        let index = self.bus_index();
        let mut y = AdmittanceBuilder::new(self.buses.len());

        for (i, bus) in self.buses.iter().enumerate() {
            y.add(i, i, Complex64::new(bus.shunt_g, bus.shunt_b));
        }
        for br in self.branches.iter().filter(|b| b.in_service) {
            let f = index.require(br.from_bus)?;
            let t = index.require(br.to_bus)?;
            let ys = Complex64::new(br.r, br.x).inv();
            let half_b = Complex64::new(0.0, br.b_charging / 2.0);
            let ratio = Complex64::from_polar(br.tap, br.shift);

            y.add(f, f, (ys + half_b) / (br.tap * br.tap));
            y.add(t, t, ys + half_b);
            y.add(f, t, -ys / ratio.conj());
            y.add(t, f, -ys / ratio);
        }
        Ok(y.finish())
    }

    /// Voltage set-point for a Slack/PV bus: the first generator's `v_set`
    /// when one is attached, the bus `v_set` otherwise.
    pub fn voltage_setpoint(&self, bus: &Bus) -> f64 {
        self.generators
            .iter()
            .find(|g| g.bus == bus.id)
            .map_or(bus.v_set, |g| g.v_set)
    }

    /// Net scheduled complex injection per bus in per-unit: generation minus
    /// base load minus `extra` loads (MW/MVAr keyed by bus id).
    pub fn scheduled_power_pu(
        &self,
        index: &BusIndex,
        extra: &BTreeMap<BusId, (f64, f64)>,
    ) -> Result<Vec<Complex64>, GridError> {
        let mut s: Vec<Complex64> = self
            .buses
            .iter()
            .map(|b| Complex64::new(-b.load_p, -b.load_q))
            .collect();
        for gen in &self.generators {
            s[index.require(gen.bus)?].re += gen.p_set;
        }
        for (&id, &(p, q)) in extra {
            let i = index.require(id)?;
            s[i] -= Complex64::new(p, q);
        }
        Ok(s.into_iter().map(|v| v / self.base_mva).collect())
    }
}

/// Sparse complex matrix stored as sorted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(Complex64::new(0.0, 0.0), |k| self.rows[i][k].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[i][j] = v;
            }
        }
        dense
    }

    /// `Y · v`
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

struct AdmittanceBuilder {
    rows: Vec<BTreeMap<usize, Complex64>>,
}

impl AdmittanceBuilder {
    fn new(n: usize) -> Self {
        AdmittanceBuilder {
            rows: vec![BTreeMap::new(); n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: Complex64) {
        *self.rows[i].entry(j).or_insert(Complex64::new(0.0, 0.0)) += v;
    }

    fn finish(self) -> AdmittanceMatrix {
        let n = self.rows.len();
        let rows = self
            .rows
            .into_iter()
            .map(|r| r.into_iter().filter(|(_, v)| *v != Complex64::new(0.0, 0.0)).collect())
            .collect();
        AdmittanceMatrix { n, rows }
    }
}
