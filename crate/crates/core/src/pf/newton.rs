//! Polar Newton-Raphson AC power flow.
//!
//! Unknowns are voltage angles at PV and PQ buses followed by magnitudes at
//! PQ buses. The Jacobian is assembled sparsely and refactored every
//! iteration. Failure to converge is a result, not an error: the solution is
//! flagged `collapsed` and carries the last iterate.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusId, BusIndex, BusKind, GridError, Network, ValidationReport};
use crate::sparse::{CscMatrix, SparseLu};

/// Additional per-bus loads on top of the case data, MW/MVAr keyed by bus id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtraLoads(pub BTreeMap<BusId, (f64, f64)>);

impl ExtraLoads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, bus: BusId, p_mw: f64, q_mvar: f64) {
        let entry = self.0.entry(bus).or_insert((0.0, 0.0));
        entry.0 += p_mw;
        entry.1 += q_mvar;
    }

    pub fn get(&self, bus: BusId) -> (f64, f64) {
        self.0.get(&bus).copied().unwrap_or((0.0, 0.0))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_p_mw(&self) -> f64 {
        self.0.values().map(|v| v.0).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfOptions {
    /// Largest tolerated power mismatch, pu.
    pub tol: f64,
    /// Cap on mismatch evaluations (the final converged check counts).
    pub max_iter: usize,
    pub flat_start: bool,
    pub enforce_q_limits: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
            flat_start: true,
            enforce_q_limits: false,
        }
    }
}

impl PfOptions {
    fn check(&self) -> Result<(), PfError> {
        if !(self.tol > 0.0) {
            return Err(PfError::Options(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(PfError::Options("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Magnitudes below this on any iterate end the solve as a collapse.
pub const COLLAPSE_FLOOR_PU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    /// Per bus, in `Network::buses` order.
    pub v_mag: Vec<f64>,
    /// Radians.
    pub v_ang: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the mismatch vector, pu.
    pub mismatch_norm: f64,
    pub collapsed: bool,
    /// PV buses switched to PQ by reactive-limit enforcement.
    #[serde(default)]
    pub q_limited: Vec<BusId>,
}

impl PfSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    pub fn min_v_mag(&self) -> f64 {
        self.v_mag.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Error)]
pub enum PfError {
    #[error("invalid network:\n{0}")]
    InvalidNetwork(ValidationReport),
    #[error("unknown bus id {0}")]
    UnknownBus(BusId),
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid options: {0}")]
    Options(String),
}

impl From<GridError> for PfError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Invalid(r) => PfError::InvalidNetwork(r),
            GridError::UnknownBus(id) => PfError::UnknownBus(id),
        }
    }
}

/// Solves from a flat (or set-point) start.
pub fn solve_nr(network: &Network, extra: &ExtraLoads, opts: &PfOptions) -> Result<PfSolution, PfError> {
    solve_nr_from(network, extra, opts, None)
}

/// Solves, warm-starting from `start` unless `opts.flat_start` is set.
pub fn solve_nr_from(
    network: &Network,
    extra: &ExtraLoads,
    opts: &PfOptions,
    start: Option<&PfSolution>,
) -> Result<PfSolution, PfError> {
    opts.check()?;
    let case = Case::prepare(network, extra)?;
    let n = case.kinds.len();

    let mut v: Vec<Complex64> = match start {
        Some(s) if !opts.flat_start => {
            if s.v_mag.len() != n || s.v_ang.len() != n {
                return Err(PfError::Dimension {
                    expected: n,
                    got: s.v_mag.len(),
                });
            }
            s.voltages()
        }
        _ => vec![Complex64::new(1.0, 0.0); n],
    };
    // set-point magnitudes; the slack angle is the reference
    for i in 0..n {
        match case.kinds[i] {
            BusKind::Slack => v[i] = Complex64::new(case.v_set[i], 0.0),
            BusKind::PV => v[i] = Complex64::from_polar(case.v_set[i], v[i].arg()),
            BusKind::PQ => {}
        }
    }

    let mut kinds = case.kinds.clone();
    let mut s_sched = case.s_sched.clone();
    let mut q_limited = Vec::new();
    let mut total_iterations = 0;

    loop {
        let run = newton(&case, &kinds, &s_sched, &mut v, opts);
        total_iterations += run.iterations;
        let outcome = run;
        if !outcome.converged || !opts.enforce_q_limits {
            return Ok(finish(v, outcome, total_iterations, q_limited));
        }
        let switched = case.apply_q_limits(&v, &mut kinds, &mut s_sched);
        if switched.is_empty() {
            return Ok(finish(v, outcome, total_iterations, q_limited));
        }
        q_limited.extend(switched.into_iter().map(|i| network.buses[i].id));
    }
}

fn finish(v: Vec<Complex64>, run: NewtonRun, iterations: usize, q_limited: Vec<BusId>) -> PfSolution {
    PfSolution {
        v_mag: v.iter().map(|c| c.norm()).collect(),
        v_ang: v.iter().map(|c| c.arg()).collect(),
        converged: run.converged,
        iterations,
        mismatch_norm: run.mismatch_norm,
        collapsed: !run.converged,
        q_limited,
    }
}

/// Everything the iteration needs, in per-unit and matrix order.
struct Case {
    y: crate::grid::AdmittanceMatrix,
    kinds: Vec<BusKind>,
    v_set: Vec<f64>,
    s_sched: Vec<Complex64>,
    /// Base reactive load plus extra, pu; needed to recover generator Q.
    q_load: Vec<f64>,
    /// Aggregate generator limits per bus, pu.
    q_limits: Vec<Option<(f64, f64)>>,
}

impl Case {
    fn prepare(network: &Network, extra: &ExtraLoads) -> Result<Case, PfError> {
        let y = network.admittance()?;
        let index: BusIndex = network.bus_index();
        let s_sched = network.scheduled_power_pu(&index, &extra.0)?;
        let base = network.base_mva;

        let kinds = network.buses.iter().map(|b| b.kind).collect();
        let v_set = network
            .buses
            .iter()
            .map(|b| match b.kind {
                BusKind::PQ => 1.0,
                _ => network.voltage_setpoint(b),
            })
            .collect();
        let q_load = network
            .buses
            .iter()
            .map(|b| (b.load_q + extra.get(b.id).1) / base)
            .collect();
        let mut q_limits: Vec<Option<(f64, f64)>> = vec![None; network.buses.len()];
        for g in &network.generators {
            let i = index.require(g.bus)?;
            let (lo, hi) = q_limits[i].unwrap_or((0.0, 0.0));
            q_limits[i] = Some((lo + g.q_min / base, hi + g.q_max / base));
        }
        Ok(Case {
            y,
            kinds,
            v_set,
            s_sched,
            q_load,
            q_limits,
        })
    }

    /// Switches PV buses whose generator Q violates limits to PQ at the bound.
    fn apply_q_limits(&self, v: &[Complex64], kinds: &mut [BusKind], s_sched: &mut [Complex64]) -> Vec<usize> {
        let s_calc = power_injections(&self.y, v);
        let mut switched = Vec::new();
        for i in 0..kinds.len() {
            if kinds[i] != BusKind::PV {
                continue;
            }
            let Some((q_min, q_max)) = self.q_limits[i] else {
                continue;
            };
            let q_gen = s_calc[i].im + self.q_load[i];
            let bound = if q_gen > q_max + 1e-9 {
                q_max
            } else if q_gen < q_min - 1e-9 {
                q_min
            } else {
                continue;
            };
            kinds[i] = BusKind::PQ;
            s_sched[i].im = bound - self.q_load[i];
            switched.push(i);
        }
        switched
    }
}

struct NewtonRun {
    converged: bool,
    iterations: usize,
    mismatch_norm: f64,
}

/// `S = V · conj(Y·V)` per bus.
fn power_injections(y: &crate::grid::AdmittanceMatrix, v: &[Complex64]) -> Vec<Complex64> {
    y.mul_vec(v).into_iter().zip(v).map(|(i, &vi)| vi * i.conj()).collect()
}

/// Unknown layout: angle slot for every non-slack bus, magnitude slot for PQ.
struct Layout {
    angle: Vec<Option<usize>>,
    magnitude: Vec<Option<usize>>,
    size: usize,
}

impl Layout {
    fn new(kinds: &[BusKind]) -> Layout {
        let mut next = 0;
        let angle = kinds
            .iter()
            .map(|k| {
                (*k != BusKind::Slack).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let magnitude = kinds
            .iter()
            .map(|k| {
                (*k == BusKind::PQ).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Layout {
            angle,
            magnitude,
            size: next,
        }
    }
}

fn newton(case: &Case, kinds: &[BusKind], s_sched: &[Complex64], v: &mut [Complex64], opts: &PfOptions) -> NewtonRun {
    let layout = Layout::new(kinds);
    let n = v.len();
    let mut norm = f64::INFINITY;

    for pass in 1..=opts.max_iter {
        let current = case.y.mul_vec(v);
        let s_calc: Vec<Complex64> = (0..n).map(|i| v[i] * current[i].conj()).collect();

        let mut f = vec![0.0; layout.size];
        for i in 0..n {
            let d = s_sched[i] - s_calc[i];
            if let Some(a) = layout.angle[i] {
                f[a] = d.re;
            }
            if let Some(m) = layout.magnitude[i] {
                f[m] = d.im;
            }
        }
        norm = f.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if !norm.is_finite() {
            return NewtonRun {
                converged: false,
                iterations: pass,
                mismatch_norm: norm,
            };
        }
        if norm <= opts.tol {
            return NewtonRun {
                converged: true,
                iterations: pass,
                mismatch_norm: norm,
            };
        }
        if pass == opts.max_iter {
            break;
        }

        let jac = jacobian(&case.y, v, &current, &layout);
        let dx = match SparseLu::factor(&jac) {
            Ok(lu) => lu.solve(&f),
            Err(_) => {
                return NewtonRun {
                    converged: false,
                    iterations: pass,
                    mismatch_norm: norm,
                }
            }
        };

        let mut floor_hit = false;
        for i in 0..n {
            let (mut mag, mut ang) = (v[i].norm(), v[i].arg());
            if let Some(a) = layout.angle[i] {
                ang += dx[a];
            }
            if let Some(m) = layout.magnitude[i] {
                mag += dx[m];
            }
            if !(mag >= COLLAPSE_FLOOR_PU) || !ang.is_finite() {
                floor_hit = true;
            }
            v[i] = Complex64::from_polar(mag, ang);
        }
        if floor_hit {
            return NewtonRun {
                converged: false,
                iterations: pass,
                mismatch_norm: norm,
            };
        }
    }
    NewtonRun {
        converged: false,
        iterations: opts.max_iter,
        mismatch_norm: norm,
    }
}

/// Real Jacobian of `[P(pv,pq); Q(pq)]` with respect to `[θ(pv,pq); |V|(pq)]`.
fn jacobian(y: &crate::grid::AdmittanceMatrix, v: &[Complex64], current: &[Complex64], layout: &Layout) -> CscMatrix {
    let j = Complex64::new(0.0, 1.0);
    let mut triplets = Vec::with_capacity(4 * y.nnz());
    for (i, &vi) in v.iter().enumerate() {
        let (row_p, row_q) = (layout.angle[i], layout.magnitude[i]);
        if row_p.is_none() && row_q.is_none() {
            continue;
        }
        for &(k, yik) in y.row(i) {
            let vk = v[k];
            let unit_k = vk / vk.norm();
            // dS_i/dθ_k and dS_i/d|V|_k
            let mut ds_dang = -j * vi * (yik * vk).conj();
            let mut ds_dmag = vi * (yik * unit_k).conj();
            if k == i {
                ds_dang += j * vi * current[i].conj();
                ds_dmag += current[i].conj() * unit_k;
            }
            for (row, part) in [(row_p, 0), (row_q, 1)] {
                let Some(r) = row else { continue };
                let pick = |c: Complex64| if part == 0 { c.re } else { c.im };
                if let Some(col) = layout.angle[k] {
                    triplets.push((r, col, pick(ds_dang)));
                }
                if let Some(col) = layout.magnitude[k] {
                    triplets.push((r, col, pick(ds_dmag)));
                }
            }
        }
    }
    CscMatrix::from_triplets(layout.size, layout.size, &triplets).expect("jacobian indices come from the layout")
}

/// Per-bus power-balance residual `S_sched − S_calc` in pu.
///
/// Entries that the formulation leaves free are zero: both parts at the
/// slack bus, the reactive part at PV buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl Mismatch {
    pub fn norm(&self) -> f64 {
        self.dp.iter().chain(&self.dq).fold(0.0f64, |acc, x| acc.max(x.abs()))
    }
}

pub fn compute_mismatch(
    network: &Network,
    extra: &ExtraLoads,
    v_mag: &[f64],
    v_ang: &[f64],
) -> Result<Mismatch, PfError> {
    let n = network.buses.len();
    for got in [v_mag.len(), v_ang.len()] {
        if got != n {
            return Err(PfError::Dimension { expected: n, got });
        }
    }
    let case = Case::prepare(network, extra)?;
    let v: Vec<Complex64> = v_mag
        .iter()
        .zip(v_ang)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let s_calc = power_injections(&case.y, &v);
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    for i in 0..n {
        let d = case.s_sched[i] - s_calc[i];
        if case.kinds[i] != BusKind::Slack {
            dp[i] = d.re;
        }
        if case.kinds[i] == BusKind::PQ {
            dq[i] = d.im;
        }
    }
    Ok(Mismatch { dp, dq })
}

/// Default magnitude reported for every bus of a collapsed solve.
pub const DEFAULT_COLLAPSE_SENTINEL: f64 = 0.01;

/// Per-bus magnitudes, every entry replaced by `collapse_sentinel` when the
/// solve collapsed.
pub fn export_voltages(solution: &PfSolution, collapse_sentinel: f64) -> Vec<f64> {
    if solution.collapsed {
        vec![collapse_sentinel; solution.v_mag.len()]
    } else {
        solution.v_mag.clone()
    }
}
