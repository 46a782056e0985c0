//! Power-flow solvers: Newton-Raphson for meshed transmission cases and a
//! forward-backward sweep for radial feeders.

pub mod newton;
pub mod radial;

pub use newton::{
    compute_mismatch, export_voltages, solve_nr, solve_nr_from, ExtraLoads, Mismatch, PfError, PfOptions, PfSolution,
    COLLAPSE_FLOOR_PU, DEFAULT_COLLAPSE_SENTINEL,
};
pub use radial::{
    order_radial, sample_placement, solve_fbs, FbsSolution, Feeder, FeederError, FeederLine, FeederNode, FeederNodeId,
    ImpedanceUnit, RadialOrder, StationPlacement, DEFAULT_VEHICLE_KW,
};
