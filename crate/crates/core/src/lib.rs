//! Co-simulation of heavy-duty electric vehicle fleets and the grids that
//! charge them.
//!
//! A fleet moves over a road graph whose nodes are charging stations. Each
//! station loads a transmission bus; per timestep the grid is solved with a
//! Newton-Raphson power flow and buses outside the voltage band are counted.
//! Distribution feeders are studied separately with snapshot Monte Carlo
//! sweeps over station siting and a forward-backward sweep solver.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose, and the
// numeric kernels index several parallel arrays in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytics;
pub mod cli;
pub mod config;
pub mod fleet;
pub mod grid;
pub mod io;
pub mod pf;
pub mod road;
pub mod sim;
pub mod sparse;
pub mod stations;
