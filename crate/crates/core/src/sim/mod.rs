//! Fully implicit two-phase (water/oil) finite-volume simulator on EDFM grids.

pub mod analytic;
mod fluid;
pub mod linear;
mod newton;
mod residual;
mod run;
mod state;
mod wells;

pub use fluid::{Capillary, FluidModel, Phase, RelPerm};
pub use newton::{newton_solve, NewtonConfig, NewtonSolver, StepStats};
pub use residual::{assemble_residual, BlockPattern, FlowSystem, Jacobian, Residual};
pub use run::{run_realization, simulate, Schedule, SimConfig, SimTrajectory, StepRecord, WellControls};
pub use state::ReservoirState;
pub use wells::{peaceman_index, wells_for_grid, WellSpec};
