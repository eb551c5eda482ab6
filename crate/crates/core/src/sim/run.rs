use serde::{Deserialize, Serialize};

use super::fluid::FluidModel;
use super::newton::{NewtonConfig, NewtonSolver};
use super::residual::FlowSystem;
use super::state::ReservoirState;
use super::wells::{wells_for_grid, WellSpec};
use crate::dfn::{generate_dfn, DfnConfig};
use crate::edfm::{build_edfm_grid, grid_pore_volume, CartesianSpec, EdfmGrid};
use crate::error::{Error, Result};
use crate::units::{DAY, MEGAPASCAL, YEAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellControls {
    /// Cumulative injection over the schedule as a fraction of pore volume.
    pub injected_pv_fraction: f64,
    /// Producer bottom-hole pressure (Pa).
    pub bhp: f64,
    pub well_radius: f64,
    pub skin: f64,
}

impl Default for WellControls {
    fn default() -> Self {
        Self {
            injected_pv_fraction: 0.5,
            bhp: 8.0 * MEGAPASCAL,
            well_radius: 0.1,
            skin: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Total simulated time (s).
    pub total_time: f64,
    /// Number of equal report steps.
    pub n_steps: usize,
    /// Number of leading report states kept for learning.
    pub n_export: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            total_time: 5.0 * YEAR,
            n_steps: 30,
            n_export: 21,
        }
    }
}

impl Schedule {
    pub fn dt(&self) -> f64 {
        self.total_time / self.n_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: CartesianSpec,
    pub dfn: DfnConfig,
    pub fluid: FluidModel,
    pub controls: WellControls,
    pub schedule: Schedule,
    pub initial_pressure: f64,
    pub initial_saturation: f64,
    pub newton: NewtonConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid: CartesianSpec {
                nx: 50,
                ny: 50,
                extent: [500.0, 500.0, 5.0],
                porosity: 0.25,
                perm_md: 50.0,
            },
            dfn: DfnConfig::default(),
            fluid: FluidModel::default(),
            controls: WellControls::default(),
            schedule: Schedule::default(),
            initial_pressure: 10.0 * MEGAPASCAL,
            initial_saturation: 0.2,
            newton: NewtonConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.dfn.validate()?;
        self.fluid.validate()?;
        if self.grid.extent != self.dfn.domain {
            return Err(Error::Config("grid extent and DFN domain differ".into()));
        }
        if self.schedule.n_steps == 0 || self.schedule.n_export > self.schedule.n_steps + 1 {
            return Err(Error::Config(
                "schedule must have n_steps >= 1 and n_export <= n_steps + 1".into(),
            ));
        }
        if !(self.initial_pressure > 0.0 && (0.0..=1.0).contains(&self.initial_saturation)) {
            return Err(Error::Config("invalid initial state".into()));
        }
        Ok(())
    }
}

/// Per-report-step well and balance record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Mean producer surface rates `[water, oil]` over the step (m³/day).
    pub production_m3_per_day: [f64; 2],
    /// Water injected over the step (kg).
    pub injected_kg: f64,
    /// `(Δ in-place + produced − injected) / injected` per phase.
    pub balance_error: [f64; 2],
    pub newton_iterations: usize,
    pub substeps: usize,
    pub cuts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub realization: u64,
    pub grid: EdfmGrid,
    pub wells: WellSpec,
    /// Report step length (s).
    pub dt: f64,
    /// States `0..=n_steps`.
    pub states: Vec<ReservoirState>,
    /// Records for steps `1..=n_steps`.
    pub steps: Vec<StepRecord>,
}

/// Simulate a prepared grid with the configured controls and schedule.
pub fn simulate(realization: u64, grid: EdfmGrid, config: &SimConfig) -> Result<SimTrajectory> {
    let pv = grid_pore_volume(&grid);
    let sched = config.schedule;
    let q_inj = config.controls.injected_pv_fraction * pv / sched.total_time;
    let c = config.controls;
    let wells = wells_for_grid(&grid, q_inj, c.bhp, c.well_radius, c.skin)?;
    let system = FlowSystem::new(&grid, config.fluid, Some(wells))?;
    let mut solver = NewtonSolver::new(&system, config.newton);
    let dt = sched.dt();

    let initial = ReservoirState::uniform(grid.n_cells(), config.initial_pressure, config.initial_saturation);
    let mut states = vec![initial];
    let mut steps = Vec::with_capacity(sched.n_steps);
    let mut in_place = system.mass_in_place(&states[0]);
    for n in 1..=sched.n_steps {
        let prev = states.last().expect("initial state present");
        let (next, stats) = solver.advance(prev, dt).map_err(|reason| Error::Solver {
            realization,
            step: n,
            reason,
        })?;
        let now = system.mass_in_place(&next);
        let inj = stats.injected;
        let denom = if inj > 0.0 { inj } else { 1.0 };
        let balance = [
            (now[0] - in_place[0] + stats.produced[0] - inj) / denom,
            (now[1] - in_place[1] + stats.produced[1]) / denom,
        ];
        let f = &config.fluid;
        steps.push(StepRecord {
            production_m3_per_day: [
                stats.produced[0] / f.rho_w / dt * DAY,
                stats.produced[1] / f.rho_o / dt * DAY,
            ],
            injected_kg: inj,
            balance_error: balance,
            newton_iterations: stats.newton_iterations,
            substeps: stats.substeps,
            cuts: stats.cuts,
        });
        in_place = now;
        states.push(next);
    }
    drop(solver);
    drop(system);
    Ok(SimTrajectory {
        realization,
        grid,
        wells,
        dt,
        states,
        steps,
    })
}

/// Draw a fracture network from `seed`, embed it and simulate the schedule.
pub fn run_realization(seed: u64, config: &SimConfig) -> Result<SimTrajectory> {
    config.validate()?;
    let network = generate_dfn(seed, &config.dfn)?;
    let grid = build_edfm_grid(config.grid, &network)?;
    simulate(seed, grid, config)
}
