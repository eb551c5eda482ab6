use serde::{Deserialize, Serialize};

use super::analytic::inflection_saturation;
use super::linear::{bandwidth, rcm_order, BandMatrix};
use super::residual::{FlowSystem, Residual};
use super::state::ReservoirState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Tolerance on the pore-volume-scaled residual (saturation units).
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of successive step halvings.
    pub max_cuts: usize,
    /// Largest saturation change applied per iteration.
    pub max_ds: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 60,
            max_cuts: 6,
            max_ds: 0.2,
        }
    }
}

/// Bookkeeping of one report step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub substeps: usize,
    pub newton_iterations: usize,
    pub cuts: usize,
    /// Produced mass `[water, oil]` (kg).
    pub produced: [f64; 2],
    /// Injected water mass (kg).
    pub injected: f64,
}

/// Reusable Newton solver for one [`FlowSystem`]; owns the fill-reducing
/// ordering and the band storage.
pub struct NewtonSolver<'a> {
    pub system: &'a FlowSystem<'a>,
    pub config: NewtonConfig,
    pos: Vec<usize>,
    band: BandMatrix,
    /// Saturations an update may reach but not cross in one iteration:
    /// the relperm endpoints and the fractional-flow inflection.
    kinks: [f64; 3],
}

/// Pressure unknowns are solved in MPa to balance the columns.
const PRESSURE_SCALE: f64 = 1e6;

impl<'a> NewtonSolver<'a> {
    pub fn new(system: &'a FlowSystem<'a>, config: NewtonConfig) -> Self {
        let adjacency = system.pattern.adjacency();
        let order = rcm_order(&adjacency);
        let mut pos = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let bw = 2 * bandwidth(&adjacency, &pos) + 1;
        let band = BandMatrix::new(2 * order.len(), bw, bw);
        let f = &system.fluid;
        let kinks = [f.s_wc, inflection_saturation(f), 1.0 - f.s_or];
        Self {
            system,
            config,
            pos,
            band,
            kinks,
        }
    }

    fn row_scale(&self, cell: usize, eq: usize) -> f64 {
        let f = &self.system.fluid;
        let rho = if eq == 0 { f.rho_w } else { f.rho_o };
        1.0 / (rho * self.system.pore_volume[cell])
    }

    /// Newton update `-J⁻¹ R` as `(Δp, ΔS)` per cell.
    fn newton_update(&mut self, r: &Residual) -> Result<Vec<[f64; 2]>> {
        let pattern = &self.system.pattern;
        let n = pattern.n_cells();
        self.band.clear();
        for i in 0..n {
            let si = [self.row_scale(i, 0), self.row_scale(i, 1)];
            let row = 2 * self.pos[i];
            for k in pattern.row_ptr[i]..pattern.row_ptr[i + 1] {
                let col = 2 * self.pos[pattern.cols[k]];
                let b = r.jacobian.blocks[k];
                self.band.add(row, col, b[0] * si[0] * PRESSURE_SCALE);
                self.band.add(row, col + 1, b[1] * si[0]);
                self.band.add(row + 1, col, b[2] * si[1] * PRESSURE_SCALE);
                self.band.add(row + 1, col + 1, b[3] * si[1]);
            }
        }
        self.band.factor()?;
        let mut rhs = vec![0.0; 2 * n];
        for i in 0..n {
            rhs[2 * self.pos[i]] = -r.values[2 * i] * self.row_scale(i, 0);
            rhs[2 * self.pos[i] + 1] = -r.values[2 * i + 1] * self.row_scale(i, 1);
        }
        self.band.solve(&mut rhs);
        Ok((0..n)
            .map(|i| [rhs[2 * self.pos[i]] * PRESSURE_SCALE, rhs[2 * self.pos[i] + 1]])
            .collect())
    }

    fn chop(&self, s_old: f64, s_new: f64) -> f64 {
        for &k in &self.kinks {
            if (s_old < k && s_new > k) || (s_old > k && s_new < k) {
                return k;
            }
        }
        s_new
    }

    fn scaled_residual_norm(&self, r: &Residual) -> f64 {
        r.values
            .iter()
            .enumerate()
            .map(|(k, v)| (v * self.row_scale(k / 2, k % 2)).abs())
            .fold(0.0, f64::max)
    }

    /// Global imbalance per phase relative to the injected mass.
    fn balance_ok(&self, r: &Residual) -> bool {
        if r.injected <= 0.0 {
            return true;
        }
        let (mut w, mut o) = (0.0, 0.0);
        for pair in r.values.chunks_exact(2) {
            w += pair[0];
            o += pair[1];
        }
        w.abs().max(o.abs()) <= self.config.tol * r.injected
    }

    /// One implicit step of length `dt` without cutting. Returns the
    /// converged state, the converged residual and the iteration count.
    pub fn try_step(&mut self, old: &ReservoirState, dt: f64) -> Result<(ReservoirState, Residual, usize)> {
        let mut state = old.clone();
        let cfg = self.config;
        for iter in 0..cfg.max_iter {
            let r = self.system.assemble(&state, old, dt)?;
            let balanced = self.balance_ok(&r);
            if self.scaled_residual_norm(&r) < cfg.tol && balanced {
                return Ok((state, r, iter));
            }
            let update = self.newton_update(&r)?;
            let mut max_dp = 0.0f64;
            let mut max_ds = 0.0f64;
            for (i, [dp, ds]) in update.into_iter().enumerate() {
                let ds = ds.clamp(-cfg.max_ds, cfg.max_ds);
                state.pressure[i] += dp;
                let s_new = self.chop(state.saturation[i], (state.saturation[i] + ds).clamp(0.0, 1.0));
                max_ds = max_ds.max((s_new - state.saturation[i]).abs());
                max_dp = max_dp.max(dp.abs());
                state.saturation[i] = s_new;
            }
            if state.pressure.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::NonFinite(
                    "pressure left the positive range during Newton".into(),
                ));
            }
            // Updates at round-off level: the residual of tiny fracture cells
            // cannot be reduced further in double precision.
            let p_ref = state.pressure.iter().fold(0.0f64, |a, p| a.max(p.abs()));
            if balanced && max_dp <= 1e-12 * p_ref && max_ds <= 1e-12 {
                let r = self.system.assemble(&state, old, dt)?;
                return Ok((state, r, iter + 1));
            }
        }
        Err(Error::NonFinite(format!(
            "Newton did not converge in {} iterations",
            cfg.max_iter
        )))
    }

    /// Advance by `dt`, halving the substep on failure. At most
    /// `max_cuts` successive halvings are allowed below the full step.
    pub fn advance(
        &mut self,
        old: &ReservoirState,
        dt: f64,
    ) -> std::result::Result<(ReservoirState, StepStats), String> {
        let mut stats = StepStats::default();
        if dt <= 0.0 {
            return Ok((old.clone(), stats));
        }
        let min_dt = dt / f64::powi(2.0, self.config.max_cuts as i32);
        let mut state = old.clone();
        let mut elapsed = 0.0;
        let mut sub = dt;
        while elapsed < dt {
            let remaining = dt - elapsed;
            let h = if sub >= remaining * (1.0 - 1e-12) {
                remaining
            } else {
                sub
            };
            match self.try_step(&state, h) {
                Ok((next, r, iters)) => {
                    stats.substeps += 1;
                    stats.newton_iterations += iters;
                    stats.produced[0] += r.produced[0];
                    stats.produced[1] += r.produced[1];
                    stats.injected += r.injected;
                    state = next;
                    elapsed += h;
                    sub = (2.0 * h).min(dt);
                }
                Err(e) => {
                    stats.cuts += 1;
                    sub = 0.5 * h;
                    if sub < min_dt * (1.0 - 1e-12) {
                        return Err(format!("step cut limit exceeded ({e})"));
                    }
                }
            }
        }
        state.step = old.step + 1;
        Ok((state, stats))
    }
}

/// Advance `old` by `dt` with Newton iterations and time-step cutting.
pub fn newton_solve(
    system: &FlowSystem<'_>,
    old: &ReservoirState,
    dt: f64,
    config: NewtonConfig,
) -> std::result::Result<(ReservoirState, StepStats), String> {
    NewtonSolver::new(system, config).advance(old, dt)
}
