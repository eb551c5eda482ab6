//! Built-in verification battery: parameter counts, gradients, simulator
//! oracles, mass balance and checkpoint integrity.
//!
//! Each measurement is exposed separately so callers can apply their own
//! thresholds; [`battery`] applies the default ones.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::dfn::generate_dfn;
use crate::edfm::{build_edfm_grid, CartesianSpec, EdfmGrid};
use crate::error::Result;
use crate::graph::{GraphTemplate, NormFitter, NormStats, Target};
use crate::model::{count_params, GnnModel, GnnSpec};
use crate::nn::{grad_check, GradCheckConfig};
use crate::sim::{
    analytic, run_realization, FlowSystem, FluidModel, NewtonConfig, NewtonSolver, ReservoirState, SimConfig, WellSpec,
};
use crate::training::{sequence_loss, sequence_loss_grad, Feed, TrainConfig, TrainReport};
use crate::units::MILLIDARCY;

/// Architectures and their expected parameter counts.
pub const REFERENCE_COUNTS: [(Target, bool, usize); 4] = [
    (Target::Pressure, false, 188_201),
    (Target::Saturation, false, 184_753),
    (Target::Pressure, true, 214_441),
    (Target::Saturation, true, 222_385),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// `(spec, formula count, enumerated count, expected)` per reference model.
pub fn parameter_counts() -> Vec<(GnnSpec, usize, usize, usize)> {
    REFERENCE_COUNTS
        .iter()
        .map(|&(target, recurrent, expected)| {
            let spec = GnnSpec::full_size(target, recurrent);
            let enumerated = GnnModel::new(spec).map(|(_, p)| p.count()).unwrap_or(0);
            (spec, count_params(&spec), enumerated, expected)
        })
        .collect()
}

/// 4 × 2 grid (eight nodes) with smooth synthetic saturation fields.
pub fn toy_graph_problem() -> Result<(GraphTemplate, NormStats, Vec<Vec<f64>>)> {
    let grid = EdfmGrid::cartesian(CartesianSpec {
        nx: 4,
        ny: 2,
        extent: [40.0, 20.0, 5.0],
        porosity: 0.25,
        perm_md: 50.0,
    })?;
    let template = GraphTemplate::new(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fields: Vec<Vec<f64>> = (0..5)
        .map(|t| {
            (0..8)
                .map(|i| 0.2 + 0.05 * t as f64 + 0.02 * ((i * 7 + t) % 5) as f64 + 0.01 * rng.random::<f64>())
                .collect()
        })
        .collect();
    let mut fitter = NormFitter::new(Target::Saturation);
    fitter.add_static(&template);
    for w in fields.windows(2) {
        fitter.add_field(&w[0]);
        fitter.add_delta(&w[0], &w[1]);
    }
    Ok((template, fitter.finish()?, fields))
}

/// Largest relative error between the analytic gradient of a sequence loss
/// and central differences, over every parameter of a small network.
pub fn sequence_gradient_error(recurrent: bool, steps: usize, feed: Feed, seed: u64) -> Result<f64> {
    let (template, stats, fields) = toy_graph_problem()?;
    let (model, mut p) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 5, 2, recurrent), seed)?;
    // Move biases and layer-norm shifts off their initial values.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in p.data.iter_mut() {
        *v += 0.05 * rng.random_range(-1.0..1.0);
    }
    let base = stats.normalized_base(&template);
    let truth: Vec<&[f64]> = fields[..=steps].iter().map(Vec::as_slice).collect();
    let mut g = p.zeros_like();
    sequence_loss_grad(&model, &p.data, &stats, &base, &truth, feed, &mut g)?;
    let report = grad_check(
        |q| sequence_loss(&model, q, &stats, &base, &truth, feed).unwrap_or(f64::NAN),
        &p.data,
        &g,
        GradCheckConfig {
            step: 1e-5,
            max_params: p.len(),
            ..GradCheckConfig::default()
        },
    );
    Ok(report.max_rel_error)
}

/// Uniform 1-D grid along x.
pub fn line_grid(n: usize, length: f64) -> Result<EdfmGrid> {
    EdfmGrid::cartesian(CartesianSpec {
        nx: n,
        ny: 1,
        extent: [length, 10.0, 10.0],
        porosity: 0.2,
        perm_md: 100.0,
    })
}

/// Largest relative deviation of a steady single-phase 1-D solve from the
/// linear profile.
pub fn linear_pressure_error() -> Result<f64> {
    let n = 30;
    let grid = line_grid(n, 300.0)?;
    let fluid = FluidModel {
        c_w: 0.0,
        c_o: 0.0,
        s_wc: 0.0,
        s_or: 0.0,
        ..Default::default()
    };
    let (q, bhp, wi) = (1e-4, 5e6, 300.0);
    let wells = WellSpec {
        injector: 0,
        q_inj: q,
        producer: n - 1,
        bhp,
        wi_md_m: wi,
    };
    let system = FlowSystem::new(&grid, fluid, Some(wells))?;
    let mut solver = NewtonSolver::new(&system, NewtonConfig::default());
    let state = ReservoirState::uniform(n, 6e6, 1.0);
    let (next, _) = solver
        .advance(&state, 86_400.0)
        .map_err(|reason| crate::Error::Solver {
            realization: 0,
            step: 1,
            reason,
        })?;
    let t = grid.connections[0].trans_md_m * MILLIDARCY;
    let producer_p = bhp + q * fluid.mu_w / (wi * MILLIDARCY);
    let mut worst = 0.0f64;
    for (i, p) in next.pressure.iter().enumerate() {
        let expected = producer_p + (n - 1 - i) as f64 * q * fluid.mu_w / t;
        worst = worst.max((p - expected).abs() / expected);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterfloodFront {
    pub cells: usize,
    pub dx: f64,
    /// Position where the profile crosses the midpoint between the shock
    /// saturation and the initial saturation (m).
    pub numerical: f64,
    pub analytic: f64,
    /// Largest deviation from the analytic profile behind the front.
    pub rarefaction_error: f64,
}

impl WaterfloodFront {
    pub fn error_cells(&self) -> f64 {
        (self.numerical - self.analytic).abs() / self.dx
    }
}

/// Incompressible 1-D waterflood over 500 m to `pvi` pore volumes injected.
pub fn waterflood_front(cells: usize, pvi: f64) -> Result<WaterfloodFront> {
    let length = 500.0;
    let grid = line_grid(cells, length)?;
    let fluid = FluidModel {
        c_w: 0.0,
        c_o: 0.0,
        ..Default::default()
    };
    let s_init = fluid.s_wc;
    let pv: f64 = grid.cells.iter().map(|c| c.pore_volume()).sum();
    let q = 1e-4;
    let wells = WellSpec {
        injector: 0,
        q_inj: q,
        producer: cells - 1,
        bhp: 5e6,
        wi_md_m: 1e4,
    };
    let system = FlowSystem::new(&grid, fluid, Some(wells))?;
    let mut solver = NewtonSolver::new(&system, NewtonConfig::default());
    let steps = 3 * cells;
    let dt = pvi * pv / q / steps as f64;
    let mut state = ReservoirState::uniform(cells, 6e6, s_init);
    for n in 1..=steps {
        state = solver
            .advance(&state, dt)
            .map_err(|reason| crate::Error::Solver {
                realization: 0,
                step: n,
                reason,
            })?
            .0;
    }
    let dx = length / cells as f64;
    let s_front = analytic::front_saturation(&fluid, s_init);
    let x_front = analytic::front_position(&fluid, s_init, pvi) * length;
    let numerical = analytic::numerical_front_position(&state.saturation, dx, s_front, s_init).unwrap_or(f64::NAN);
    // Compare cells well behind the shock.
    let mut rarefaction_error = 0.0f64;
    for (i, s) in state.saturation.iter().enumerate() {
        let x = (i as f64 + 0.5) * dx;
        if x > 0.1 * length && x < x_front - 4.0 * dx {
            let exact = analytic::saturation_profile(&fluid, s_init, pvi, x / length);
            rarefaction_error = rarefaction_error.max((s - exact).abs());
        }
    }
    Ok(WaterfloodFront {
        cells,
        dx,
        numerical,
        analytic: x_front,
        rarefaction_error,
    })
}

/// Largest per-step phase balance error of a fractured realization, and the
/// Newton tolerance it is judged against.
pub fn mass_balance(sim: &SimConfig, seed: u64) -> Result<(f64, f64)> {
    let traj = run_realization(seed, sim)?;
    let worst = traj
        .steps
        .iter()
        .map(|r| r.balance_error[0].abs().max(r.balance_error[1].abs()))
        .fold(0.0, f64::max);
    Ok((worst, sim.newton.tol))
}

/// Smallest fracture-cell pore volume over the largest matrix-cell pore
/// volume for the full-size grid.
pub fn fracture_volume_ratio(seed: u64) -> Result<f64> {
    let sim = SimConfig::default();
    let grid = build_edfm_grid(sim.grid, &generate_dfn(seed, &sim.dfn)?)?;
    let n_m = grid.n_matrix();
    let min_frac = grid.cells[n_m..]
        .iter()
        .map(|c| c.pore_volume())
        .fold(f64::INFINITY, f64::min);
    let max_matrix = grid.cells[..n_m].iter().map(|c| c.pore_volume()).fold(0.0, f64::max);
    Ok(min_frac / max_matrix)
}

/// Save a small checkpoint, flip one byte of each file in turn and report
/// whether every corrupted copy is rejected while the intact one loads.
pub fn checkpoint_corruption_detected() -> Result<bool> {
    let (template, stats, _) = toy_graph_problem()?;
    drop(template);
    let (model, params) = GnnModel::initialized(GnnSpec::new(Target::Saturation, 4, 1, false), 0)?;
    let report = TrainReport {
        stage: 1,
        train_loss: vec![1.0],
        val_loss: vec![(0, 1.0)],
        best_epoch: 0,
        best_val_loss: 1.0,
        wall_clock_s: 0.0,
    };
    let ckpt = Checkpoint::new(model, params, stats, TrainConfig::stage1(), 0, &report, None);
    let dir = std::env::temp_dir().join(format!(
        "fracnet-verify-{}-{}",
        std::process::id(),
        rand::random::<u64>()
    ));
    let outcome = (|| -> Result<bool> {
        ckpt.save(&dir)?;
        if Checkpoint::load(&dir).is_err() {
            return Ok(false);
        }
        for name in ["params.bin", "params.json", "meta.json", "SHA256SUMS"] {
            let path = dir.join(name);
            let original = std::fs::read(&path).map_err(|e| crate::Error::io(&path, e))?;
            let mut bad = original.clone();
            let k = bad.len() / 2;
            bad[k] ^= 0x01;
            std::fs::write(&path, &bad).map_err(|e| crate::Error::io(&path, e))?;
            let rejected = Checkpoint::load(&dir).is_err();
            std::fs::write(&path, &original).map_err(|e| crate::Error::io(&path, e))?;
            if !rejected {
                return Ok(false);
            }
        }
        Ok(true)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    outcome
}

/// Run the verification battery with its default thresholds.
pub fn battery() -> Vec<Check> {
    let mut checks = Vec::new();
    for (spec, formula, enumerated, expected) in parameter_counts() {
        let kind = if spec.recurrent { "rgnn" } else { "gnn" };
        checks.push(Check::new(
            format!("parameter count {kind}/{}", spec.target.name()),
            formula == expected && enumerated == expected,
            format!("formula {formula}, enumerated {enumerated}, expected {expected}"),
        ));
    }
    for (name, recurrent, steps, feed) in [
        ("gradient one-step gnn", false, 1, Feed::TeacherForced),
        ("gradient 3-step gnn rollout", false, 3, Feed::Rollout),
        ("gradient 3-step rgnn rollout", true, 3, Feed::Rollout),
    ] {
        checks.push(Check::from_result(
            name,
            sequence_gradient_error(recurrent, steps, feed, 10)
                .map(|e| (e < 1e-5, format!("max relative error {e:.3e} (< 1e-5)"))),
        ));
    }
    checks.push(Check::from_result(
        "linear pressure profile",
        linear_pressure_error().map(|e| (e < 1e-8, format!("max relative error {e:.3e} (< 1e-8)"))),
    ));
    // A first-order upwind scheme smears the leading edge of the shock over a
    // few cells; the battery bounds that spread and checks the rarefaction.
    checks.push(Check::from_result(
        "waterflood profile",
        waterflood_front(50, 0.3).map(|f| {
            (
                f.error_cells() < 4.0 && f.rarefaction_error < 0.03,
                format!(
                    "front {:.1} m vs {:.1} m ({:.2} cells, < 4), rarefaction error {:.4} (< 0.03)",
                    f.numerical,
                    f.analytic,
                    f.error_cells(),
                    f.rarefaction_error
                ),
            )
        }),
    ));
    let desk = PipelineConfig::desk().sim;
    checks.push(Check::from_result(
        "mass balance (desk grid)",
        mass_balance(&desk, 11).map(|(w, tol)| {
            (
                w < 10.0 * tol,
                format!("worst step balance {w:.3e} (< {:.1e})", 10.0 * tol),
            )
        }),
    ));
    checks.push(Check::from_result(
        "fracture/matrix pore-volume ratio",
        fracture_volume_ratio(0).map(|r| (r < 1e-2, format!("{r:.3e} (< 1e-2)"))),
    ));
    checks.push(Check::from_result(
        "checkpoint corruption detection",
        checkpoint_corruption_detected().map(|ok| (ok, "single-byte corruption rejected in every file".to_string())),
    ));
    checks
}
