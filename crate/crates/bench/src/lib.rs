//! Shared fixtures for the benchmarks in `benches/`.

use fracnet_core::config::PipelineConfig;
use fracnet_core::dfn::generate_dfn;
use fracnet_core::edfm::{build_edfm_grid, EdfmGrid};
use fracnet_core::graph::{Graph, GraphTemplate, NormFitter, NormStats, Target};
use fracnet_core::sim::{run_realization, SimTrajectory};

/// Fractured grid of the desk preset.
pub fn desk_grid(seed: u64) -> EdfmGrid {
    let sim = PipelineConfig::desk().sim;
    build_edfm_grid(sim.grid, &generate_dfn(seed, &sim.dfn).expect("dfn")).expect("grid")
}

/// Simulated desk realization with its saturation graph and statistics.
pub struct SurrogateFixture {
    pub trajectory: SimTrajectory,
    pub stats: NormStats,
    pub base: Graph,
    pub fields: Vec<Vec<f64>>,
}

pub fn surrogate_fixture(seed: u64) -> SurrogateFixture {
    let cfg = PipelineConfig::desk();
    let trajectory = run_realization(seed, &cfg.sim).expect("simulation");
    let template = GraphTemplate::new(&trajectory.grid).expect("template");
    let fields: Vec<Vec<f64>> = trajectory.states.iter().map(|s| s.saturation.clone()).collect();
    let mut fitter = NormFitter::new(Target::Saturation);
    fitter.add_static(&template);
    for w in fields[..=10].windows(2) {
        fitter.add_field(&w[0]);
        fitter.add_delta(&w[0], &w[1]);
    }
    let stats = fitter.finish().expect("stats");
    let base = stats.normalized_base(&template);
    SurrogateFixture {
        trajectory,
        stats,
        base,
        fields,
    }
}
