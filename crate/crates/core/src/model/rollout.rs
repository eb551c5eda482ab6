use super::{GnnModel, RecurrentState};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormStats};

/// Predicted fields `ŷ¹ … ŷⁿ` of one rollout.
pub type Rollout = Vec<Vec<f64>>;

fn advance(stats: &NormStats, y: &[f64], delta: &[f64], step: usize) -> Result<Vec<f64>> {
    let next: Vec<f64> = y.iter().zip(delta).map(|(y, d)| y + stats.delta_scale * d).collect();
    if let Some(i) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("prediction at step {step}, node {i}")));
    }
    Ok(next)
}

/// `ŷⁿ⁺¹ = yⁿ + σ·Δ̂`, with `graph` the normalized static graph whose field
/// column is overwritten from `y`.
pub fn ar_step(model: &GnnModel, p: &[f64], stats: &NormStats, graph: &mut Graph, y: &[f64]) -> Result<Vec<f64>> {
    stats.set_field(graph, y);
    let (delta, _, _) = model.step(p, graph, None)?;
    advance(stats, y, &delta, graph.step + 1)
}

/// Autoregressive rollout of `n_steps` from `y0`.
pub fn rollout_ar(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    base: &Graph,
    y0: &[f64],
    n_steps: usize,
) -> Result<Rollout> {
    if n_steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    let mut graph = base.clone();
    let mut out = Vec::with_capacity(n_steps);
    let mut y = y0.to_vec();
    for k in 0..n_steps {
        stats.set_field(&mut graph, &y);
        let (delta, _, _) = model.step(p, &graph, None)?;
        y = advance(stats, &y, &delta, k + 1)?;
        out.push(y.clone());
    }
    Ok(out)
}

/// One recurrent step; `memory = None` starts from zero memory.
pub fn rgnn_step(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    graph: &mut Graph,
    y: &[f64],
    memory: Option<&RecurrentState>,
) -> Result<(Vec<f64>, RecurrentState)> {
    stats.set_field(graph, y);
    let (delta, next, _) = model.step(p, graph, memory)?;
    let next = next.ok_or_else(|| Error::Config("model has no recurrent block".into()))?;
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("recurrent state at step {}", graph.step + 1)));
    }
    Ok((advance(stats, y, &delta, graph.step + 1)?, next))
}

/// Recurrent rollout. The ground-truth fields in `warmup` are consumed in
/// order to build the memory without emitting predictions; the rollout then
/// continues autoregressively from `y_start` for `n_steps`.
pub fn rollout_rgnn(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    base: &Graph,
    warmup: &[&[f64]],
    y_start: &[f64],
    n_steps: usize,
) -> Result<Rollout> {
    if n_steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    let mut graph = base.clone();
    let mut memory: Option<RecurrentState> = None;
    for y in warmup {
        stats.set_field(&mut graph, y);
        let (_, next, _) = model.step(p, &graph, memory.as_ref())?;
        memory = next;
    }
    let mut y = y_start.to_vec();
    let mut out = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let (next_y, next) = rgnn_step(model, p, stats, &mut graph, &y, memory.as_ref()).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("prediction at rollout step {}", k + 1)),
            other => other,
        })?;
        memory = Some(next);
        y = next_y;
        out.push(y.clone());
    }
    Ok(out)
}
