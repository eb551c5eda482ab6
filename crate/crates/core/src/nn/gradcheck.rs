use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub max_params: usize,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_params: 5000,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare `grad` with central differences of `loss` on up to
/// `max_params` randomly chosen coordinates of `params`. The relative error
/// is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(loss: F, params: &[f64], grad: &[f64], cfg: GradCheckConfig) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let n = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = if n <= cfg.max_params {
        (0..n).collect()
    } else {
        sample(&mut rng, n, cfg.max_params).into_vec()
    };
    idx.sort_unstable();
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        checked: idx.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &k in &idx {
        let orig = x[k];
        x[k] = orig + cfg.step;
        let up = loss(&x);
        x[k] = orig - cfg.step;
        let down = loss(&x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = grad[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst_index = k;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
