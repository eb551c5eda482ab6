//! Two-stage training: teacher-forced one-step training, then fine-tuning
//! on full autoregressive rollouts with backpropagation through time.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NormStats};
use crate::model::{GnnModel, RecurrentState, StepCache};
use crate::nn::{Adam, ParamStore};

/// `‖ŷ − y‖²/n + ‖ŷ − y‖₁/n`.
pub fn loss_term(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (a, b) in pred.iter().zip(truth) {
        let e = a - b;
        sq += e * e;
        abs += e.abs();
    }
    sq / n + abs / n
}

/// [`loss_term`] of `(pred − truth) / scale` against zero.
fn scaled_loss(pred: &[f64], truth: &[f64], scale: f64) -> f64 {
    let n = pred.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (a, b) in pred.iter().zip(truth) {
        let e = (a - b) / scale;
        sq += e * e;
        abs += e.abs();
    }
    sq / n + abs / n
}

/// Gradient of [`scaled_loss`] with respect to the scaled error, times
/// `weight`.
fn loss_term_grad(pred: &[f64], truth: &[f64], scale: f64, weight: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(truth)
        .map(|(a, b)| {
            let e = (a - b) / scale;
            let sign = if e > 0.0 {
                1.0
            } else if e < 0.0 {
                -1.0
            } else {
                0.0
            };
            weight * (2.0 * e + sign) / n
        })
        .collect()
}

/// How network inputs are chosen along a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feed {
    /// Ground truth at every step.
    TeacherForced,
    /// Own predictions after the first step.
    Rollout,
}

/// Field loss of a sequence predicting `truth[1..]` from `truth[0]`, averaged
/// over steps. Errors are measured in normalized field units.
pub fn sequence_loss(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    base: &Graph,
    truth: &[&[f64]],
    feed: Feed,
) -> Result<f64> {
    Ok(forward_sequence(model, p, stats, base, truth, feed, false)?.0)
}

struct Trace {
    preds: Vec<Vec<f64>>,
    caches: Vec<StepCache>,
}

fn forward_sequence(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    base: &Graph,
    truth: &[&[f64]],
    feed: Feed,
    keep: bool,
) -> Result<(f64, Trace)> {
    let steps = truth.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::Config("a training sequence needs at least two states".into()));
    }
    let scale = stats.delta_scale;
    let unit = stats.loss_unit();
    let mut graph = base.clone();
    let mut memory: Option<RecurrentState> = None;
    let mut trace = Trace {
        preds: Vec::new(),
        caches: Vec::new(),
    };
    let mut y: Vec<f64> = truth[0].to_vec();
    let mut loss = 0.0;
    for t in 0..steps {
        if feed == Feed::TeacherForced && t > 0 {
            y = truth[t].to_vec();
        }
        stats.set_field(&mut graph, &y);
        let (delta, next, cache) = model.step(p, &graph, memory.as_ref())?;
        let pred: Vec<f64> = y.iter().zip(&delta).map(|(y, d)| y + scale * d).collect();
        loss += scaled_loss(&pred, truth[t + 1], unit);
        memory = next;
        if keep {
            trace.caches.push(cache);
            trace.preds.push(pred.clone());
        }
        y = pred;
    }
    Ok((loss / steps as f64, trace))
}

/// Sequence loss and its gradient, accumulated into `grad`.
pub fn sequence_loss_grad(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    base: &Graph,
    truth: &[&[f64]],
    feed: Feed,
    grad: &mut [f64],
) -> Result<f64> {
    let (loss, trace) = forward_sequence(model, p, stats, base, truth, feed, true)?;
    let steps = trace.preds.len();
    let scale = stats.delta_scale;
    let unit = stats.loss_unit();
    let slope = stats.field_in_slope();
    let n = truth[0].len();
    // Gradient on ŷ^{t+1} arriving from later steps.
    let mut carry = vec![0.0; n];
    let mut d_memory: Option<RecurrentState> = None;
    for t in (0..steps).rev() {
        let d_err = loss_term_grad(&trace.preds[t], truth[t + 1], unit, 1.0 / steps as f64);
        let d_pred: Vec<f64> = d_err.iter().zip(&carry).map(|(d, c)| d / unit + c).collect();
        let d_delta: Vec<f64> = d_pred.iter().map(|d| d * scale).collect();
        let (d_field, d_mem_in) = model.step_backward(p, &trace.caches[t], &d_delta, d_memory.as_ref(), grad);
        d_memory = d_mem_in;
        carry = match feed {
            Feed::Rollout => d_pred.iter().zip(&d_field).map(|(dp, df)| dp + df * slope).collect(),
            Feed::TeacherForced => vec![0.0; n],
        };
    }
    Ok(loss)
}

/// Static graph and raw target fields of one realization.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub realization: u64,
    /// Normalized static graph.
    pub base: Graph,
    /// Raw target field for every exported state.
    pub fields: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub validate_every: usize,
    /// Supervised steps per sequence.
    pub n_steps: usize,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip: Option<f64>,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            epochs: 200,
            lr: 1e-3,
            weight_decay: 5e-3,
            gamma: 0.995,
            batch_size: 4,
            validate_every: 5,
            n_steps: 10,
            seed: 0,
            clip: None,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            epochs: 100,
            lr: 1e-4,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_size == 0 || self.validate_every == 0 || self.n_steps == 0 {
            return Err(Error::Config(
                "batch size, validation period and n_steps must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    fn feed(&self) -> Feed {
        if self.stage == 1 {
            Feed::TeacherForced
        } else {
            Feed::Rollout
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: u8,
    /// Mean training loss per epoch; entry 0 is the initial model.
    pub train_loss: Vec<f64>,
    /// `(epoch, loss)` at every validation.
    pub val_loss: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_clock_s: f64,
}

/// One unit of work: a realization and the first state of its window.
#[derive(Debug, Clone, Copy)]
struct Item {
    sample: usize,
    start: usize,
    len: usize,
}

fn items(model: &GnnModel, samples: &[TrainSample], cfg: &TrainConfig) -> Result<Vec<Item>> {
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.fields.len() < cfg.n_steps + 1 {
            return Err(Error::Config(format!(
                "realization {} has {} states, need {}",
                s.realization,
                s.fields.len(),
                cfg.n_steps + 1
            )));
        }
        // The plain network trains on independent one-step pairs in stage 1;
        // everything else uses whole sequences.
        if cfg.stage == 1 && !model.spec.recurrent {
            out.extend((0..cfg.n_steps).map(|start| Item {
                sample: i,
                start,
                len: 1,
            }));
        } else {
            out.push(Item {
                sample: i,
                start: 0,
                len: cfg.n_steps,
            });
        }
    }
    Ok(out)
}

fn window<'a>(s: &'a TrainSample, it: &Item) -> Vec<&'a [f64]> {
    s.fields[it.start..=it.start + it.len]
        .iter()
        .map(Vec::as_slice)
        .collect()
}

/// Mean loss over `samples` in the form used by stage `cfg.stage`.
pub fn evaluate_loss(
    model: &GnnModel,
    p: &[f64],
    stats: &NormStats,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let work = items(model, samples, cfg)?;
    let losses: Vec<Result<f64>> = work
        .par_iter()
        .map(|it| {
            sequence_loss(
                model,
                p,
                stats,
                &samples[it.sample].base,
                &window(&samples[it.sample], it),
                cfg.feed(),
            )
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / work.len() as f64)
}

/// Train `params` in place and leave the best validated parameters in it.
/// `progress` is called after every epoch with `(epoch, train, val)`.
pub fn train(
    model: &GnnModel,
    params: &mut ParamStore,
    stats: &NormStats,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64, Option<f64>),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let clock = Instant::now();
    let work = items(model, train_set, cfg)?;
    let mut order: Vec<usize> = (0..work.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(params.len(), cfg.lr, cfg.weight_decay, cfg.gamma)?;
    let feed = cfg.feed();

    let initial = evaluate_loss(model, &params.data, stats, train_set, cfg)?;
    let v0 = evaluate_loss(model, &params.data, stats, val_set, cfg)?;
    let mut report = TrainReport {
        stage: cfg.stage,
        train_loss: vec![initial],
        val_loss: vec![(0, v0)],
        best_epoch: 0,
        best_val_loss: v0,
        wall_clock_s: 0.0,
    };
    progress(0, initial, Some(v0));
    let mut best = params.data.clone();

    let mut sample_loss = vec![0.0; work.len()];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let p = &params.data;
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&k| {
                    let it = &work[k];
                    let s = &train_set[it.sample];
                    let mut g = vec![0.0; p.len()];
                    let l = sequence_loss_grad(model, p, stats, &s.base, &window(s, it), feed, &mut g)?;
                    Ok((l, g))
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            let w = 1.0 / batch.len() as f64;
            for (&k, r) in batch.iter().zip(results) {
                let (l, g) = r?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
                }
                sample_loss[k] = l;
                for (a, v) in grad.iter_mut().zip(&g) {
                    *a += w * v;
                }
            }
            if let Some(max_norm) = cfg.clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let f = max_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= f);
                }
            }
            opt.update(params, &grad)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        opt.decay();
        let train_loss = sample_loss.iter().sum::<f64>() / work.len() as f64;
        report.train_loss.push(train_loss);
        let mut val = None;
        if epoch % cfg.validate_every == 0 || epoch == cfg.epochs {
            let v = evaluate_loss(model, &params.data, stats, val_set, cfg)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
            }
            report.val_loss.push((epoch, v));
            if v < report.best_val_loss {
                report.best_val_loss = v;
                report.best_epoch = epoch;
                best.clone_from(&params.data);
            }
            val = Some(v);
        }
        progress(epoch, train_loss, val);
    }
    params.data = best;
    report.wall_clock_s = clock.elapsed().as_secs_f64();
    Ok(report)
}
