//! Rollout evaluation and report files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphTemplate, NormStats, Target};
use crate::jsonfmt::{self, fmt_f64};
use crate::model::{rollout_ar, rollout_rgnn, GnnModel, Rollout};
use crate::nn::ParamStore;
use crate::sim::ReservoirState;

/// Steps predicted by each evaluation task.
pub const EVAL_STEPS: usize = 10;

/// Mean relative absolute error `(1/n) Σ |ŷ − y| / y` on raw fields.
pub fn mrae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape("mrae", truth.len(), pred.len()));
    }
    let mut sum = 0.0;
    for (i, (&p, &y)) in pred.iter().zip(truth).enumerate() {
        if !(y > 0.0) {
            return Err(Error::Metric(format!(
                "reference value {y} at cell {i} is not positive"
            )));
        }
        sum += (p - y).abs() / y;
    }
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Steps 1..=10 from the initial state.
    Generalization,
    /// Steps 11..=20 after consuming the true states 0..=10.
    Extrapolation,
}

impl Task {
    /// Index of the true state the rollout starts from.
    pub fn start(&self) -> usize {
        match self {
            Task::Generalization => 0,
            Task::Extrapolation => EVAL_STEPS,
        }
    }

    pub fn first_step(&self) -> usize {
        self.start() + 1
    }

    /// States a trajectory must contain.
    pub fn required_states(&self) -> usize {
        self.start() + EVAL_STEPS + 1
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Generalization => "generalization",
            Task::Extrapolation => "extrapolation",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generalization" => Ok(Task::Generalization),
            "extrapolation" => Ok(Task::Extrapolation),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One held-out trajectory.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub realization: u64,
    pub template: GraphTemplate,
    pub states: Vec<ReservoirState>,
}

impl EvalCase {
    pub fn fields(&self, target: Target) -> Vec<&[f64]> {
        self.states.iter().map(|s| target.field(s)).collect()
    }

    fn check(&self, task: Task) -> Result<()> {
        if self.states.len() < task.required_states() {
            return Err(Error::Config(format!(
                "realization {} has {} states, {task} needs {}",
                self.realization,
                self.states.len(),
                task.required_states()
            )));
        }
        Ok(())
    }
}

/// A trained network with its normalization.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub model: GnnModel,
    pub params: ParamStore,
    pub stats: NormStats,
    pub stage: u8,
}

impl Surrogate {
    pub fn new(model: GnnModel, params: ParamStore, stats: NormStats, stage: u8) -> Result<Self> {
        if model.spec.target != stats.target {
            return Err(Error::Config(format!(
                "model predicts {} but normalization is for {}",
                model.spec.target.name(),
                stats.target.name()
            )));
        }
        if params.len() != crate::model::count_params(&model.spec) {
            return Err(Error::shape(
                "surrogate parameters",
                crate::model::count_params(&model.spec),
                params.len(),
            ));
        }
        Ok(Self {
            model,
            params,
            stats,
            stage,
        })
    }

    pub fn target(&self) -> Target {
        self.model.spec.target
    }

    pub fn tag(&self) -> &'static str {
        if self.model.spec.recurrent {
            "rgnn"
        } else {
            "gnn"
        }
    }

    /// Predicted fields for the task's ten steps. The recurrent network
    /// consumes the true states before the start state as warm-up.
    pub fn predict(&self, task: Task, case: &EvalCase) -> Result<Rollout> {
        case.check(task)?;
        let fields = case.fields(self.target());
        let base = self.stats.normalized_base(&case.template);
        let p = &self.params.data;
        let start = task.start();
        if self.model.spec.recurrent {
            rollout_rgnn(
                &self.model,
                p,
                &self.stats,
                &base,
                &fields[..start],
                fields[start],
                EVAL_STEPS,
            )
        } else {
            rollout_ar(&self.model, p, &self.stats, &base, fields[start], EVAL_STEPS)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrors {
    pub realization: u64,
    /// MRAE per predicted step.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let lo = x.floor() as usize;
            let hi = x.ceil() as usize;
            v[lo] + (x - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Per-step errors of one model on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: Task,
    /// `gnn`, `rgnn` or `persistence`.
    pub model: String,
    /// Training stage, or `-` for the baseline.
    pub stage: String,
    pub field: Target,
    pub first_step: usize,
    pub trajectories: Vec<TrajectoryErrors>,
}

impl EvalResult {
    pub fn steps(&self) -> Vec<usize> {
        (self.first_step..self.first_step + EVAL_STEPS).collect()
    }

    /// Mean over trajectories of the error at step offset `k`.
    pub fn step_mean(&self, k: usize) -> f64 {
        self.trajectories.iter().map(|t| t.errors[k]).sum::<f64>() / self.trajectories.len() as f64
    }

    /// Mean over all trajectories and steps.
    pub fn mean(&self) -> f64 {
        let n: usize = self.trajectories.iter().map(|t| t.errors.len()).sum();
        self.trajectories.iter().flat_map(|t| &t.errors).sum::<f64>() / n as f64
    }

    /// Mean of each trajectory over its steps.
    pub fn trajectory_means(&self) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(|t| t.errors.iter().sum::<f64>() / t.errors.len() as f64)
            .collect()
    }

    pub fn box_stats(&self) -> Vec<BoxStats> {
        (0..EVAL_STEPS)
            .map(|k| {
                let col: Vec<f64> = self.trajectories.iter().map(|t| t.errors[k]).collect();
                BoxStats::of(&col).expect("evaluation has at least one trajectory")
            })
            .collect()
    }
}

/// Errors and predicted fields of a surrogate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: EvalResult,
    pub predictions: Vec<Rollout>,
}

impl Evaluation {
    /// Saturation predictions clipped to `[0, 1]` and scored again, tagged
    /// `<model>-clamped`. Rollouts themselves never clamp; this is a
    /// reporting view. Pressure evaluations are returned unchanged.
    pub fn clamped(&self, cases: &[EvalCase]) -> Result<Evaluation> {
        if self.result.field != Target::Saturation {
            return Ok(self.clone());
        }
        let predictions: Vec<Rollout> = self
            .predictions
            .iter()
            .map(|r| {
                r.iter()
                    .map(|y| y.iter().map(|v| v.clamp(0.0, 1.0)).collect())
                    .collect()
            })
            .collect();
        let r = &self.result;
        let result = score_predictions(
            &format!("{}-clamped", r.model),
            &r.stage,
            r.task,
            r.field,
            cases,
            &predictions,
        )?;
        Ok(Evaluation { result, predictions })
    }
}

fn score(task: Task, target: Target, cases: &[EvalCase], preds: &[Rollout]) -> Result<Vec<TrajectoryErrors>> {
    cases
        .iter()
        .zip(preds)
        .map(|(case, pred)| {
            let fields = case.fields(target);
            let errors = pred
                .iter()
                .enumerate()
                .map(|(k, y)| mrae(y, fields[task.first_step() + k]))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrajectoryErrors {
                realization: case.realization,
                errors,
            })
        })
        .collect()
}

/// Roll the surrogate out on every case.
pub fn evaluate(surrogate: &Surrogate, task: Task, cases: &[EvalCase]) -> Result<Evaluation> {
    if cases.is_empty() {
        return Err(Error::Config("no test trajectories".into()));
    }
    let preds = cases
        .par_iter()
        .map(|c| surrogate.predict(task, c))
        .collect::<Result<Vec<_>>>()?;
    let trajectories = score(task, surrogate.target(), cases, &preds)?;
    Ok(Evaluation {
        result: EvalResult {
            task,
            model: surrogate.tag().into(),
            stage: surrogate.stage.to_string(),
            field: surrogate.target(),
            first_step: task.first_step(),
            trajectories,
        },
        predictions: preds,
    })
}

pub fn eval_generalization(surrogate: &Surrogate, cases: &[EvalCase]) -> Result<Evaluation> {
    evaluate(surrogate, Task::Generalization, cases)
}

pub fn eval_extrapolation(surrogate: &Surrogate, cases: &[EvalCase]) -> Result<Evaluation> {
    evaluate(surrogate, Task::Extrapolation, cases)
}

/// Score externally produced predictions, one rollout of [`EVAL_STEPS`]
/// fields per case.
pub fn score_predictions(
    model: &str,
    stage: &str,
    task: Task,
    target: Target,
    cases: &[EvalCase],
    preds: &[Rollout],
) -> Result<EvalResult> {
    if cases.is_empty() || cases.len() != preds.len() {
        return Err(Error::shape("predictions per case", cases.len(), preds.len()));
    }
    for (c, p) in cases.iter().zip(preds) {
        c.check(task)?;
        if p.len() != EVAL_STEPS {
            return Err(Error::shape("predicted steps", EVAL_STEPS, p.len()));
        }
    }
    Ok(EvalResult {
        task,
        model: model.into(),
        stage: stage.into(),
        field: target,
        first_step: task.first_step(),
        trajectories: score(task, target, cases, preds)?,
    })
}

/// Baseline repeating the start state of the task for every step.
pub fn persistence(task: Task, target: Target, cases: &[EvalCase]) -> Result<EvalResult> {
    let preds = cases
        .iter()
        .map(|c| {
            c.check(task)?;
            Ok(vec![target.field(&c.states[task.start()]).to_vec(); EVAL_STEPS])
        })
        .collect::<Result<Vec<_>>>()?;
    score_predictions("persistence", "-", task, target, cases, &preds)
}

/// True and predicted field of one trajectory at one step.
#[derive(Debug, Clone)]
pub struct FieldDump {
    pub task: Task,
    pub model: String,
    pub stage: String,
    pub field: Target,
    pub realization: u64,
    pub step: usize,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl FieldDump {
    /// Dumps for every step of the listed realizations.
    pub fn from_evaluation(eval: &Evaluation, cases: &[EvalCase], realizations: &[u64]) -> Vec<FieldDump> {
        let r = &eval.result;
        let mut out = Vec::new();
        for (case, pred) in cases.iter().zip(&eval.predictions) {
            if !realizations.contains(&case.realization) {
                continue;
            }
            let fields = case.fields(r.field);
            for (k, y) in pred.iter().enumerate() {
                let step = r.first_step + k;
                out.push(FieldDump {
                    task: r.task,
                    model: r.model.clone(),
                    stage: r.stage.clone(),
                    field: r.field,
                    realization: case.realization,
                    step,
                    truth: fields[step].to_vec(),
                    prediction: y.clone(),
                });
            }
        }
        out
    }
}

/// Simulated producer rates of one trajectory, per report step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionSeries {
    pub realization: u64,
    /// Report step length (days).
    pub dt_days: f64,
    /// `[water, oil]` surface rates (m³/day) for steps 1, 2, ...
    pub rates: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Vec<EvalResult>,
    pub dumps: Vec<FieldDump>,
    pub production: Vec<ProductionSeries>,
}

pub const SUMMARY_SCHEMA: &str = "fracnet.summary/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub task: Task,
    pub model: String,
    pub stage: String,
    pub field: Target,
    pub trajectories: usize,
    pub steps: Vec<usize>,
    /// Mean over trajectories and steps.
    pub mean: f64,
    pub step_mean: Vec<f64>,
    pub step_box: Vec<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    pub fn of(results: &[EvalResult]) -> Self {
        Self {
            schema: SUMMARY_SCHEMA.into(),
            entries: results
                .iter()
                .map(|r| SummaryEntry {
                    task: r.task,
                    model: r.model.clone(),
                    stage: r.stage.clone(),
                    field: r.field,
                    trajectories: r.trajectories.len(),
                    steps: r.steps(),
                    mean: r.mean(),
                    step_mean: (0..EVAL_STEPS).map(|k| r.step_mean(k)).collect(),
                    step_box: r.box_stats(),
                })
                .collect(),
        }
    }

    pub fn find(&self, task: Task, model: &str, stage: &str, field: Target) -> Option<&SummaryEntry> {
        self.entries
            .iter()
            .find(|e| e.task == task && e.model == model && e.stage == stage && e.field == field)
    }
}

pub const MRAE_HEADER: [&str; 7] = ["task", "model", "stage", "trajectory", "step", "field", "value"];
pub const FIELDS_HEADER: [&str; 8] = [
    "task",
    "model",
    "stage",
    "field",
    "cell",
    "truth",
    "prediction",
    "error",
];
pub const PRODUCTION_HEADER: [&str; 5] = [
    "realization",
    "step",
    "time_days",
    "water_rate_m3_per_day",
    "oil_rate_m3_per_day",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Write `mrae_per_step.csv`, `summary.json`, `fields_<real>_<step>.csv`
/// and `production.csv` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = csv_writer(&dir.join("mrae_per_step.csv"))?;
    w.write_record(MRAE_HEADER)?;
    for r in &report.results {
        for t in &r.trajectories {
            for (k, e) in t.errors.iter().enumerate() {
                w.write_record([
                    r.task.name(),
                    &r.model,
                    &r.stage,
                    &t.realization.to_string(),
                    &(r.first_step + k).to_string(),
                    r.field.name(),
                    &fmt_f64(*e),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(dir.join("mrae_per_step.csv"), e))?;

    jsonfmt::write_file(&dir.join("summary.json"), &Summary::of(&report.results))?;

    let mut groups: Vec<(u64, usize)> = report.dumps.iter().map(|d| (d.realization, d.step)).collect();
    groups.sort_unstable();
    groups.dedup();
    for (real, step) in groups {
        let path = dir.join(format!("fields_{real}_{step}.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(FIELDS_HEADER)?;
        for d in report.dumps.iter().filter(|d| d.realization == real && d.step == step) {
            for (cell, (y, p)) in d.truth.iter().zip(&d.prediction).enumerate() {
                w.write_record([
                    d.task.name(),
                    &d.model,
                    &d.stage,
                    d.field.name(),
                    &cell.to_string(),
                    &fmt_f64(*y),
                    &fmt_f64(*p),
                    &fmt_f64(p - y),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let path = dir.join("production.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(PRODUCTION_HEADER)?;
    for s in &report.production {
        for (k, [water, oil]) in s.rates.iter().enumerate() {
            w.write_record([
                s.realization.to_string(),
                (k + 1).to_string(),
                fmt_f64((k + 1) as f64 * s.dt_days),
                fmt_f64(*water),
                fmt_f64(*oil),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
