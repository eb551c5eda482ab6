//! Pipeline commands behind the `fracnet` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fracnet_core::checkpoint::Checkpoint;
use fracnet_core::config::PipelineConfig;
use fracnet_core::dataset::{self, Dataset, GenOutcome, Manifest, SplitSizes};
use fracnet_core::eval::{self, emit_report, persistence, EvalResult, FieldDump, Report, Summary, Task};
use fracnet_core::graph::Target;
use fracnet_core::jsonfmt;
use fracnet_core::model::{count_params, GnnModel};
use fracnet_core::training::{train, TrainReport};
use fracnet_core::verify;

pub const THREADS_ENV: &str = "FRACNET_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] fracnet_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) | CliError::Failed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "fracnet",
    version,
    about = "Fractured-reservoir simulation and graph-network surrogates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate realizations into a dataset directory.
    Datagen(DatagenArgs),
    /// Train one network for one stage.
    Train(TrainArgs),
    /// Roll checkpoints out on the test split and write report files.
    Eval(EvalArgs),
    /// Merge evaluation outputs into one report and print a summary table.
    Report(ReportArgs),
    /// Run the built-in verification battery.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigSource {
    /// Pipeline configuration file (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset: paper, desk or smoke.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    fn resolve(&self, fallback: Option<&Path>) -> CliResult<PipelineConfig> {
        if let Some(path) = &self.config {
            return Ok(PipelineConfig::load(path)?);
        }
        if let Some(name) = &self.preset {
            return PipelineConfig::preset(name).map_err(|e| CliError::Usage(e.to_string()));
        }
        match fallback {
            Some(path) if path.is_file() => Ok(PipelineConfig::load(path)?),
            _ => Ok(PipelineConfig::desk()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Total realizations; split sizes keep the configured ratio.
    #[arg(long = "n")]
    pub n_realizations: Option<usize>,
    /// Master seed of the dataset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel simulation workers.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Gnn,
    Rgnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Pressure,
    Saturation,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Pressure => Target::Pressure,
            TargetArg::Saturation => Target::Saturation,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Defaults to the configuration stored with the dataset.
    #[command(flatten)]
    pub source: ConfigSource,
    /// Stage-1 checkpoint to start from (required for stage 2).
    #[arg(long)]
    pub ckpt_in: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    /// Override the configured number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the initialization and shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Generalization,
    Extrapolation,
    All,
}

impl TaskArg {
    fn tasks(self) -> Vec<Task> {
        match self {
            TaskArg::Generalization => vec![Task::Generalization],
            TaskArg::Extrapolation => vec![Task::Extrapolation],
            TaskArg::All => vec![Task::Generalization, Task::Extrapolation],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directories.
    #[arg(long = "ckpt", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TaskArg::All)]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Test realizations whose full fields are written out.
    #[arg(long, default_value_t = 1)]
    pub dump: usize,
    /// Also report saturation errors with predictions clipped to [0, 1].
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Evaluation output directories.
    #[arg(long = "results", required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset whose test-split production curves are included.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Checkpoints whose integrity is also checked.
    #[arg(long = "ckpt", num_args = 0..)]
    pub checkpoints: Vec<PathBuf>,
}

/// Size the global thread pool from the environment.
pub fn init_threads() -> CliResult<Option<usize>> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {text:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    Ok(Some(n))
}

pub fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Datagen(a) => datagen(&a).map(|_| ()),
        Command::Train(a) => train_cmd(&a).map(|_| ()),
        Command::Eval(a) => eval_cmd(&a).map(|_| ()),
        Command::Report(a) => report_cmd(&a).map(|_| ()),
        Command::Verify(a) => verify_cmd(&a),
    }
}

/// Split sizes for `n` realizations in the ratio of `base`.
pub fn scaled_splits(base: SplitSizes, n: usize) -> CliResult<SplitSizes> {
    let total = base.total() as f64;
    let share = |k: usize| ((n as f64 * k as f64 / total).round() as usize).max(1);
    let val = share(base.val);
    let test = share(base.test);
    if n < val + test + 1 {
        return Err(CliError::Usage(format!("{n} realizations cannot fill three splits")));
    }
    Ok(SplitSizes {
        train: n - val - test,
        val,
        test,
    })
}

pub fn datagen(a: &DatagenArgs) -> CliResult<Manifest> {
    let mut cfg = a.source.resolve(None)?;
    if let Some(n) = a.n_realizations {
        cfg.splits = scaled_splits(cfg.splits, n)?;
    }
    if let Some(seed) = a.seed {
        cfg.data_seed = seed;
    }
    cfg.validate()?;
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    let snapshot = a.out.join("config.json");
    if snapshot.is_file() {
        let old = PipelineConfig::load(&snapshot)?;
        if old.sim != cfg.sim || old.splits != cfg.splits || old.data_seed != cfg.data_seed {
            return Err(CliError::Failed(format!(
                "{} holds a dataset generated with different settings",
                a.out.display()
            )));
        }
    }
    let clock = Instant::now();
    let manifest = dataset::generate(
        &a.out,
        &cfg.sim,
        cfg.splits,
        cfg.data_seed,
        a.workers,
        |id, outcome| match outcome {
            GenOutcome::Existing => eprintln!("realization {id}: present"),
            GenOutcome::Simulated { wall_clock_s } => eprintln!("realization {id}: simulated in {wall_clock_s:.1} s"),
            GenOutcome::Failed { reason } => eprintln!("realization {id}: quarantined ({reason})"),
        },
    )?;
    cfg.save(&snapshot)?;
    let q = manifest.quarantined();
    println!(
        "dataset {}: {} realizations ({} train, {} val, {} test), {} quarantined, {:.1} s",
        a.out.display(),
        manifest.entries.len(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        q.len(),
        clock.elapsed().as_secs_f64()
    );
    Ok(manifest)
}

fn manifest_sha(data: &Path) -> CliResult<String> {
    let path = data.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    Ok(dataset::sha256_hex(&bytes))
}

/// Outcome of [`train_cmd`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<TrainOutcome> {
    if a.stage == 2 && a.ckpt_in.is_none() {
        return Err(CliError::Usage(
            "stage 2 needs --ckpt-in with a stage-1 checkpoint".into(),
        ));
    }
    let mut cfg = a.source.resolve(Some(&a.data.join("config.json")))?;
    if let Some(seed) = a.seed {
        cfg.init_seed = seed;
    }
    let target: Target = a.target.into();
    let spec = cfg.spec(target, a.model == ModelKind::Rgnn);
    let mut tcfg = cfg.train_config(a.stage)?;
    tcfg.seed = cfg.init_seed;
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    match a.stage {
        1 => cfg.stage1 = tcfg,
        _ => cfg.stage2 = tcfg,
    }
    cfg.validate()?;

    let ds = Dataset::open(&a.data)?;
    let splits = &ds.manifest.splits;
    let train_reals = ds.load_all(&splits.train)?;
    let val_reals = ds.load_all(&splits.val)?;

    let (model, mut params, stats) = match &a.ckpt_in {
        Some(dir) => {
            let ck = Checkpoint::load_expecting(dir, &spec)?;
            (ck.model, ck.params, ck.meta.norm)
        }
        None => {
            let stats = dataset::fit_norm(target, &train_reals, tcfg.n_steps)?;
            let (m, p) = GnnModel::initialized(spec, cfg.init_seed)?;
            (m, p, stats)
        }
    };
    let train_set = dataset::train_samples(target, &stats, &train_reals)?;
    let val_set = dataset::train_samples(target, &stats, &val_reals)?;
    let quiet = a.quiet;
    let kind = if spec.recurrent { "rgnn" } else { "gnn" };
    eprintln!(
        "training {kind}/{} stage {}: {} parameters, {} train / {} val realizations",
        target.name(),
        a.stage,
        params.len(),
        train_set.len(),
        val_set.len()
    );
    let report = train(
        &model,
        &mut params,
        &stats,
        &train_set,
        &val_set,
        &tcfg,
        |epoch, tl, vl| {
            if !quiet {
                match vl {
                    Some(v) => eprintln!("epoch {epoch:4}  train {tl:.6e}  val {v:.6e}"),
                    None => eprintln!("epoch {epoch:4}  train {tl:.6e}"),
                }
            }
        },
    )?;
    let ckpt = Checkpoint::new(
        model,
        params,
        stats,
        tcfg,
        cfg.init_seed,
        &report,
        Some(manifest_sha(&a.data)?),
    );
    ckpt.save(&a.ckpt_out)?;
    jsonfmt::write_file(&a.ckpt_out.join("train_report.json"), &report)?;
    cfg.save(&a.ckpt_out.join("config.json"))?;
    println!(
        "checkpoint {}: epoch {} val loss {:.6e}, {:.1} s",
        a.ckpt_out.display(),
        report.best_epoch,
        report.best_val_loss,
        report.wall_clock_s
    );
    Ok(TrainOutcome {
        checkpoint: ckpt,
        report,
    })
}

/// Parameter audit line for a loaded checkpoint.
pub fn audit_line(ck: &Checkpoint) -> (bool, String) {
    let expected = count_params(&ck.meta.spec);
    let stored = ck.params.len();
    let ok = expected == stored && ck.meta.param_count == expected;
    let kind = if ck.meta.spec.recurrent { "rgnn" } else { "gnn" };
    (
        ok,
        format!(
            "param audit {kind}/{} stage {}: {stored} stored, count_params {expected}: {}",
            ck.meta.spec.target.name(),
            ck.meta.train.stage,
            if ok { "ok" } else { "MISMATCH" }
        ),
    )
}

pub fn eval_cmd(a: &EvalArgs) -> CliResult<Report> {
    let ds = Dataset::open(&a.data)?;
    let test_ids = &ds.manifest.splits.test;
    let reals = ds.load_all(test_ids)?;
    let cases = reals.iter().map(|r| r.eval_case()).collect::<Result<Vec<_>, _>>()?;
    let dump_ids: Vec<u64> = test_ids.iter().take(a.dump).copied().collect();
    let mut surrogates = Vec::new();
    for dir in &a.checkpoints {
        let ck = Checkpoint::load(dir)?;
        let (ok, line) = audit_line(&ck);
        println!("{line}");
        if !ok {
            return Err(CliError::Failed(format!(
                "parameter audit failed for {}",
                dir.display()
            )));
        }
        surrogates.push(ck.into_surrogate()?);
    }
    let mut report = Report::default();
    for task in a.task.tasks() {
        let mut targets: Vec<Target> = Vec::new();
        for s in &surrogates {
            let e = eval::evaluate(s, task, &cases)?;
            report.dumps.extend(FieldDump::from_evaluation(&e, &cases, &dump_ids));
            if a.clamp && s.target() == Target::Saturation {
                report.results.push(e.clamped(&cases)?.result);
            }
            report.results.push(e.result);
            if !targets.contains(&s.target()) {
                targets.push(s.target());
            }
        }
        for t in targets {
            report.results.push(persistence(task, t, &cases)?);
        }
    }
    report.production = reals.iter().map(|r| r.production()).collect();
    emit_report(&report, &a.out)?;
    jsonfmt::write_file(&a.out.join("results.json"), &report.results)?;
    print_table(&report.results);
    Ok(report)
}

pub fn report_cmd(a: &ReportArgs) -> CliResult<Report> {
    let mut report = Report::default();
    for dir in &a.results {
        let results: Vec<EvalResult> = jsonfmt::read_file(&dir.join("results.json"))?;
        report.results.extend(results);
    }
    if let Some(data) = &a.data {
        let ds = Dataset::open(data)?;
        report.production = ds
            .load_all(&ds.manifest.splits.test)?
            .iter()
            .map(|r| r.production())
            .collect();
    }
    emit_report(&report, &a.out)?;
    jsonfmt::write_file(&a.out.join("results.json"), &report.results)?;
    print_table(&report.results);
    Ok(report)
}

/// Mean MRAE per task, model, stage and field.
pub fn print_table(results: &[EvalResult]) {
    let summary = Summary::of(results);
    println!(
        "{:<15} {:<12} {:<6} {:<11} {:>12}",
        "task", "model", "stage", "field", "mean MRAE"
    );
    for e in &summary.entries {
        println!(
            "{:<15} {:<12} {:<6} {:<11} {:>12.5e}",
            e.task.name(),
            e.model,
            e.stage,
            e.field.name(),
            e.mean
        );
    }
}

pub fn verify_cmd(a: &VerifyArgs) -> CliResult<()> {
    let mut checks = verify::battery();
    for dir in &a.checkpoints {
        let name = format!("checkpoint {}", dir.display());
        checks.push(match Checkpoint::load(dir) {
            Ok(ck) => {
                let (ok, line) = audit_line(&ck);
                verify::Check::new(name, ok, line)
            }
            Err(e) => verify::Check::new(name, false, e.to_string()),
        });
    }
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
