//! On-disk dataset of simulated realizations.
//!
//! ```text
//! <root>/manifest.json
//! <root>/real_0000/grid.json      embedded grid
//! <root>/real_0000/states.bin     exported states, little-endian
//! <root>/real_0000/wells.json     wells and per-step records
//! <root>/real_0000/meta.json      seed, sizes, checksums
//! <root>/real_0003/failed.json    quarantined solver failure
//! ```
//!
//! `states.bin` holds `n_states` and `n_cells` as `u64`, then for every state
//! its pressures followed by its saturations as `f64`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edfm::EdfmGrid;
use crate::error::{Error, Result};
use crate::eval::{EvalCase, ProductionSeries};
use crate::graph::{GraphTemplate, NormFitter, NormStats, Target};
use crate::jsonfmt;
use crate::sim::{run_realization, ReservoirState, SimConfig, StepRecord, WellSpec};
use crate::training::TrainSample;
use crate::units::DAY;

pub const MANIFEST_SCHEMA: &str = "fracnet.dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::Config("every split needs at least one realization".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl Splits {
    /// Seeded assignment of realization ids `0..total` to the splits.
    pub fn assign(sizes: SplitSizes, seed: u64) -> Self {
        let mut ids: Vec<u64> = (0..sizes.total() as u64).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
        let mut rest = ids.into_iter();
        let mut take = |n: usize| {
            let mut v: Vec<u64> = rest.by_ref().take(n).collect();
            v.sort_unstable();
            v
        };
        Splits {
            train: take(sizes.train),
            val: take(sizes.val),
            test: take(sizes.test),
        }
    }
}

// Keeps split shuffles off the realization seed streams.
const SPLIT_SALT: u64 = 0x5eed_5911_7000_0001;

/// Seed of the fracture network of realization `id`.
pub fn realization_seed(master: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum EntryStatus {
    Ok { states_sha256: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub seed: u64,
    #[serde(flatten)]
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub sim: SimConfig,
    /// Splits without quarantined realizations.
    pub splits: Splits,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn quarantined(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| matches!(e.status, EntryStatus::Failed { .. }))
            .map(|e| e.id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationMeta {
    pub id: u64,
    pub seed: u64,
    pub n_cells: usize,
    pub n_matrix: usize,
    pub n_states: usize,
    /// Report step length (s).
    pub dt: f64,
    pub states_sha256: String,
    pub grid_sha256: String,
    pub wells_sha256: String,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellRecord {
    pub wells: WellSpec,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailureRecord {
    id: u64,
    seed: u64,
    reason: String,
}

/// A loaded realization.
#[derive(Debug, Clone)]
pub struct Realization {
    pub meta: RealizationMeta,
    pub grid: EdfmGrid,
    pub wells: WellRecord,
    pub states: Vec<ReservoirState>,
}

impl Realization {
    pub fn fields(&self, target: Target) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| target.field(s).to_vec()).collect()
    }

    pub fn eval_case(&self) -> Result<EvalCase> {
        Ok(EvalCase {
            realization: self.meta.id,
            template: GraphTemplate::new(&self.grid)?,
            states: self.states.clone(),
        })
    }

    pub fn production(&self) -> ProductionSeries {
        ProductionSeries {
            realization: self.meta.id,
            dt_days: self.meta.dt / DAY,
            rates: self.wells.steps.iter().map(|s| s.production_m3_per_day).collect(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_states(states: &[ReservoirState]) -> Vec<u8> {
    let n = states.first().map_or(0, |s| s.pressure.len());
    let mut out = Vec::with_capacity(16 + states.len() * n * 16);
    out.extend_from_slice(&(states.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for s in states {
        for v in s.pressure.iter().chain(&s.saturation) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_states(bytes: &[u8]) -> std::result::Result<Vec<ReservoirState>, String> {
    let word = |k: usize| -> std::result::Result<[u8; 8], String> {
        bytes
            .get(8 * k..8 * k + 8)
            .map(|b| b.try_into().expect("eight bytes"))
            .ok_or_else(|| "truncated".to_string())
    };
    let n_states = u64::from_le_bytes(word(0)?) as usize;
    let n = u64::from_le_bytes(word(1)?) as usize;
    let expected = n_states
        .checked_mul(n)
        .and_then(|v| v.checked_mul(16))
        .and_then(|v| v.checked_add(16))
        .ok_or("size overflow")?;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let mut k = 2;
    let mut read = |count: usize| -> Vec<f64> {
        let v = (k..k + count)
            .map(|i| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("eight bytes")))
            .collect();
        k += count;
        v
    };
    Ok((0..n_states)
        .map(|step| {
            let pressure = read(n);
            let saturation = read(n);
            ReservoirState {
                pressure,
                saturation,
                step,
            }
        })
        .collect())
}

pub fn realization_dir(root: &Path, id: u64) -> PathBuf {
    root.join(format!("real_{id:04}"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = Vec::new();
    jsonfmt::to_writer_compact(&mut v, value).expect("serializing to memory cannot fail");
    v
}

/// Outcome of one realization as seen by [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub enum GenOutcome {
    /// Complete files were already present.
    Existing,
    Simulated {
        wall_clock_s: f64,
    },
    Failed {
        reason: String,
    },
}

/// Verify the stored checksums of a completed realization.
pub fn verify_realization(root: &Path, id: u64) -> Result<RealizationMeta> {
    let dir = realization_dir(root, id);
    let meta: RealizationMeta = jsonfmt::read_file(&dir.join("meta.json"))?;
    for (file, sum) in [
        ("states.bin", &meta.states_sha256),
        ("grid.json", &meta.grid_sha256),
        ("wells.json", &meta.wells_sha256),
    ] {
        let path = dir.join(file);
        if sha256_hex(&read_bytes(&path)?) != *sum {
            return Err(dataset_err(&path, "checksum mismatch"));
        }
    }
    Ok(meta)
}

fn existing(root: &Path, id: u64, seed: u64) -> Option<std::result::Result<RealizationMeta, FailureRecord>> {
    let dir = realization_dir(root, id);
    if let Ok(f) = jsonfmt::read_file::<FailureRecord>(&dir.join("failed.json")) {
        return (f.seed == seed).then_some(Err(f));
    }
    match verify_realization(root, id) {
        Ok(meta) if meta.seed == seed => Some(Ok(meta)),
        _ => None,
    }
}

fn simulate_one(root: &Path, id: u64, seed: u64, sim: &SimConfig) -> Result<GenOutcome> {
    let dir = realization_dir(root, id);
    let clock = Instant::now();
    let traj = match run_realization(seed, sim) {
        Ok(t) => t,
        Err(e @ Error::Solver { .. }) => {
            let reason = e.to_string();
            let _ = fs::remove_dir_all(&dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            jsonfmt::write_file(
                &dir.join("failed.json"),
                &FailureRecord {
                    id,
                    seed,
                    reason: reason.clone(),
                },
            )?;
            return Ok(GenOutcome::Failed { reason });
        }
        Err(e) => return Err(e),
    };
    let wall = clock.elapsed().as_secs_f64();
    let keep = sim.schedule.n_export.min(traj.states.len());
    let states = encode_states(&traj.states[..keep]);
    let grid = json_bytes(&traj.grid);
    let wells = json_bytes(&WellRecord {
        wells: traj.wells,
        steps: traj.steps.clone(),
    });
    let meta = RealizationMeta {
        id,
        seed,
        n_cells: traj.grid.n_cells(),
        n_matrix: traj.grid.n_matrix(),
        n_states: keep,
        dt: traj.dt,
        states_sha256: sha256_hex(&states),
        grid_sha256: sha256_hex(&grid),
        wells_sha256: sha256_hex(&wells),
        wall_clock_s: wall,
    };
    // Write into a scratch directory and rename, so an interrupted run never
    // leaves a directory that looks complete.
    let tmp = root.join(format!(".real_{id:04}.partial"));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_bytes(&tmp.join("states.bin"), &states)?;
    write_bytes(&tmp.join("grid.json"), &grid)?;
    write_bytes(&tmp.join("wells.json"), &wells)?;
    let mut meta_json = json_bytes(&meta);
    meta_json.push(b'\n');
    write_bytes(&tmp.join("meta.json"), &meta_json)?;
    let _ = fs::remove_dir_all(&dir);
    fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(GenOutcome::Simulated { wall_clock_s: wall })
}

/// Generate (or complete) a dataset. Realizations whose files verify are
/// skipped; solver failures are quarantined. `progress` receives each
/// finished realization.
pub fn generate(
    root: &Path,
    sim: &SimConfig,
    sizes: SplitSizes,
    seed: u64,
    workers: usize,
    progress: impl Fn(u64, &GenOutcome) + Sync,
) -> Result<Manifest> {
    sim.validate()?;
    sizes.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest_path = root.join("manifest.json");
    if manifest_path.exists() {
        let old: Manifest = jsonfmt::read_file(&manifest_path)?;
        if old.seed != seed || old.sizes != sizes || old.sim != *sim {
            return Err(dataset_err(
                root,
                "existing dataset was generated with a different configuration",
            ));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let ids: Vec<u64> = (0..sizes.total() as u64).collect();
    let outcomes: Vec<Result<ManifestEntry>> = pool.install(|| {
        ids.par_iter()
            .map(|&id| {
                let rseed = realization_seed(seed, id);
                let outcome = match existing(root, id, rseed) {
                    Some(_) => GenOutcome::Existing,
                    None => simulate_one(root, id, rseed, sim)?,
                };
                progress(id, &outcome);
                let status = match existing(root, id, rseed) {
                    Some(Ok(meta)) => EntryStatus::Ok {
                        states_sha256: meta.states_sha256,
                    },
                    Some(Err(f)) => EntryStatus::Failed { reason: f.reason },
                    None => {
                        return Err(dataset_err(
                            &realization_dir(root, id),
                            "realization files are incomplete",
                        ))
                    }
                };
                Ok(ManifestEntry {
                    id,
                    seed: rseed,
                    status,
                })
            })
            .collect()
    });
    let entries = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let failed: Vec<u64> = entries
        .iter()
        .filter(|e| matches!(e.status, EntryStatus::Failed { .. }))
        .map(|e| e.id)
        .collect();
    let mut splits = Splits::assign(sizes, seed);
    for list in [&mut splits.train, &mut splits.val, &mut splits.test] {
        list.retain(|id| !failed.contains(id));
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        seed,
        sizes,
        sim: sim.clone(),
        splits,
        entries,
    };
    jsonfmt::write_file(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// A dataset opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: Manifest = jsonfmt::read_file(&root.join("manifest.json"))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(dataset_err(root, format!("unsupported schema {:?}", manifest.schema)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Load one realization, checking every checksum.
    pub fn load(&self, id: u64) -> Result<Realization> {
        let dir = realization_dir(&self.root, id);
        let meta = verify_realization(&self.root, id)?;
        let listed = self.manifest.entries.iter().find(|e| e.id == id);
        match listed.map(|e| &e.status) {
            Some(EntryStatus::Ok { states_sha256 }) if *states_sha256 == meta.states_sha256 => {}
            _ => return Err(dataset_err(&dir, "realization does not match the manifest")),
        }
        let grid: EdfmGrid = jsonfmt::read_file(&dir.join("grid.json"))?;
        let wells: WellRecord = jsonfmt::read_file(&dir.join("wells.json"))?;
        let path = dir.join("states.bin");
        let states = decode_states(&read_bytes(&path)?).map_err(|r| dataset_err(&path, r))?;
        if states.len() != meta.n_states || states.iter().any(|s| s.pressure.len() != grid.n_cells()) {
            return Err(dataset_err(&path, "state sizes do not match the grid"));
        }
        Ok(Realization {
            meta,
            grid,
            wells,
            states,
        })
    }

    pub fn load_all(&self, ids: &[u64]) -> Result<Vec<Realization>> {
        ids.par_iter().map(|&id| self.load(id)).collect()
    }
}

/// Normalization statistics from the training realizations. Field and
/// increment moments use the states `0..=n_steps`.
pub fn fit_norm(target: Target, train: &[Realization], n_steps: usize) -> Result<NormStats> {
    let mut fitter = NormFitter::new(target);
    for r in train {
        fitter.add_static(&GraphTemplate::new(&r.grid)?);
        let fields = r.fields(target);
        let last = (n_steps + 1).min(fields.len());
        for w in fields[..last].windows(2) {
            fitter.add_field(&w[0]);
            fitter.add_delta(&w[0], &w[1]);
        }
    }
    fitter.finish()
}

pub fn train_samples(target: Target, stats: &NormStats, realizations: &[Realization]) -> Result<Vec<TrainSample>> {
    realizations
        .iter()
        .map(|r| {
            Ok(TrainSample {
                realization: r.meta.id,
                base: stats.normalized_base(&GraphTemplate::new(&r.grid)?),
                fields: r.fields(target),
            })
        })
        .collect()
}
