//! Model checkpoints.
//!
//! A checkpoint directory holds `params.bin` (little-endian `f64` values),
//! `params.json` (tensor index), `meta.json` (architecture, normalization,
//! training settings) and `SHA256SUMS` covering the other three files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::Surrogate;
use crate::graph::NormStats;
use crate::jsonfmt;
use crate::model::{count_params, GnnModel, GnnSpec};
use crate::nn::{ParamEntry, ParamStore};
use crate::training::{TrainConfig, TrainReport};

pub const CHECKPOINT_SCHEMA: &str = "fracnet.checkpoint/1";
const FILES: [&str; 3] = ["params.bin", "params.json", "meta.json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: String,
    pub spec: GnnSpec,
    pub param_count: usize,
    pub norm: NormStats,
    pub train: TrainConfig,
    /// Seed of the weight initialization.
    pub init_seed: u64,
    /// Epoch of the stored parameters within their stage.
    pub epoch: usize,
    pub val_loss: f64,
    /// Checksum of the dataset manifest the model was trained on.
    pub dataset_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: GnnModel,
    pub params: ParamStore,
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(
        model: GnnModel,
        params: ParamStore,
        norm: NormStats,
        train: TrainConfig,
        init_seed: u64,
        report: &TrainReport,
        dataset_sha256: Option<String>,
    ) -> Self {
        Self {
            meta: CheckpointMeta {
                schema: CHECKPOINT_SCHEMA.into(),
                spec: model.spec,
                param_count: params.len(),
                norm,
                train,
                init_seed,
                epoch: report.best_epoch,
                val_loss: report.best_val_loss,
                dataset_sha256,
            },
            model,
            params,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bin = Vec::with_capacity(8 * self.params.len());
        for v in &self.params.data {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let write = |name: &str, bytes: &[u8]| -> Result<String> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(sha256_hex(bytes))
        };
        let sums = [
            write(FILES[0], &bin)?,
            write(FILES[1], &pretty(&self.params.entries))?,
            write(FILES[2], &pretty(&self.meta))?,
        ];
        let listing: String = sums.iter().zip(FILES).map(|(h, f)| format!("{h}  {f}\n")).collect();
        write("SHA256SUMS", listing.as_bytes())?;
        Ok(())
    }

    /// Load and validate a checkpoint: checksums, layout and parameter count.
    pub fn load(dir: &Path) -> Result<Self> {
        let sums_path = dir.join("SHA256SUMS");
        let listing = fs::read_to_string(&sums_path).map_err(|e| Error::io(&sums_path, e))?;
        let mut expected = Vec::new();
        for line in listing.lines() {
            let (hash, file) = line
                .split_once("  ")
                .ok_or_else(|| ckpt_err(&sums_path, format!("malformed line {line:?}")))?;
            expected.push((file.to_string(), hash.to_string()));
        }
        let mut contents = Vec::new();
        for name in FILES {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            match expected.iter().find(|(f, _)| f == name) {
                Some((_, h)) if *h == sha256_hex(&bytes) => {}
                Some(_) => return Err(ckpt_err(&path, "checksum mismatch")),
                None => return Err(ckpt_err(&sums_path, format!("no checksum for {name}"))),
            }
            contents.push(bytes);
        }
        let parse_err = |name: &str, e: serde_json::Error| Error::json(dir.join(name), e);
        let entries: Vec<ParamEntry> = serde_json::from_slice(&contents[1]).map_err(|e| parse_err(FILES[1], e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&contents[2]).map_err(|e| parse_err(FILES[2], e))?;
        if meta.schema != CHECKPOINT_SCHEMA {
            return Err(ckpt_err(dir, format!("unsupported schema {:?}", meta.schema)));
        }
        let (model, mut params) = GnnModel::new(meta.spec)?;
        if meta.param_count != count_params(&meta.spec) {
            return Err(ckpt_err(
                dir,
                format!(
                    "recorded {} parameters, architecture has {}",
                    meta.param_count,
                    count_params(&meta.spec)
                ),
            ));
        }
        if contents[0].len() != 8 * params.len() {
            return Err(ckpt_err(
                &dir.join(FILES[0]),
                format!("expected {} values", params.len()),
            ));
        }
        let data = contents[0]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        params.load(&entries, data).map_err(|e| ckpt_err(dir, e.to_string()))?;
        meta.norm.validate()?;
        if meta.norm.target != meta.spec.target {
            return Err(ckpt_err(dir, "normalization target differs from the model target"));
        }
        Ok(Self { meta, model, params })
    }

    /// [`Checkpoint::load`] that also requires a given architecture.
    pub fn load_expecting(dir: &Path, spec: &GnnSpec) -> Result<Self> {
        let ckpt = Self::load(dir)?;
        if ckpt.meta.spec != *spec {
            return Err(ckpt_err(
                dir,
                format!(
                    "architecture mismatch: checkpoint has {:?}, expected {:?}",
                    ckpt.meta.spec, spec
                ),
            ));
        }
        Ok(ckpt)
    }

    pub fn into_surrogate(self) -> Result<Surrogate> {
        Surrogate::new(self.model, self.params, self.meta.norm, self.meta.train.stage)
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = jsonfmt::to_string_pretty(value).into_bytes();
    s.push(b'\n');
    s
}

/// Directory name used for a checkpoint of `spec` at `stage`.
pub fn checkpoint_name(spec: &GnnSpec, stage: u8) -> PathBuf {
    let kind = if spec.recurrent { "rgnn" } else { "gnn" };
    PathBuf::from(format!("{kind}_{}_stage{stage}", spec.target.name()))
}
