//! Pipeline configuration and presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSizes;
use crate::dfn::CountRange;
use crate::error::{Error, Result};
use crate::eval::Task;
use crate::graph::Target;
use crate::jsonfmt;
use crate::model::GnnSpec;
use crate::sim::SimConfig;
use crate::training::TrainConfig;

pub const CONFIG_SCHEMA: &str = "fracnet.config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: usize,
    pub processors: usize,
}

/// Network sizes per predicted field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub pressure: Arch,
    pub saturation: Arch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema: String,
    pub preset: String,
    pub sim: SimConfig,
    pub splits: SplitSizes,
    /// Master seed of the dataset.
    pub data_seed: u64,
    pub models: ModelSizes,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

impl PipelineConfig {
    /// Full-size settings: 50 × 50 grid, 400/50/50 realizations.
    pub fn paper() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            preset: "paper".into(),
            sim: SimConfig::default(),
            splits: SplitSizes {
                train: 400,
                val: 50,
                test: 50,
            },
            data_seed: 0,
            models: ModelSizes {
                pressure: Arch {
                    hidden: 40,
                    processors: 12,
                },
                saturation: Arch {
                    hidden: 48,
                    processors: 8,
                },
            },
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            init_seed: 0,
        }
    }

    /// Workstation settings: 20 × 20 grid, sparser fractures, small networks.
    pub fn desk() -> Self {
        let mut sim = SimConfig::default();
        sim.grid.nx = 20;
        sim.grid.ny = 20;
        sim.dfn.count_per_set = CountRange { min: 4, max: 8 };
        let arch = Arch {
            hidden: 16,
            processors: 4,
        };
        Self {
            schema: CONFIG_SCHEMA.into(),
            preset: "desk".into(),
            sim,
            splits: SplitSizes {
                train: 60,
                val: 10,
                test: 10,
            },
            data_seed: 0,
            models: ModelSizes {
                pressure: arch,
                saturation: arch,
            },
            stage1: TrainConfig {
                epochs: 60,
                ..TrainConfig::stage1()
            },
            stage2: TrainConfig {
                epochs: 30,
                ..TrainConfig::stage2()
            },
            init_seed: 0,
        }
    }

    /// Minutes-scale end-to-end run.
    pub fn smoke() -> Self {
        let mut cfg = Self::desk();
        cfg.preset = "smoke".into();
        cfg.sim.grid.nx = 10;
        cfg.sim.grid.ny = 10;
        cfg.sim.dfn.count_per_set = CountRange { min: 2, max: 4 };
        cfg.splits = SplitSizes {
            train: 4,
            val: 2,
            test: 2,
        };
        cfg.models.pressure = Arch {
            hidden: 8,
            processors: 2,
        };
        cfg.models.saturation = cfg.models.pressure;
        cfg.stage1.epochs = 4;
        cfg.stage1.validate_every = 2;
        cfg.stage2.epochs = 2;
        cfg.stage2.validate_every = 2;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown preset {other:?} (paper, desk, smoke)"))),
        }
    }

    pub fn spec(&self, target: Target, recurrent: bool) -> GnnSpec {
        let a = match target {
            Target::Pressure => self.models.pressure,
            Target::Saturation => self.models.saturation,
        };
        GnnSpec::new(target, a.hidden, a.processors, recurrent)
    }

    pub fn train_config(&self, stage: u8) -> Result<TrainConfig> {
        match stage {
            1 => Ok(self.stage1),
            2 => Ok(self.stage2),
            s => Err(Error::Config(format!("stage must be 1 or 2, got {s}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema {:?}, expected {CONFIG_SCHEMA:?}",
                self.schema
            )));
        }
        self.sim.validate()?;
        self.splits.validate()?;
        for (stage, t) in [(1, &self.stage1), (2, &self.stage2)] {
            t.validate()?;
            if t.stage != stage {
                return Err(Error::Config(format!(
                    "stage{stage} settings declare stage {}",
                    t.stage
                )));
            }
            if t.n_steps + 1 > self.sim.schedule.n_export {
                return Err(Error::Config(format!(
                    "training needs {} states but only {} are exported",
                    t.n_steps + 1,
                    self.sim.schedule.n_export
                )));
            }
        }
        if self.sim.schedule.n_export < Task::Extrapolation.required_states() {
            return Err(Error::Config(format!(
                "evaluation needs {} exported states",
                Task::Extrapolation.required_states()
            )));
        }
        for t in [Target::Pressure, Target::Saturation] {
            self.spec(t, false).validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = jsonfmt::read_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonfmt::write_file(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["paper", "desk", "smoke"] {
            let cfg = PipelineConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let text = jsonfmt::to_string_pretty(&cfg);
            let back: PipelineConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
        assert!(PipelineConfig::preset("huge").is_err());
    }

    #[test]
    fn paper_preset_values() {
        let p = PipelineConfig::paper();
        assert_eq!(p.splits.total(), 500);
        assert_eq!((p.sim.grid.nx, p.sim.grid.ny), (50, 50));
        assert_eq!(p.sim.schedule.n_steps, 30);
        assert_eq!(p.sim.schedule.n_export, 21);
        assert_eq!(crate::model::count_params(&p.spec(Target::Pressure, false)), 188_201);
        assert_eq!(crate::model::count_params(&p.spec(Target::Saturation, true)), 222_385);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let mut cfg = PipelineConfig::desk();
        cfg.schema = "fracnet.config/0".into();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::desk();
        cfg.stage2.stage = 1;
        assert!(cfg.validate().is_err());
    }
}
