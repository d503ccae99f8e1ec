//! Run configuration: one JSON file drives an entire evolution run.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::evolve::EnvironmentConfig;
use crate::graph::{build_from_choice, load_arch_json, ArchGraph};

pub const RUN_SCHEMA: &str = "evosquish-run/1";

/// Seed architecture: a built-in name or an on-disk manifest plus mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Named(String),
    Files { manifest: PathBuf, masks: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: String,
    pub arch: ArchChoice,
    pub num_classes: u32,
    #[serde(default)]
    pub input_shape: Option<(u32, u32, u32)>,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub generations: u32,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// When true, evolution records carry measured wall-clock figures; the
    /// default keeps every run artifact byte-reproducible.
    #[serde(default)]
    pub measure_timing: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let cfg: RunConfig = serde_json::from_reader(file).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != RUN_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "unsupported run schema {:?} (expected {RUN_SCHEMA})",
                self.schema
            )));
        }
        if self.generations == 0 {
            return Err(Error::InvalidConfig("generations must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidClassCount("num_classes must be >= 1".into()));
        }
        self.environment.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn build_seed(&self) -> Result<ArchGraph> {
        match &self.arch {
            ArchChoice::Named(name) => build_from_choice(name, self.num_classes, self.input_shape),
            ArchChoice::Files { manifest, masks } => {
                let arch = load_arch_json(manifest, masks)?;
                if arch.num_classes != self.num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "manifest has {} classes, config says {}",
                        arch.num_classes, self.num_classes
                    )));
                }
                Ok(arch)
            }
        }
    }
}
