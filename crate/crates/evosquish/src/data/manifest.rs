//! Dataset manifests: class registry, binary source description, splits and
//! frozen normalization statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "evosquish-dataset/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: u32,
    pub external_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    CifarBinary,
    Idx,
    ImageFolder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub format: SourceFormat,
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SplitFiles {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: [0.5; 3], std: [0.25; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub name: String,
    pub classes: Vec<ClassEntry>,
    pub source: SourceSpec,
    #[serde(default)]
    pub split: SplitFiles,
    #[serde(default)]
    pub normalization: Normalization,
    pub input_shape: (u32, u32, u32),
}

/// The ten-class ImageNet subset this project targets, keyed by wnid.
pub const IMAGENET10_CLASSES: [(&str, &str); 10] = [
    ("n02783161", "pen"),
    ("n03085013", "keyboard"),
    ("n04557648", "water bottle"),
    ("n04037443", "car"),
    ("n03793489", "computer mouse"),
    ("n03584254", "cell phone"),
    ("n04548362", "wallet"),
    ("n07930864", "cup"),
    ("n03782006", "monitor"),
    ("n04409515", "tennis ball"),
];

impl DatasetManifest {
    /// Built-in manifest for the ten-class ImageNet subset in
    /// folder-per-wnid layout.
    pub fn imagenet10(root: &Path, input_shape: (u32, u32, u32)) -> Self {
        DatasetManifest {
            schema: DATASET_SCHEMA.to_string(),
            name: "imagenet10".to_string(),
            classes: IMAGENET10_CLASSES
                .iter()
                .enumerate()
                .map(|(i, (wnid, name))| ClassEntry {
                    class_id: i as u32,
                    external_id: (*wnid).to_string(),
                    display_name: (*name).to_string(),
                })
                .collect(),
            source: SourceSpec { format: SourceFormat::ImageFolder, root: root.to_path_buf() },
            split: SplitFiles::default(),
            normalization: Normalization::default(),
            input_shape,
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.classes.len() as u32
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let manifest: DatasetManifest =
            serde_json::from_reader(file).map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        if manifest.schema != DATASET_SCHEMA {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("unsupported schema {:?}", manifest.schema),
            });
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("manifest has no classes".into()));
        }
        for (i, entry) in self.classes.iter().enumerate() {
            if entry.class_id != i as u32 {
                return Err(Error::InvalidConfig(format!(
                    "class ids must be contiguous 0..{}, found {} at position {i}",
                    self.classes.len() - 1,
                    entry.class_id
                )));
            }
        }
        let mut externals: Vec<&str> = self.classes.iter().map(|c| c.external_id.as_str()).collect();
        externals.sort_unstable();
        externals.dedup();
        if externals.len() != self.classes.len() {
            return Err(Error::InvalidConfig("duplicate external class ids".into()));
        }
        if self.normalization.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidConfig("normalization std must be positive".into()));
        }
        match self.source.format {
            SourceFormat::CifarBinary => {
                for file in self.split.train.iter().chain(self.split.test.iter()) {
                    let path = self.source.root.join(file);
                    if !path.is_file() {
                        return Err(Error::InvalidConfig(format!(
                            "referenced file {} does not exist",
                            path.display()
                        )));
                    }
                }
            }
            SourceFormat::ImageFolder | SourceFormat::Idx => {}
        }
        Ok(())
    }
}
