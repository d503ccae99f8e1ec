//! Loader for the upstream binary layout: per record one label byte followed
//! by 3072 pixel bytes (RGB planes, row-major).

use std::path::Path;

use crate::error::{Error, Result};

use super::manifest::{
    ClassEntry, DatasetManifest, Normalization, SourceFormat, SourceSpec, SplitFiles,
    DATASET_SCHEMA,
};

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;

pub const CIFAR10_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// One split held in memory: planar u8 pixels in fixed-size blocks plus
/// remapped labels.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub pixels: Vec<u8>,
    pub labels: Vec<u32>,
    pub sample_len: usize,
}

impl SplitData {
    pub fn empty(sample_len: usize) -> Self {
        SplitData { pixels: Vec::new(), labels: Vec::new(), sample_len }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, index: usize) -> &[u8] {
        &self.pixels[index * self.sample_len..(index + 1) * self.sample_len]
    }
}

#[derive(Debug, Clone)]
pub struct DataStore {
    pub train: SplitData,
    pub test: SplitData,
    pub input_shape: (u32, u32, u32),
    pub num_classes: u32,
    pub normalization: Normalization,
}

fn parse_cifar_file(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            detail: format!("{} bytes is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        });
    }
    let records = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(records * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(records);
    for r in 0..records {
        let rec = &bytes[r * CIFAR_RECORD_BYTES..(r + 1) * CIFAR_RECORD_BYTES];
        let label = rec[0];
        if label > 9 {
            return Err(Error::InvalidLabelByte {
                path: path.display().to_string(),
                index: r,
                label,
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

fn load_split(root: &Path, files: &[String], remap: &[Option<u32>]) -> Result<SplitData> {
    let mut split = SplitData::empty(CIFAR_PIXELS);
    for file in files {
        let (pixels, labels) = parse_cifar_file(&root.join(file))?;
        for (r, &label) in labels.iter().enumerate() {
            if let Some(mapped) = remap[label as usize] {
                split.labels.push(mapped);
                split.pixels.extend_from_slice(&pixels[r * CIFAR_PIXELS..(r + 1) * CIFAR_PIXELS]);
            }
        }
    }
    Ok(split)
}

/// Per-channel mean/std of the train split in [0,1] pixel units.
pub fn compute_normalization(train: &SplitData) -> Normalization {
    let plane = train.sample_len / 3;
    let n = train.len().max(1);
    let mut mean = [0f64; 3];
    let mut sq = [0f64; 3];
    for s in 0..train.len() {
        let sample = train.sample(s);
        for c in 0..3 {
            for &p in &sample[c * plane..(c + 1) * plane] {
                let v = f64::from(p) / 255.0;
                mean[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let count = (n * plane) as f64;
    let mut norm = Normalization { mean: [0.0; 3], std: [1.0; 3] };
    for c in 0..3 {
        let m = mean[c] / count;
        let var = (sq[c] / count - m * m).max(1e-8);
        norm.mean[c] = m as f32;
        norm.std[c] = var.sqrt() as f32;
    }
    norm
}

/// Parses the binary files under `root`, optionally restricting to a class
/// subset whose labels are remapped to contiguous 0..K-1 in the given order,
/// and freezes normalization statistics from the train split into the
/// returned manifest.
pub fn load_cifar_binary(
    root: &Path,
    train_files: &[String],
    test_files: &[String],
    subset_classes: Option<&[u8]>,
    name: &str,
) -> Result<(DatasetManifest, DataStore)> {
    let mut remap: Vec<Option<u32>> = vec![None; 10];
    let chosen: Vec<u8> = match subset_classes {
        Some(subset) => {
            if subset.is_empty() {
                return Err(Error::EmptySubset);
            }
            subset.to_vec()
        }
        None => (0..10).collect(),
    };
    for (new_id, &orig) in chosen.iter().enumerate() {
        if orig > 9 {
            return Err(Error::InvalidConfig(format!("subset class {orig} out of range")));
        }
        remap[orig as usize] = Some(new_id as u32);
    }

    let train = load_split(root, train_files, &remap)?;
    let test = load_split(root, test_files, &remap)?;
    if subset_classes.is_some() && train.is_empty() && test.is_empty() {
        return Err(Error::EmptySubset);
    }

    let normalization = compute_normalization(&train);
    let classes = chosen
        .iter()
        .enumerate()
        .map(|(i, &orig)| ClassEntry {
            class_id: i as u32,
            external_id: orig.to_string(),
            display_name: CIFAR10_NAMES[orig as usize].to_string(),
        })
        .collect();
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.to_string(),
        name: name.to_string(),
        classes,
        source: SourceSpec { format: SourceFormat::CifarBinary, root: root.to_path_buf() },
        split: SplitFiles { train: train_files.to_vec(), test: test_files.to_vec() },
        normalization: normalization.clone(),
        input_shape: (3, 32, 32),
    };
    let store = DataStore {
        train,
        test,
        input_shape: (3, 32, 32),
        num_classes: chosen.len() as u32,
        normalization,
    };
    Ok((manifest, store))
}

impl DataStore {
    /// Loads whatever source the manifest describes, keeping the manifest's
    /// frozen normalization.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<DataStore> {
        manifest.validate()?;
        match manifest.source.format {
            SourceFormat::CifarBinary => {
                let (_, mut store) = load_cifar_binary(
                    &manifest.source.root,
                    &manifest.split.train,
                    &manifest.split.test,
                    None,
                    &manifest.name,
                )?;
                store.normalization = manifest.normalization.clone();
                store.num_classes = manifest.num_classes();
                Ok(store)
            }
            SourceFormat::ImageFolder => super::folder::load_image_folder(manifest),
            SourceFormat::Idx => {
                Err(Error::InvalidConfig("idx sources are declared but not loadable yet".into()))
            }
        }
    }
}
