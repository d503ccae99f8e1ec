//! Folder-per-class image ingestion (PNG and PPM only).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::cifar::{DataStore, SplitData};
use super::manifest::DatasetManifest;

fn decode_planar(path: &Path, h: u32, w: u32) -> Result<Vec<u8>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext != "png" && ext != "ppm" {
        return Err(Error::UndecodableImage {
            path: path.display().to_string(),
            detail: format!("unsupported extension {ext:?} (png and ppm only)"),
        });
    }
    let img = image::open(path).map_err(|e| Error::UndecodableImage {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let img = img.to_rgb8();
    let img = if img.dimensions() != (w, h) {
        image::imageops::resize(&img, w, h, image::imageops::FilterType::Nearest)
    } else {
        img
    };
    // Interleaved RGB to channel planes.
    let plane = (h * w) as usize;
    let mut out = vec![0u8; plane * 3];
    for (i, px) in img.pixels().enumerate() {
        out[i] = px.0[0];
        out[plane + i] = px.0[1];
        out[2 * plane + i] = px.0[2];
    }
    Ok(out)
}

fn class_dirs(root: &Path, prefixes: &[String], external_id: &str) -> Vec<PathBuf> {
    if prefixes.is_empty() {
        vec![root.join(external_id)]
    } else {
        prefixes.iter().map(|p| root.join(p).join(external_id)).collect()
    }
}

fn load_folder_split(
    manifest: &DatasetManifest,
    prefixes: &[String],
    required: bool,
) -> Result<SplitData> {
    let (_, h, w) = manifest.input_shape;
    let mut split = SplitData::empty((3 * h * w) as usize);
    for class in &manifest.classes {
        for dir in class_dirs(&manifest.source.root, prefixes, &class.external_id) {
            if !dir.is_dir() {
                if required {
                    return Err(Error::MissingClassFolder(class.external_id.clone()));
                }
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for file in files {
                let pixels = decode_planar(&file, h, w)?;
                split.pixels.extend_from_slice(&pixels);
                split.labels.push(class.class_id);
            }
        }
    }
    Ok(split)
}

/// Loads every image under `root/<split-prefix>/<external_id>/` (or
/// `root/<external_id>/` when the train split list is empty), resized to the
/// manifest's input size, with labels from folder membership.
pub fn load_image_folder(manifest: &DatasetManifest) -> Result<DataStore> {
    if manifest.input_shape.0 != 3 {
        return Err(Error::InvalidConfig("image-folder sources are RGB only".into()));
    }
    let train = load_folder_split(manifest, &manifest.split.train, true)?;
    let test = load_folder_split(manifest, &manifest.split.test, !manifest.split.test.is_empty())?;
    Ok(DataStore {
        train,
        test,
        input_shape: manifest.input_shape,
        num_classes: manifest.num_classes(),
        normalization: manifest.normalization.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::DatasetManifest;

    /// Minimal hand-rolled P6 writer so the fixture bytes are independent of
    /// the decoding path under test.
    fn write_ppm(path: &Path, w: u32, h: u32, rgb: &[u8]) {
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(rgb);
        std::fs::write(path, bytes).unwrap();
    }

    fn checker_rgb(w: u32, h: u32) -> Vec<u8> {
        let mut rgb = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 255 } else { 10 };
                rgb.extend_from_slice(&[v, (x % 256) as u8, (y % 256) as u8]);
            }
        }
        rgb
    }

    #[test]
    fn folder_per_wnid_yields_labelled_samples() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::imagenet10(dir.path(), (3, 32, 32));
        for class in &manifest.classes {
            let cdir = dir.path().join(&class.external_id);
            std::fs::create_dir_all(&cdir).unwrap();
            write_ppm(&cdir.join("a.ppm"), 32, 32, &checker_rgb(32, 32));
        }
        let store = load_image_folder(&manifest).unwrap();
        assert_eq!(store.train.len(), 10);
        assert_eq!(store.train.labels, (0..10).collect::<Vec<u32>>());
    }

    #[test]
    fn missing_class_folder_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::imagenet10(dir.path(), (3, 32, 32));
        for class in manifest.classes.iter().filter(|c| c.external_id != "n07930864") {
            std::fs::create_dir_all(dir.path().join(&class.external_id)).unwrap();
        }
        let err = load_image_folder(&manifest).unwrap_err();
        assert!(matches!(err, Error::MissingClassFolder(id) if id == "n07930864"));
    }

    #[test]
    fn decoded_pixels_match_reference_dump() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = checker_rgb(32, 32);
        let path = dir.path().join("img.ppm");
        write_ppm(&path, 32, 32, &rgb);
        let planar = decode_planar(&path, 32, 32).unwrap();

        // Reference: planar reshuffle of the exact bytes we wrote.
        let plane = 32 * 32;
        for i in 0..plane {
            assert_eq!(planar[i], rgb[i * 3]);
            assert_eq!(planar[plane + i], rgb[i * 3 + 1]);
            assert_eq!(planar[2 * plane + i], rgb[i * 3 + 2]);
        }
    }

    #[test]
    fn undecodable_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(
            decode_planar(&path, 32, 32),
            Err(Error::UndecodableImage { .. })
        ));
    }
}
