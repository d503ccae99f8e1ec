//! Hermetic fixture generator: a learnable 10-way classification problem
//! written in the exact upstream binary layout, so the whole pipeline can run
//! without shipping or downloading real data.

use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::rng::{substream, Stream};

use super::cifar::{load_cifar_binary, DataStore, CIFAR_PIXELS};
use super::manifest::DatasetManifest;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: u8,
    pub train_per_class: u32,
    pub test_per_class: u32,
    /// Per-pixel uniform noise amplitude as a fraction of full scale.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { classes: 10, train_per_class: 500, test_per_class: 100, noise: 0.05, seed: 0 }
    }
}

/// Classes are separated primarily by a luminance ramp with a per-class hue
/// tint, plus a class-positioned bright patch for spatial texture. The ramp
/// keeps classes distinguishable even through severely narrowed networks.
fn class_base(class: u8) -> [i32; 3] {
    let l = 40 + 20 * i32::from(class);
    const TINT: [[i32; 3]; 10] = [
        [20, -10, -10],
        [-10, 20, -10],
        [-10, -10, 20],
        [15, 15, -15],
        [-15, 15, 15],
        [15, -15, 15],
        [0, 20, 10],
        [20, 0, -20],
        [-20, 10, 0],
        [10, -20, 0],
    ];
    let t = TINT[(class % 10) as usize];
    [l + t[0], l + t[1], l + t[2]]
}

fn render_sample(class: u8, noise: f32, rng: &mut impl Rng) -> Vec<u8> {
    let base = class_base(class);
    let mut px = vec![0u8; CIFAR_PIXELS];
    let plane = 32 * 32;
    let amp = noise * 255.0;
    // Bright 8x8 patch at a class-dependent grid position.
    let py = 4 + 6 * (usize::from(class) % 4);
    let pxo = 4 + 6 * (usize::from(class) / 4);
    for ch in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let mut v = base[ch] as f32;
                if y >= py && y < py + 8 && x >= pxo && x < pxo + 8 {
                    v += 40.0;
                }
                v += (rng.gen::<f32>() * 2.0 - 1.0) * amp;
                px[ch * plane + y * 32 + x] = v.clamp(0.0, 255.0) as u8;
            }
        }
    }
    px
}

fn write_split(path: &Path, spec: &SynthSpec, per_class: u32, stream_index: u64) -> Result<()> {
    let mut rng = substream(spec.seed, Stream::Data, stream_index);
    let mut bytes = Vec::with_capacity((per_class as usize * spec.classes as usize) * (CIFAR_PIXELS + 1));
    for _ in 0..per_class {
        for class in 0..spec.classes {
            bytes.push(class);
            bytes.extend_from_slice(&render_sample(class, spec.noise, &mut rng));
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes `train.bin` and `test.bin` under `dir`, plus `manifest.json`
/// describing them, and returns the loaded store.
pub fn write_synthetic_cifar(dir: &Path, spec: &SynthSpec) -> Result<(DatasetManifest, DataStore)> {
    std::fs::create_dir_all(dir)?;
    write_split(&dir.join("train.bin"), spec, spec.train_per_class, 0)?;
    write_split(&dir.join("test.bin"), spec, spec.test_per_class, 1)?;
    let subset: Vec<u8> = (0..spec.classes).collect();
    let (manifest, store) = load_cifar_binary(
        dir,
        &["train.bin".into()],
        &["test.bin".into()],
        Some(&subset),
        &format!("synthetic{}", spec.classes),
    )?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_reproducible_and_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { train_per_class: 8, test_per_class: 3, ..Default::default() };
        let (_, store) = write_synthetic_cifar(&dir.path().join("a"), &spec).unwrap();
        assert_eq!(store.train.len(), 80);
        assert_eq!(store.test.len(), 30);
        for class in 0..10u32 {
            assert_eq!(store.train.labels.iter().filter(|&&l| l == class).count(), 8);
        }
        let (_, store2) = write_synthetic_cifar(&dir.path().join("b"), &spec).unwrap();
        assert_eq!(store.train.pixels, store2.train.pixels);
    }

    #[test]
    fn classes_are_linearly_ordered_in_luminance() {
        let mut prev = -1.0f64;
        for class in 0..10 {
            let mut rng = substream(1, Stream::Data, 9);
            let px = render_sample(class, 0.02, &mut rng);
            let mean: f64 = px.iter().map(|&p| f64::from(p)).sum::<f64>() / px.len() as f64;
            assert!(mean > prev, "class {class} mean {mean} <= {prev}");
            prev = mean;
        }
    }
}
