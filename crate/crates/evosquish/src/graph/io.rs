//! Architecture manifest (JSON) and mask bitset (binary RLE) persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ArchGraph, LayerSpec, Mask};

pub const MASK_MAGIC: &[u8; 8] = b"EVSQMASK";
pub const ARCH_SCHEMA: &str = "evosquish-arch/1";

#[derive(Serialize, Deserialize)]
struct ArchManifest {
    schema: String,
    name: String,
    input_shape: (u32, u32, u32),
    num_classes: u32,
    layers: Vec<LayerSpec>,
    /// Predecessor lists keyed by layer id (stringified for JSON).
    edges: BTreeMap<String, Vec<u32>>,
}

/// Writes the layer/edge manifest. Masks are persisted separately.
pub fn save_arch_json(arch: &ArchGraph, path: &Path) -> Result<()> {
    let manifest = ArchManifest {
        schema: ARCH_SCHEMA.to_string(),
        name: arch.name.clone(),
        input_shape: arch.input_shape,
        num_classes: arch.num_classes,
        layers: arch.layers.clone(),
        edges: arch.preds.iter().map(|(id, preds)| (id.to_string(), preds.clone())).collect(),
    };
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

/// Reads a manifest and re-attaches masks from the companion bitset file.
pub fn load_arch_json(arch_path: &Path, masks_path: &Path) -> Result<ArchGraph> {
    let file = BufReader::new(File::open(arch_path)?);
    let manifest: ArchManifest = serde_json::from_reader(file).map_err(|e| Error::MalformedFile {
        path: arch_path.display().to_string(),
        detail: e.to_string(),
    })?;
    if manifest.schema != ARCH_SCHEMA {
        return Err(Error::MalformedFile {
            path: arch_path.display().to_string(),
            detail: format!("unsupported schema {:?}", manifest.schema),
        });
    }
    let mut preds = BTreeMap::new();
    for (key, list) in manifest.edges {
        let id: u32 = key.parse().map_err(|_| Error::MalformedFile {
            path: arch_path.display().to_string(),
            detail: format!("bad edge key {key:?}"),
        })?;
        preds.insert(id, list);
    }
    let mut graph = ArchGraph {
        name: manifest.name,
        input_shape: manifest.input_shape,
        num_classes: manifest.num_classes,
        layers: manifest.layers,
        preds,
        masks: BTreeMap::new(),
    };
    let masks = load_masks_bin(masks_path)?;
    for layer in &graph.layers {
        if layer.kind == super::LayerKind::Conv {
            let (bit_count, first_bit, runs) =
                masks.iter().find(|(id, ..)| *id == layer.id).map(|(_, rest)| rest.clone()).ok_or_else(
                    || Error::MalformedFile {
                        path: masks_path.display().to_string(),
                        detail: format!("no mask record for layer {}", layer.id),
                    },
                )?;
            let bits = decode_runs(bit_count, first_bit, &runs);
            let (kh, kw) = layer.kernel.unwrap();
            graph.masks.insert(
                layer.id,
                Mask { out_channels: layer.out_channels, in_channels: layer.in_channels, kh, kw, bits },
            );
        }
    }
    graph.validate()?;
    Ok(graph)
}

type MaskRecord = (u32, (u64, bool, Vec<u32>));

/// Run-length encodes one bitset: alternating run lengths starting with
/// `first_bit`.
fn encode_runs(bits: &[bool]) -> (bool, Vec<u32>) {
    if bits.is_empty() {
        return (false, Vec::new());
    }
    let first = bits[0];
    let mut runs = Vec::new();
    let mut current = first;
    let mut len: u32 = 0;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    (first, runs)
}

fn decode_runs(bit_count: u64, first_bit: bool, runs: &[u32]) -> Vec<bool> {
    let mut bits = Vec::with_capacity(bit_count as usize);
    let mut value = first_bit;
    for &run in runs {
        for _ in 0..run {
            bits.push(value);
        }
        value = !value;
    }
    bits
}

/// Record layout after the 8-byte magic, one record per conv layer in
/// ascending id order: layer_id u32 LE, bit count u64 LE, first bit u8,
/// run count u32 LE, then that many u32 LE run lengths.
pub fn save_masks_bin(arch: &ArchGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MASK_MAGIC)?;
    for (&id, mask) in &arch.masks {
        let (first, runs) = encode_runs(&mask.bits);
        w.write_all(&id.to_le_bytes())?;
        w.write_all(&(mask.bits.len() as u64).to_le_bytes())?;
        w.write_all(&[u8::from(first)])?;
        w.write_all(&(runs.len() as u32).to_le_bytes())?;
        for run in runs {
            w.write_all(&run.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_masks_bin(path: &Path) -> Result<Vec<MaskRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::MalformedFile {
        path: path.display().to_string(),
        detail: "missing magic header".into(),
    })?;
    if &magic != MASK_MAGIC {
        return Err(Error::MalformedFile {
            path: path.display().to_string(),
            detail: "bad magic header".into(),
        });
    }
    let mut records = Vec::new();
    loop {
        let mut id_buf = [0u8; 4];
        match r.read_exact(&mut id_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = u32::from_le_bytes(id_buf);
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u64_buf)?;
        let bit_count = u64::from_le_bytes(u64_buf);
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let first_bit = byte[0] != 0;
        let mut u32_buf = [0u8; 4];
        r.read_exact(&mut u32_buf)?;
        let run_count = u32::from_le_bytes(u32_buf);
        let mut runs = Vec::with_capacity(run_count as usize);
        let mut total: u64 = 0;
        for _ in 0..run_count {
            r.read_exact(&mut u32_buf)?;
            let run = u32::from_le_bytes(u32_buf);
            total += u64::from(run);
            runs.push(run);
        }
        if total != bit_count {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("layer {id}: runs cover {total} bits, header says {bit_count}"),
            });
        }
        records.push((id, (bit_count, first_bit, runs)));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_squeezenet_mini;
    use rand::Rng;

    #[test]
    fn rle_round_trip_random_bitsets() {
        let mut rng = crate::rng::substream(3, crate::rng::Stream::Synthesis, 9);
        for density in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let bits: Vec<bool> = (0..4097).map(|_| rng.gen::<f64>() < density).collect();
            let (first, runs) = encode_runs(&bits);
            let decoded = decode_runs(bits.len() as u64, first, &runs);
            assert_eq!(bits, decoded);
        }
    }

    #[test]
    fn arch_and_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        // Perturb some masks so the round trip carries real structure.
        let mut rng = crate::rng::substream(4, crate::rng::Stream::Synthesis, 2);
        for mask in arch.masks.values_mut() {
            for b in mask.bits.iter_mut() {
                if rng.gen::<f64>() < 0.25 {
                    *b = false;
                }
            }
            // Keep the graph valid: resurrect one synapse per filter row.
            for o in 0..mask.out_channels {
                let idx = mask.index(o, 0, 0, 0);
                mask.bits[idx] = true;
            }
        }
        let arch_path = dir.path().join("arch.json");
        let mask_path = dir.path().join("masks.bin");
        save_arch_json(&arch, &arch_path).unwrap();
        save_masks_bin(&arch, &mask_path).unwrap();
        let loaded = load_arch_json(&arch_path, &mask_path).unwrap();
        assert_eq!(arch, loaded);
    }

    #[test]
    fn mask_file_magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("masks.bin");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(matches!(load_masks_bin(&path), Err(Error::MalformedFile { .. })));
    }
}
