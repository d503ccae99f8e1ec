//! Per-layer weight and bias buffers paired with the graph's liveness masks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ArchGraph, Compaction, LayerId, LayerKind};

use super::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    /// OIHW, row-major; dead positions hold exactly zero.
    pub weights: Vec<T>,
    /// One per filter; zero when the filter has no live synapse.
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<T> {
    pub layers: BTreeMap<LayerId, LayerWeights<T>>,
}

impl<T: Real> WeightStore<T> {
    pub fn zeros(arch: &ArchGraph) -> Self {
        let mut layers = BTreeMap::new();
        for &id in &arch.conv_ids() {
            let layer = arch.layer(id);
            layers.insert(
                id,
                LayerWeights {
                    weights: vec![T::zero(); layer.weight_count() as usize],
                    bias: vec![T::zero(); layer.out_channels as usize],
                },
            );
        }
        WeightStore { layers }
    }

    pub fn layer(&self, id: LayerId) -> &LayerWeights<T> {
        &self.layers[&id]
    }

    pub fn shape_check(&self, arch: &ArchGraph) -> Result<()> {
        let conv_ids = arch.conv_ids();
        if self.layers.len() != conv_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight store has {} layers, graph has {} convs",
                self.layers.len(),
                conv_ids.len()
            )));
        }
        for &id in &conv_ids {
            let layer = arch.layer(id);
            let lw = self.layers.get(&id).ok_or_else(|| {
                Error::ShapeMismatch(format!("no weights for layer {}", layer.name))
            })?;
            if lw.weights.len() as u64 != layer.weight_count()
                || lw.bias.len() != layer.out_channels as usize
            {
                return Err(Error::ShapeMismatch(format!(
                    "weights for {} do not match its shape",
                    layer.name
                )));
            }
        }
        Ok(())
    }

    /// Forces dead synapses and dead-filter biases to exactly zero.
    pub fn apply_mask(&mut self, arch: &ArchGraph) {
        for (&id, lw) in self.layers.iter_mut() {
            let mask = arch.mask(id);
            for (w, &live) in lw.weights.iter_mut().zip(mask.bits.iter()) {
                if !live {
                    *w = T::zero();
                }
            }
            for o in 0..mask.out_channels {
                if !mask.filter_is_live(o) {
                    lw.bias[o as usize] = T::zero();
                }
            }
        }
    }

    pub fn masked_positions_are_zero(&self, arch: &ArchGraph) -> bool {
        for (&id, lw) in &self.layers {
            let mask = arch.mask(id);
            for (w, &live) in lw.weights.iter().zip(mask.bits.iter()) {
                if !live && *w != T::zero() {
                    return false;
                }
            }
            for o in 0..mask.out_channels {
                if !mask.filter_is_live(o) && lw.bias[o as usize] != T::zero() {
                    return false;
                }
            }
        }
        true
    }

    pub fn check_finite(&self) -> Result<()> {
        for lw in self.layers.values() {
            if lw.weights.iter().chain(lw.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow("weight store contains NaN or Inf".into()));
            }
        }
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> WeightStore<U> {
        WeightStore {
            layers: self
                .layers
                .iter()
                .map(|(&id, lw)| {
                    (
                        id,
                        LayerWeights {
                            weights: lw.weights.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                            bias: lw.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds the store for a compacted graph by selecting the kept filter
    /// rows and input-channel columns.
    pub fn compacted(&self, old_arch: &ArchGraph, compaction: &Compaction) -> WeightStore<T> {
        let mut layers = BTreeMap::new();
        for (&id, lw) in &self.layers {
            let old_mask = old_arch.mask(id);
            let (kh, kw) = (old_mask.kh as usize, old_mask.kw as usize);
            let rows = &compaction.kept_out[&id];
            let cols = &compaction.kept_in[&id];
            let mut weights = Vec::with_capacity(rows.len() * cols.len() * kh * kw);
            let mut bias = Vec::with_capacity(rows.len());
            for &o in rows {
                for &i in cols {
                    for y in 0..kh as u32 {
                        for x in 0..kw as u32 {
                            weights.push(lw.weights[old_mask.index(o, i, y, x)]);
                        }
                    }
                }
                bias.push(lw.bias[o as usize]);
            }
            layers.insert(id, LayerWeights { weights, bias });
        }
        WeightStore { layers }
    }
}

impl WeightStore<f32> {
    /// He-style scaled uniform init: each filter drawn from
    /// U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases start at zero. Dead
    /// positions are zeroed afterwards. Draw order is layer-id then OIHW,
    /// so a fixed seed fully determines the result.
    pub fn init_he(arch: &ArchGraph, rng: &mut ChaCha8Rng) -> Self {
        let mut store = WeightStore::zeros(arch);
        for &id in &arch.conv_ids() {
            let layer = arch.layer(id);
            let (kh, kw) = layer.kernel.unwrap();
            let fan_in = (kh * kw * layer.in_channels) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let lw = store.layers.get_mut(&id).unwrap();
            for w in lw.weights.iter_mut() {
                *w = (rng.gen::<f64>() * 2.0 * bound - bound) as f32;
            }
        }
        store.apply_mask(arch);
        store
    }

    /// Live weights in OIHW order followed by live biases, per conv layer in
    /// ascending id order. Record header: layer id u32 LE, value count u32
    /// LE; values are f32 LE.
    pub fn save(&self, arch: &ArchGraph, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (&id, lw) in &self.layers {
            let mask = arch.mask(id);
            let mut values: Vec<f32> = Vec::new();
            for (v, &live) in lw.weights.iter().zip(mask.bits.iter()) {
                if live {
                    values.push(*v);
                }
            }
            for o in 0..mask.out_channels {
                if mask.filter_is_live(o) {
                    values.push(lw.bias[o as usize]);
                }
            }
            w.write_all(&id.to_le_bytes())?;
            w.write_all(&(values.len() as u32).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(arch: &ArchGraph, path: &Path) -> Result<WeightStore<f32>> {
        let mut r = BufReader::new(File::open(path)?);
        let mut store = WeightStore::zeros(arch);
        loop {
            let mut id_buf = [0u8; 4];
            match r.read_exact(&mut id_buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let id = u32::from_le_bytes(id_buf);
            let mut count_buf = [0u8; 4];
            r.read_exact(&mut count_buf)?;
            let count = u32::from_le_bytes(count_buf) as usize;
            let layer = arch.layers.iter().find(|l| l.id == id && l.kind == LayerKind::Conv);
            let layer = layer.ok_or_else(|| Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("weights for unknown conv layer {id}"),
            })?;
            let mask = arch.mask(id);
            let live_w = mask.live_count() as usize;
            let live_b = mask.live_filters() as usize;
            if count != live_w + live_b {
                return Err(Error::MalformedFile {
                    path: path.display().to_string(),
                    detail: format!(
                        "layer {} expects {} live values, file has {count}",
                        layer.name,
                        live_w + live_b
                    ),
                });
            }
            let mut values = vec![0f32; count];
            let mut buf = [0u8; 4];
            for v in values.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
            let lw = store.layers.get_mut(&id).unwrap();
            let mut cursor = 0;
            for (slot, &live) in lw.weights.iter_mut().zip(mask.bits.iter()) {
                if live {
                    *slot = values[cursor];
                    cursor += 1;
                }
            }
            for o in 0..mask.out_channels {
                if mask.filter_is_live(o) {
                    lw.bias[o as usize] = values[cursor];
                    cursor += 1;
                }
            }
        }
        store.shape_check(arch)?;
        Ok(store)
    }
}
