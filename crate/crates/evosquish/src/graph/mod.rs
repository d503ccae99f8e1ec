//! Typed layer graphs for convolutional macroarchitectures.
//!
//! An [`ArchGraph`] is a DAG of [`LayerSpec`] nodes with one input source and
//! one softmax sink. Every conv layer carries a per-synapse liveness
//! [`Mask`]; all structural accounting (parameters, model size, MACs) and the
//! evolutionary synthesis operate on these masks.

mod build;
mod compact;
mod io;
mod report;

pub use build::{build_from_choice, build_squeezenet_mini, build_squeezenet_v11, retarget_classes};
pub use compact::{compact, compact_with_map, propagate_dead_channels, Compaction};
pub use io::{load_arch_json, load_masks_bin, save_arch_json, save_masks_bin, MASK_MAGIC};
pub use report::{size_report, LayerReport, SizeReport};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LayerId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Input,
    Conv,
    Maxpool,
    GlobalAvgpool,
    Concat,
    Softmax,
}

/// Activation fused into a conv layer. The classifier conv is linear; every
/// other conv is followed by a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: LayerId,
    pub name: String,
    pub kind: LayerKind,
    /// (kh, kw); conv and maxpool only.
    pub kernel: Option<(u32, u32)>,
    pub stride: u32,
    pub padding: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub has_bias: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn weight_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv => {
                let (kh, kw) = self.kernel.expect("conv layer has a kernel");
                u64::from(kh) * u64::from(kw) * u64::from(self.in_channels) * u64::from(self.out_channels)
            }
            _ => 0,
        }
    }
}

/// Per-synapse liveness bits for one conv layer, in OIHW order
/// (filter-major, then input channel, then kernel row, then kernel column) —
/// the same layout the weight buffers use.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub out_channels: u32,
    pub in_channels: u32,
    pub kh: u32,
    pub kw: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn all_live(out_channels: u32, in_channels: u32, kh: u32, kw: u32) -> Self {
        let len = out_channels as usize * in_channels as usize * kh as usize * kw as usize;
        Mask { out_channels, in_channels, kh, kw, bits: vec![true; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn index(&self, o: u32, i: u32, y: u32, x: u32) -> usize {
        (((o as usize * self.in_channels as usize) + i as usize) * self.kh as usize + y as usize)
            * self.kw as usize
            + x as usize
    }

    /// Number of live synapses in filter row `o`.
    pub fn filter_live_count(&self, o: u32) -> usize {
        let row = self.in_channels as usize * self.kh as usize * self.kw as usize;
        let start = o as usize * row;
        self.bits[start..start + row].iter().filter(|b| **b).count()
    }

    pub fn filter_is_live(&self, o: u32) -> bool {
        self.filter_live_count(o) > 0
    }

    pub fn live_filters(&self) -> u32 {
        (0..self.out_channels).filter(|&o| self.filter_is_live(o)).count() as u32
    }

    pub fn live_count(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    /// True when any synapse reading input channel `i` is live.
    pub fn column_is_live(&self, i: u32) -> bool {
        for o in 0..self.out_channels {
            for y in 0..self.kh {
                for x in 0..self.kw {
                    if self.bits[self.index(o, i, y, x)] {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Clears every synapse reading input channel `i`.
    pub fn clear_column(&mut self, i: u32) {
        for o in 0..self.out_channels {
            for y in 0..self.kh {
                for x in 0..self.kw {
                    let idx = self.index(o, i, y, x);
                    self.bits[idx] = false;
                }
            }
        }
    }
}

/// Where an output channel of a layer originates: either a raw input channel
/// or a specific filter of a conv layer. Pool and concat layers only route
/// channels, so provenance always resolves to one of these two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSource {
    Input(u32),
    Filter { layer: LayerId, filter: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph {
    pub name: String,
    /// (channels, height, width) of one sample.
    pub input_shape: (u32, u32, u32),
    pub num_classes: u32,
    /// Topologically ordered: every predecessor appears before its successors.
    pub layers: Vec<LayerSpec>,
    /// Ordered predecessor lists keyed by layer id.
    pub preds: BTreeMap<LayerId, Vec<LayerId>>,
    /// Liveness masks, one per conv layer.
    pub masks: BTreeMap<LayerId, Mask>,
}

impl ArchGraph {
    pub fn layer(&self, id: LayerId) -> &LayerSpec {
        self.layers.iter().find(|l| l.id == id).expect("layer id present")
    }

    pub fn preds_of(&self, id: LayerId) -> &[LayerId] {
        self.preds.get(&id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn successors(&self) -> BTreeMap<LayerId, Vec<LayerId>> {
        let mut succ: BTreeMap<LayerId, Vec<LayerId>> = BTreeMap::new();
        for layer in &self.layers {
            for &p in self.preds_of(layer.id) {
                succ.entry(p).or_default().push(layer.id);
            }
        }
        succ
    }

    /// The classifier: the last conv layer in topological order.
    pub fn final_conv_id(&self) -> LayerId {
        self.layers
            .iter()
            .rev()
            .find(|l| l.kind == LayerKind::Conv)
            .map(|l| l.id)
            .expect("graph has a conv layer")
    }

    pub fn conv_ids(&self) -> Vec<LayerId> {
        self.layers.iter().filter(|l| l.kind == LayerKind::Conv).map(|l| l.id).collect()
    }

    /// Output spatial/channel shape for each layer, in topological order.
    pub fn shapes(&self) -> Result<BTreeMap<LayerId, (u32, u32, u32)>> {
        let mut shapes: BTreeMap<LayerId, (u32, u32, u32)> = BTreeMap::new();
        for layer in &self.layers {
            let shape = match layer.kind {
                LayerKind::Input => self.input_shape,
                LayerKind::Conv | LayerKind::Maxpool => {
                    let pred = self.single_pred(layer.id)?;
                    let (c, h, w) = shapes[&pred];
                    if c != layer.in_channels {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {} expects {} input channels, predecessor provides {}",
                            layer.name, layer.in_channels, c
                        )));
                    }
                    let (kh, kw) = layer.kernel.ok_or_else(|| {
                        Error::ShapeMismatch(format!("layer {} is missing a kernel", layer.name))
                    })?;
                    let oh = conv_out_dim(h, kh, layer.stride, layer.padding);
                    let ow = conv_out_dim(w, kw, layer.stride, layer.padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => (layer.out_channels, oh, ow),
                        _ => {
                            return Err(Error::ShapeUnderflow(format!(
                                "layer {} on {}x{} input with kernel {}x{} stride {} pad {}",
                                layer.name, h, w, kh, kw, layer.stride, layer.padding
                            )))
                        }
                    }
                }
                LayerKind::GlobalAvgpool => {
                    let pred = self.single_pred(layer.id)?;
                    let (c, _, _) = shapes[&pred];
                    (c, 1, 1)
                }
                LayerKind::Concat => {
                    let preds = self.preds_of(layer.id);
                    if preds.len() < 2 {
                        return Err(Error::ShapeMismatch(format!(
                            "concat {} needs at least 2 predecessors",
                            layer.name
                        )));
                    }
                    let (_, h0, w0) = shapes[&preds[0]];
                    let mut c_sum = 0u32;
                    for &p in preds {
                        let (c, h, w) = shapes[&p];
                        if (h, w) != (h0, w0) {
                            return Err(Error::ShapeMismatch(format!(
                                "concat {} mixes spatial sizes {}x{} and {}x{}",
                                layer.name, h0, w0, h, w
                            )));
                        }
                        c_sum += c;
                    }
                    (c_sum, h0, w0)
                }
                LayerKind::Softmax => {
                    let pred = self.single_pred(layer.id)?;
                    shapes[&pred]
                }
            };
            shapes.insert(layer.id, shape);
        }
        Ok(shapes)
    }

    fn single_pred(&self, id: LayerId) -> Result<LayerId> {
        let preds = self.preds_of(id);
        if preds.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "layer {} expects exactly one predecessor, has {}",
                self.layer(id).name,
                preds.len()
            )));
        }
        Ok(preds[0])
    }

    /// Provenance of each output channel of `id`, resolved through pool and
    /// concat routing down to input channels and conv filters.
    pub fn output_channel_sources(&self, id: LayerId) -> Vec<ChannelSource> {
        let layer = self.layer(id);
        match layer.kind {
            LayerKind::Input => (0..self.input_shape.0).map(ChannelSource::Input).collect(),
            LayerKind::Conv => {
                (0..layer.out_channels).map(|f| ChannelSource::Filter { layer: id, filter: f }).collect()
            }
            LayerKind::Maxpool | LayerKind::GlobalAvgpool | LayerKind::Softmax => {
                self.output_channel_sources(self.preds_of(id)[0])
            }
            LayerKind::Concat => {
                let mut sources = Vec::new();
                for &p in self.preds_of(id) {
                    sources.extend(self.output_channel_sources(p));
                }
                sources
            }
        }
    }

    /// Provenance of each input channel of a conv or pool layer.
    pub fn input_channel_sources(&self, id: LayerId) -> Vec<ChannelSource> {
        self.output_channel_sources(self.preds_of(id)[0])
    }

    pub fn mask(&self, id: LayerId) -> &Mask {
        &self.masks[&id]
    }

    /// Live weight scalars plus live biases across the whole graph.
    pub fn live_params(&self) -> u64 {
        self.conv_ids()
            .iter()
            .map(|&id| {
                let layer = self.layer(id);
                let mask = self.mask(id);
                let live_w = mask.live_count();
                let live_b = if layer.has_bias { u64::from(mask.live_filters()) } else { 0 };
                live_w + live_b
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("graph has no layers".into()));
        }
        let ids: BTreeSet<LayerId> = self.layers.iter().map(|l| l.id).collect();
        if ids.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("duplicate layer ids".into()));
        }

        // Topological order: predecessors strictly precede their consumers.
        let mut seen: BTreeSet<LayerId> = BTreeSet::new();
        for layer in &self.layers {
            for &p in self.preds_of(layer.id) {
                if !seen.contains(&p) {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {} consumes {} before it is defined (cycle or bad order)",
                        layer.name, p
                    )));
                }
            }
            seen.insert(layer.id);
        }

        let inputs: Vec<_> = self.layers.iter().filter(|l| l.kind == LayerKind::Input).collect();
        if inputs.len() != 1 || !self.preds_of(inputs[0].id).is_empty() {
            return Err(Error::ShapeMismatch("graph must have exactly one input source".into()));
        }
        let softmaxes: Vec<_> = self.layers.iter().filter(|l| l.kind == LayerKind::Softmax).collect();
        if softmaxes.len() != 1 {
            return Err(Error::ShapeMismatch("graph must have exactly one softmax".into()));
        }
        let succ = self.successors();
        if succ.get(&softmaxes[0].id).is_some_and(|s| !s.is_empty()) {
            return Err(Error::ShapeMismatch("softmax must be the sink".into()));
        }
        for layer in &self.layers {
            if layer.kind != LayerKind::Softmax && succ.get(&layer.id).map_or(true, |s| s.is_empty()) {
                return Err(Error::ShapeMismatch(format!("layer {} is a dead end", layer.name)));
            }
        }

        for layer in &self.layers {
            match layer.kind {
                LayerKind::Conv | LayerKind::Maxpool => {
                    let (kh, kw) = layer.kernel.ok_or_else(|| {
                        Error::ShapeMismatch(format!("layer {} needs a kernel", layer.name))
                    })?;
                    if kh < 1 || kw < 1 || layer.stride < 1 {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {} kernel/stride must be >= 1",
                            layer.name
                        )));
                    }
                    if layer.kind == LayerKind::Conv
                        && (layer.in_channels == 0 || layer.out_channels == 0)
                    {
                        return Err(Error::ShapeMismatch(format!(
                            "conv {} must have at least one input and output channel",
                            layer.name
                        )));
                    }
                }
                _ => {}
            }
        }

        // Every conv mask covers exactly kh*kw*in*out synapses.
        for &id in &self.conv_ids() {
            let layer = self.layer(id);
            let mask = self.masks.get(&id).ok_or_else(|| {
                Error::ShapeMismatch(format!("conv {} has no mask", layer.name))
            })?;
            let (kh, kw) = layer.kernel.unwrap();
            if (mask.out_channels, mask.in_channels, mask.kh, mask.kw)
                != (layer.out_channels, layer.in_channels, kh, kw)
                || mask.len() as u64 != layer.weight_count()
            {
                return Err(Error::ShapeMismatch(format!(
                    "mask of {} does not match its weight tensor",
                    layer.name
                )));
            }
        }

        // Shape propagation must succeed and the classifier must match
        // num_classes.
        self.shapes()?;
        let final_conv = self.layer(self.final_conv_id());
        if final_conv.out_channels != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "classifier {} has {} filters for {} classes",
                final_conv.name, final_conv.out_channels, self.num_classes
            )));
        }
        Ok(())
    }
}

/// floor((in + 2*pad - k) / stride) + 1, or None on underflow.
pub fn conv_out_dim(input: u32, kernel: u32, stride: u32, padding: u32) -> Option<u32> {
    let padded = input as i64 + 2 * padding as i64;
    let span = padded - kernel as i64;
    if span < 0 {
        return None;
    }
    Some((span / stride as i64) as u32 + 1)
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;

    /// input -> conv -> global_avgpool -> softmax, with the conv doubling as
    /// the classifier.
    pub(crate) fn single_conv_graph(
        cin: u32,
        cout: u32,
        k: u32,
        stride: u32,
        pad: u32,
        hw: (u32, u32),
    ) -> ArchGraph {
        let mk = |id: LayerId, name: &str, kind: LayerKind, kernel, stride, padding, cin, cout| {
            LayerSpec {
                id,
                name: name.into(),
                kind,
                kernel,
                stride,
                padding,
                in_channels: cin,
                out_channels: cout,
                has_bias: kind == LayerKind::Conv,
                activation: Activation::Linear,
            }
        };
        let layers = vec![
            mk(0, "input", LayerKind::Input, None, 1, 0, cin, cin),
            mk(1, "conv", LayerKind::Conv, Some((k, k)), stride, pad, cin, cout),
            mk(2, "global_avgpool", LayerKind::GlobalAvgpool, None, 1, 0, cout, cout),
            mk(3, "softmax", LayerKind::Softmax, None, 1, 0, cout, cout),
        ];
        let mut preds = BTreeMap::new();
        preds.insert(0, vec![]);
        preds.insert(1, vec![0]);
        preds.insert(2, vec![1]);
        preds.insert(3, vec![2]);
        let mut masks = BTreeMap::new();
        masks.insert(1, Mask::all_live(cout, cin, k, k));
        ArchGraph {
            name: "single-conv".into(),
            input_shape: (cin, hw.0, hw.1),
            num_classes: cout,
            layers,
            preds,
            masks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dim_matches_sliding_window_simulation() {
        // Brute force: count window placements whose footprint stays inside
        // the padded extent.
        fn simulate(input: u32, kernel: u32, stride: u32, pad: u32) -> u32 {
            let padded = input + 2 * pad;
            let mut count = 0;
            let mut start = 0;
            while start + kernel <= padded {
                count += 1;
                start += stride;
            }
            count
        }
        let mut cases = 0;
        for input in 1..=16 {
            for kernel in 1..=5 {
                for stride in 1..=3 {
                    for pad in 0..=2 {
                        let expect = simulate(input, kernel, stride, pad);
                        let got = conv_out_dim(input, kernel, stride, pad);
                        if expect == 0 {
                            assert_eq!(got, None, "in={input} k={kernel} s={stride} p={pad}");
                        } else {
                            assert_eq!(got, Some(expect), "in={input} k={kernel} s={stride} p={pad}");
                            cases += 1;
                        }
                    }
                }
            }
        }
        assert!(cases > 200);
    }

    #[test]
    fn mask_indexing_and_column_ops() {
        let mut mask = Mask::all_live(2, 3, 2, 2);
        assert_eq!(mask.len(), 2 * 3 * 2 * 2);
        assert_eq!(mask.live_count(), 24);
        mask.clear_column(1);
        assert_eq!(mask.live_count(), 16);
        assert!(!mask.column_is_live(1));
        assert!(mask.column_is_live(0));
        assert!(mask.filter_is_live(0));
        assert_eq!(mask.filter_live_count(0), 8);
    }
}
