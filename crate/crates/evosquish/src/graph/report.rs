//! Parameter, model-size and MAC accounting.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{ArchGraph, LayerKind};

pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_id: u32,
    pub name: String,
    pub kind: String,
    pub total_params: u64,
    pub live_params: u64,
    /// Multiply-accumulates for one forward pass, counting live synapses only.
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub live_params: u64,
    pub total_params: u64,
    /// 32-bit storage: live scalars x 4 bytes, no container overhead.
    pub model_size_bytes: u64,
    pub macs: u64,
    pub per_layer: Vec<LayerReport>,
}

impl SizeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_id,kind,total_params,live_params,macs\n");
        for l in &self.per_layer {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.layer_id, l.kind, l.total_params, l.live_params, l.macs
            ));
        }
        out
    }

    pub fn model_size_mb(&self) -> f64 {
        self.model_size_bytes as f64 / 1e6
    }

    pub fn model_size_mib(&self) -> f64 {
        self.model_size_bytes as f64 / (1024.0 * 1024.0)
    }
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Input => "input",
        LayerKind::Conv => "conv",
        LayerKind::Maxpool => "maxpool",
        LayerKind::GlobalAvgpool => "global-avgpool",
        LayerKind::Concat => "concat",
        LayerKind::Softmax => "softmax",
    }
}

/// Deterministic accounting over the graph. Only conv layers own parameters;
/// a bias is live iff its filter has at least one live synapse. MACs per conv
/// layer are out_h * out_w * live-synapse-count; routing and pooling layers
/// contribute none.
pub fn size_report(arch: &ArchGraph) -> Result<SizeReport> {
    arch.validate()?;
    let shapes = arch.shapes()?;
    let mut per_layer = Vec::with_capacity(arch.layers.len());
    let mut live = 0u64;
    let mut total = 0u64;
    let mut macs = 0u64;
    for layer in &arch.layers {
        let (mut l_total, mut l_live, mut l_macs) = (0u64, 0u64, 0u64);
        if layer.kind == LayerKind::Conv {
            let mask = arch.mask(layer.id);
            let live_w = mask.live_count();
            let live_b = if layer.has_bias { u64::from(mask.live_filters()) } else { 0 };
            let total_b = if layer.has_bias { u64::from(layer.out_channels) } else { 0 };
            let (_, oh, ow) = shapes[&layer.id];
            l_total = layer.weight_count() + total_b;
            l_live = live_w + live_b;
            l_macs = u64::from(oh) * u64::from(ow) * live_w;
        }
        live += l_live;
        total += l_total;
        macs += l_macs;
        per_layer.push(LayerReport {
            layer_id: layer.id,
            name: layer.name.clone(),
            kind: kind_name(layer.kind).to_string(),
            total_params: l_total,
            live_params: l_live,
            macs: l_macs,
        });
    }
    Ok(SizeReport {
        live_params: live,
        total_params: total,
        model_size_bytes: live * BYTES_PER_PARAM,
        macs,
        per_layer,
    })
}
