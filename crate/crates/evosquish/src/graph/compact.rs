//! Structural cleanup after synaptogenesis.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{ArchGraph, ChannelSource, LayerId, LayerKind, Mask};

/// Result of a compaction: the shrunk graph plus, for every conv layer, the
/// old filter indices and old input-channel indices that were kept (both
/// ascending). Weight stores are remapped with the same tables.
#[derive(Debug, Clone)]
pub struct Compaction {
    pub graph: ArchGraph,
    pub kept_out: BTreeMap<LayerId, Vec<u32>>,
    pub kept_in: BTreeMap<LayerId, Vec<u32>>,
}

/// Clears mask columns that read channels produced by entirely dead filters.
/// Such synapses only ever see zeros, so clearing them changes no output;
/// it does reduce the live-parameter count. One topological pass suffices
/// because deadness flows forward.
pub fn propagate_dead_channels(arch: &ArchGraph) -> ArchGraph {
    let mut out = arch.clone();
    let conv_ids = out.conv_ids();
    for id in conv_ids {
        let sources = out.input_channel_sources(id);
        let mut dead_inputs = Vec::new();
        for (i, src) in sources.iter().enumerate() {
            if let ChannelSource::Filter { layer, filter } = src {
                if !out.mask(*layer).filter_is_live(*filter) {
                    dead_inputs.push(i as u32);
                }
            }
        }
        if dead_inputs.is_empty() {
            continue;
        }
        let mask = out.masks.get_mut(&id).unwrap();
        for i in dead_inputs {
            mask.clear_column(i);
        }
    }
    out
}

/// Removes output filters that carry no live parameters anywhere: the
/// filter's own mask row is entirely dead and so is every successor mask
/// column reading its channel. Downstream channel counts shrink to match.
/// The live-parameter count and the computed function are both preserved
/// exactly; classifier filters are never removed.
pub fn compact_with_map(arch: &ArchGraph) -> Result<Compaction> {
    arch.validate()?;

    for &id in &arch.conv_ids() {
        if arch.mask(id).live_filters() == 0 {
            return Err(Error::DegenerateArchitecture(format!(
                "layer {} would reach 0 output filters",
                arch.layer(id).name
            )));
        }
    }

    // Liveness of the consumer side: does any conv keep a live synapse on a
    // channel sourced from (layer, filter)?
    let mut consumed_live: BTreeMap<(LayerId, u32), bool> = BTreeMap::new();
    for &id in &arch.conv_ids() {
        let mask = arch.mask(id);
        for (i, src) in arch.input_channel_sources(id).iter().enumerate() {
            if let ChannelSource::Filter { layer, filter } = src {
                let entry = consumed_live.entry((*layer, *filter)).or_insert(false);
                *entry |= mask.column_is_live(i as u32);
            }
        }
    }

    // Filters that feed the softmax sink directly (the classifier's channel
    // space) keep the output arity fixed and are never dropped.
    let softmax_id = arch.layers.iter().find(|l| l.kind == LayerKind::Softmax).unwrap().id;
    let mut protected: BTreeMap<(LayerId, u32), ()> = BTreeMap::new();
    for src in arch.output_channel_sources(softmax_id) {
        if let ChannelSource::Filter { layer, filter } = src {
            protected.insert((layer, filter), ());
        }
    }

    let mut kept_out: BTreeMap<LayerId, Vec<u32>> = BTreeMap::new();
    for &id in &arch.conv_ids() {
        let mask = arch.mask(id);
        let kept: Vec<u32> = (0..mask.out_channels)
            .filter(|&f| {
                protected.contains_key(&(id, f))
                    || mask.filter_is_live(f)
                    || consumed_live.get(&(id, f)).copied().unwrap_or(false)
            })
            .collect();
        kept_out.insert(id, kept);
    }

    // Rebuild the graph with shrunk channel spaces.
    let mut out = arch.clone();
    let mut kept_in: BTreeMap<LayerId, Vec<u32>> = BTreeMap::new();
    let mut out_channels_of: BTreeMap<LayerId, u32> = BTreeMap::new();
    let layer_order: Vec<LayerId> = arch.layers.iter().map(|l| l.id).collect();
    for id in layer_order {
        let old = arch.layer(id);
        let new_out = match old.kind {
            LayerKind::Input => old.out_channels,
            LayerKind::Conv => kept_out[&id].len() as u32,
            LayerKind::Maxpool | LayerKind::GlobalAvgpool | LayerKind::Softmax => {
                out_channels_of[&arch.preds_of(id)[0]]
            }
            LayerKind::Concat => arch.preds_of(id).iter().map(|p| out_channels_of[p]).sum(),
        };
        out_channels_of.insert(id, new_out);

        if old.kind == LayerKind::Conv {
            let sources = arch.input_channel_sources(id);
            let kept: Vec<u32> = sources
                .iter()
                .enumerate()
                .filter(|(_, src)| match src {
                    ChannelSource::Input(_) => true,
                    ChannelSource::Filter { layer, filter } => kept_out[layer].contains(filter),
                })
                .map(|(i, _)| i as u32)
                .collect();

            let old_mask = arch.mask(id);
            let rows = &kept_out[&id];
            let mut bits =
                Vec::with_capacity(rows.len() * kept.len() * old_mask.kh as usize * old_mask.kw as usize);
            for &o in rows {
                for &i in &kept {
                    for y in 0..old_mask.kh {
                        for x in 0..old_mask.kw {
                            bits.push(old_mask.bits[old_mask.index(o, i, y, x)]);
                        }
                    }
                }
            }
            let new_mask = Mask {
                out_channels: rows.len() as u32,
                in_channels: kept.len() as u32,
                kh: old_mask.kh,
                kw: old_mask.kw,
                bits,
            };
            out.masks.insert(id, new_mask);
            kept_in.insert(id, kept);
        }

        let layer = out.layers.iter_mut().find(|l| l.id == id).unwrap();
        layer.out_channels = new_out;
        layer.in_channels = match old.kind {
            LayerKind::Input => old.in_channels,
            LayerKind::Conv => kept_in[&id].len() as u32,
            _ => arch.preds_of(id).iter().map(|p| out_channels_of[p]).sum(),
        };
    }

    out.validate()?;
    debug_assert_eq!(out.live_params(), arch.live_params());
    Ok(Compaction { graph: out, kept_out, kept_in })
}

pub fn compact(arch: &ArchGraph) -> Result<ArchGraph> {
    Ok(compact_with_map(arch)?.graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_squeezenet_mini, size_report};

    fn layer_id(arch: &ArchGraph, name: &str) -> LayerId {
        arch.layers.iter().find(|l| l.name == name).unwrap().id
    }

    #[test]
    fn fully_live_graph_is_unchanged() {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let compacted = compact(&arch).unwrap();
        assert_eq!(arch, compacted);
    }

    #[test]
    fn dead_expand_filter_is_removed_with_its_columns() {
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let e1 = layer_id(&arch, "fire1/expand1x1");
        let consumer = layer_id(&arch, "fire2/squeeze1x1");

        // Kill filter 3 of fire1/expand1x1; its channel is concat channel 3,
        // routed through the pool into input channel 3 of fire2's squeeze.
        {
            let mask = arch.masks.get_mut(&e1).unwrap();
            for i in 0..mask.in_channels {
                let idx = mask.index(3, i, 0, 0);
                mask.bits[idx] = false;
            }
        }
        arch.masks.get_mut(&consumer).unwrap().clear_column(3);

        let live_before = arch.live_params();
        let compacted = compact(&arch).unwrap();
        assert_eq!(compacted.live_params(), live_before);
        assert_eq!(compacted.layer(e1).out_channels, 31);
        assert_eq!(compacted.layer(consumer).in_channels, 63);
        assert_eq!(compacted.layer(layer_id(&arch, "fire1/concat")).out_channels, 63);
        compacted.validate().unwrap();
    }

    #[test]
    fn dead_filter_with_live_consumers_stays() {
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let e1 = layer_id(&arch, "fire1/expand1x1");
        {
            let mask = arch.masks.get_mut(&e1).unwrap();
            for i in 0..mask.in_channels {
                let idx = mask.index(3, i, 0, 0);
                mask.bits[idx] = false;
            }
        }
        // Consumer columns still live: removal would drop live parameters,
        // so the filter is kept and only accounting reflects the dead row.
        let live_before = arch.live_params();
        let compacted = compact(&arch).unwrap();
        assert_eq!(compacted.live_params(), live_before);
        assert_eq!(compacted.layer(e1).out_channels, 32);
    }

    #[test]
    fn entirely_dead_squeeze_layer_is_degenerate() {
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let squeeze = layer_id(&arch, "fire1/squeeze1x1");
        let mask = arch.masks.get_mut(&squeeze).unwrap();
        for b in mask.bits.iter_mut() {
            *b = false;
        }
        assert!(matches!(compact(&arch), Err(Error::DegenerateArchitecture(_))));
    }

    #[test]
    fn propagation_clears_consumers_of_dead_filters() {
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let e1 = layer_id(&arch, "fire1/expand1x1");
        let consumer = layer_id(&arch, "fire2/squeeze1x1");
        {
            let mask = arch.masks.get_mut(&e1).unwrap();
            for i in 0..mask.in_channels {
                let idx = mask.index(3, i, 0, 0);
                mask.bits[idx] = false;
            }
        }
        assert!(arch.mask(consumer).column_is_live(3));
        let propagated = propagate_dead_channels(&arch);
        assert!(!propagated.mask(consumer).column_is_live(3));
        assert!(propagated.live_params() < arch.live_params());

        // After propagation the dead structure is removable.
        let compacted = compact(&propagated).unwrap();
        assert_eq!(compacted.layer(e1).out_channels, 31);
        assert_eq!(compacted.live_params(), propagated.live_params());
    }

    #[test]
    fn propagation_cascades_through_a_chain() {
        // Killing every filter of fire3's squeeze would starve the expands;
        // propagation clears their columns and leaves their filters dead.
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let squeeze = layer_id(&arch, "fire3/squeeze1x1");
        {
            let mask = arch.masks.get_mut(&squeeze).unwrap();
            for b in mask.bits.iter_mut() {
                *b = false;
            }
        }
        let propagated = propagate_dead_channels(&arch);
        let e1 = layer_id(&arch, "fire3/expand1x1");
        let e3 = layer_id(&arch, "fire3/expand3x3");
        assert_eq!(propagated.mask(e1).live_count(), 0);
        assert_eq!(propagated.mask(e3).live_count(), 0);
        // And the classifier columns reading fire3's concat are cleared too.
        let conv10 = layer_id(&arch, "conv10");
        assert_eq!(propagated.mask(conv10).live_count(), 0);
    }

    #[test]
    fn compaction_keeps_macs_consistent() {
        let mut arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let e3 = layer_id(&arch, "fire2/expand3x3");
        {
            let mask = arch.masks.get_mut(&e3).unwrap();
            for i in 0..mask.in_channels {
                for y in 0..3 {
                    for x in 0..3 {
                        let idx = mask.index(7, i, y, x);
                        mask.bits[idx] = false;
                    }
                }
            }
        }
        let propagated = propagate_dead_channels(&arch);
        let before = size_report(&propagated).unwrap();
        let compacted = compact(&propagated).unwrap();
        let after = size_report(&compacted).unwrap();
        assert_eq!(before.live_params, after.live_params);
        assert_eq!(before.macs, after.macs);
        assert!(after.total_params < before.total_params);
    }
}
