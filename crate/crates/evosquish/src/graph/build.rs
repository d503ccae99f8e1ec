//! Seed architecture builders and classifier retargeting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Activation, ArchGraph, LayerId, LayerKind, LayerSpec, Mask};

struct GraphBuilder {
    name: String,
    input_shape: (u32, u32, u32),
    layers: Vec<LayerSpec>,
    preds: BTreeMap<LayerId, Vec<LayerId>>,
    /// Channel count produced by each layer added so far.
    channels: BTreeMap<LayerId, u32>,
    next_id: LayerId,
}

impl GraphBuilder {
    fn new(name: &str, input_shape: (u32, u32, u32)) -> (Self, LayerId) {
        let mut b = GraphBuilder {
            name: name.to_string(),
            input_shape,
            layers: Vec::new(),
            preds: BTreeMap::new(),
            channels: BTreeMap::new(),
            next_id: 0,
        };
        let id = b.push(
            LayerSpec {
                id: 0,
                name: "input".into(),
                kind: LayerKind::Input,
                kernel: None,
                stride: 1,
                padding: 0,
                in_channels: input_shape.0,
                out_channels: input_shape.0,
                has_bias: false,
                activation: Activation::Linear,
            },
            &[],
        );
        (b, id)
    }

    fn push(&mut self, mut layer: LayerSpec, preds: &[LayerId]) -> LayerId {
        let id = self.next_id;
        self.next_id += 1;
        layer.id = id;
        self.channels.insert(id, layer.out_channels);
        self.preds.insert(id, preds.to_vec());
        self.layers.push(layer);
        id
    }

    fn conv(
        &mut self,
        name: &str,
        from: LayerId,
        out_channels: u32,
        kernel: u32,
        stride: u32,
        padding: u32,
        activation: Activation,
    ) -> LayerId {
        let in_channels = self.channels[&from];
        self.push(
            LayerSpec {
                id: 0,
                name: name.into(),
                kind: LayerKind::Conv,
                kernel: Some((kernel, kernel)),
                stride,
                padding,
                in_channels,
                out_channels,
                has_bias: true,
                activation,
            },
            &[from],
        )
    }

    fn maxpool(&mut self, name: &str, from: LayerId, kernel: u32, stride: u32) -> LayerId {
        let c = self.channels[&from];
        self.push(
            LayerSpec {
                id: 0,
                name: name.into(),
                kind: LayerKind::Maxpool,
                kernel: Some((kernel, kernel)),
                stride,
                padding: 0,
                in_channels: c,
                out_channels: c,
                has_bias: false,
                activation: Activation::Linear,
            },
            &[from],
        )
    }

    /// Fire module: 1x1 squeeze feeding parallel 1x1 and 3x3 expands whose
    /// outputs are concatenated channel-wise.
    fn fire(&mut self, name: &str, from: LayerId, squeeze: u32, expand: u32) -> LayerId {
        let s = self.conv(&format!("{name}/squeeze1x1"), from, squeeze, 1, 1, 0, Activation::Relu);
        let e1 = self.conv(&format!("{name}/expand1x1"), s, expand, 1, 1, 0, Activation::Relu);
        let e3 = self.conv(&format!("{name}/expand3x3"), s, expand, 3, 1, 1, Activation::Relu);
        let c = self.channels[&e1] + self.channels[&e3];
        self.push(
            LayerSpec {
                id: 0,
                name: format!("{name}/concat"),
                kind: LayerKind::Concat,
                kernel: None,
                stride: 1,
                padding: 0,
                in_channels: c,
                out_channels: c,
                has_bias: false,
                activation: Activation::Linear,
            },
            &[e1, e3],
        )
    }

    fn global_avgpool(&mut self, from: LayerId) -> LayerId {
        let c = self.channels[&from];
        self.push(
            LayerSpec {
                id: 0,
                name: "global_avgpool".into(),
                kind: LayerKind::GlobalAvgpool,
                kernel: None,
                stride: 1,
                padding: 0,
                in_channels: c,
                out_channels: c,
                has_bias: false,
                activation: Activation::Linear,
            },
            &[from],
        )
    }

    fn softmax(&mut self, from: LayerId) -> LayerId {
        let c = self.channels[&from];
        self.push(
            LayerSpec {
                id: 0,
                name: "softmax".into(),
                kind: LayerKind::Softmax,
                kernel: None,
                stride: 1,
                padding: 0,
                in_channels: c,
                out_channels: c,
                has_bias: false,
                activation: Activation::Linear,
            },
            &[from],
        )
    }

    fn finish(self, num_classes: u32) -> Result<ArchGraph> {
        let mut masks = BTreeMap::new();
        for layer in &self.layers {
            if layer.kind == LayerKind::Conv {
                let (kh, kw) = layer.kernel.unwrap();
                masks.insert(layer.id, Mask::all_live(layer.out_channels, layer.in_channels, kh, kw));
            }
        }
        let graph = ArchGraph {
            name: self.name,
            input_shape: self.input_shape,
            num_classes,
            layers: self.layers,
            preds: self.preds,
            masks,
        };
        graph.validate()?;
        Ok(graph)
    }
}

fn check_classes(num_classes: u32) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::InvalidClassCount("num_classes must be >= 1".into()));
    }
    Ok(())
}

/// SqueezeNet v1.1: conv1 64x3x3/2, fire2-9 with squeeze/expand widths
/// 16/64, 16/64, 32/128, 32/128, 48/192, 48/192, 64/256, 64/256, maxpools
/// after conv1, fire3 and fire5, then a 1x1 classifier conv, global average
/// pooling and softmax.
pub fn build_squeezenet_v11(num_classes: u32, input_shape: (u32, u32, u32)) -> Result<ArchGraph> {
    check_classes(num_classes)?;
    let (mut b, input) = GraphBuilder::new("squeezenet-v1.1", input_shape);
    let conv1 = b.conv("conv1", input, 64, 3, 2, 0, Activation::Relu);
    let pool1 = b.maxpool("maxpool1", conv1, 3, 2);
    let fire2 = b.fire("fire2", pool1, 16, 64);
    let fire3 = b.fire("fire3", fire2, 16, 64);
    let pool3 = b.maxpool("maxpool3", fire3, 3, 2);
    let fire4 = b.fire("fire4", pool3, 32, 128);
    let fire5 = b.fire("fire5", fire4, 32, 128);
    let pool5 = b.maxpool("maxpool5", fire5, 3, 2);
    let fire6 = b.fire("fire6", pool5, 48, 192);
    let fire7 = b.fire("fire7", fire6, 48, 192);
    let fire8 = b.fire("fire8", fire7, 64, 256);
    let fire9 = b.fire("fire9", fire8, 64, 256);
    let conv10 = b.conv("conv10", fire9, num_classes, 1, 1, 0, Activation::Linear);
    let gap = b.global_avgpool(conv10);
    b.softmax(gap);
    b.finish(num_classes)
}

/// Desk-scale seed preserving the squeeze/expand/late-downsample shape at
/// 32x32 resolution: conv1 3x3/1 x32, fire(8/32), maxpool/2, fire(16/64),
/// maxpool/2, fire(16/64), 1x1 classifier, global average pool, softmax.
pub fn build_squeezenet_mini(num_classes: u32, input_shape: (u32, u32, u32)) -> Result<ArchGraph> {
    check_classes(num_classes)?;
    let (mut b, input) = GraphBuilder::new("squeezenet-mini", input_shape);
    let conv1 = b.conv("conv1", input, 32, 3, 1, 1, Activation::Relu);
    let fire1 = b.fire("fire1", conv1, 8, 32);
    let pool1 = b.maxpool("maxpool1", fire1, 2, 2);
    let fire2 = b.fire("fire2", pool1, 16, 64);
    let pool2 = b.maxpool("maxpool2", fire2, 2, 2);
    let fire3 = b.fire("fire3", pool2, 16, 64);
    let conv10 = b.conv("conv10", fire3, num_classes, 1, 1, 0, Activation::Linear);
    let gap = b.global_avgpool(conv10);
    b.softmax(gap);
    b.finish(num_classes)
}

pub fn build_from_choice(
    arch: &str,
    num_classes: u32,
    input_shape: Option<(u32, u32, u32)>,
) -> Result<ArchGraph> {
    match arch {
        "squeezenet-v11" => build_squeezenet_v11(num_classes, input_shape.unwrap_or((3, 227, 227))),
        "squeezenet-mini" => build_squeezenet_mini(num_classes, input_shape.unwrap_or((3, 32, 32))),
        other => Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
    }
}

/// Replaces the classifier with a fresh, fully-live 1x1 conv producing
/// `new_classes` channels. Every other layer is untouched.
pub fn retarget_classes(arch: &ArchGraph, new_classes: u32) -> Result<ArchGraph> {
    check_classes(new_classes)?;
    arch.validate()?;
    let final_id = arch.final_conv_id();
    let mut out = arch.clone();
    for layer in &mut out.layers {
        if layer.id != final_id {
            continue;
        }
        layer.kind = LayerKind::Conv;
        layer.kernel = Some((1, 1));
        layer.stride = 1;
        layer.padding = 0;
        layer.out_channels = new_classes;
        layer.has_bias = true;
        layer.activation = Activation::Linear;
        out.masks.insert(final_id, Mask::all_live(new_classes, layer.in_channels, 1, 1));
    }
    out.num_classes = new_classes;
    // Downstream pool/softmax channel counts follow the classifier.
    let mut downstream = false;
    let mut prev_channels = new_classes;
    let ids: Vec<LayerId> = out.layers.iter().map(|l| l.id).collect();
    for id in ids {
        if id == final_id {
            downstream = true;
            continue;
        }
        if downstream {
            let layer = out.layers.iter_mut().find(|l| l.id == id).unwrap();
            layer.in_channels = prev_channels;
            layer.out_channels = prev_channels;
            prev_channels = layer.out_channels;
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::size_report;

    /// Exhaustive-loop parameter oracle: walks every weight tensor index
    /// instead of multiplying dimensions.
    fn brute_force_params(arch: &ArchGraph) -> u64 {
        let mut total = 0u64;
        for &id in &arch.conv_ids() {
            let layer = arch.layer(id);
            let (kh, kw) = layer.kernel.unwrap();
            for _o in 0..layer.out_channels {
                for _i in 0..layer.in_channels {
                    for _y in 0..kh {
                        for _x in 0..kw {
                            total += 1;
                        }
                    }
                }
            }
            if layer.has_bias {
                total += u64::from(layer.out_channels);
            }
        }
        total
    }

    #[test]
    fn v11_param_totals() {
        let arch = build_squeezenet_v11(1000, (3, 227, 227)).unwrap();
        let report = size_report(&arch).unwrap();
        assert_eq!(report.total_params, 1_235_496);
        assert_eq!(report.total_params, brute_force_params(&arch));
        assert_eq!(report.live_params, report.total_params);

        let arch10 = build_squeezenet_v11(10, (3, 227, 227)).unwrap();
        let report10 = size_report(&arch10).unwrap();
        assert_eq!(report10.total_params, 727_626);
        assert_eq!(report10.total_params, brute_force_params(&arch10));
    }

    #[test]
    fn v11_rejects_zero_classes() {
        assert!(matches!(
            build_squeezenet_v11(0, (3, 227, 227)),
            Err(Error::InvalidClassCount(_))
        ));
    }

    #[test]
    fn v11_rejects_tiny_input() {
        assert!(matches!(
            build_squeezenet_v11(10, (3, 8, 8)),
            Err(Error::ShapeUnderflow(_))
        ));
    }

    #[test]
    fn v11_final_feature_map_is_13x13_at_227() {
        let arch = build_squeezenet_v11(1000, (3, 227, 227)).unwrap();
        let shapes = arch.shapes().unwrap();
        let conv10 = arch.final_conv_id();
        assert_eq!(shapes[&conv10], (1000, 13, 13));
    }

    #[test]
    fn retarget_shrinks_classifier_only() {
        let arch = build_squeezenet_v11(1000, (3, 227, 227)).unwrap();
        let before = size_report(&arch).unwrap();
        let retargeted = retarget_classes(&arch, 10).unwrap();
        let after = size_report(&retargeted).unwrap();
        assert_eq!(before.total_params - after.total_params, 507_870);

        // All non-classifier per-layer entries are identical.
        let conv10 = arch.final_conv_id();
        for (a, b) in before.per_layer.iter().zip(after.per_layer.iter()) {
            if a.layer_id == conv10 {
                assert_eq!(a.total_params, 513_000);
                assert_eq!(b.total_params, 5_130);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn retarget_same_width_yields_identical_structure() {
        let arch = build_squeezenet_v11(1000, (3, 227, 227)).unwrap();
        let retargeted = retarget_classes(&arch, 1000).unwrap();
        assert_eq!(arch, retargeted);
    }

    #[test]
    fn classifier_share_at_1000_classes_exceeds_40_percent() {
        let arch = build_squeezenet_v11(1000, (3, 227, 227)).unwrap();
        let report = size_report(&arch).unwrap();
        let conv10 = arch.final_conv_id();
        let classifier: u64 = report
            .per_layer
            .iter()
            .filter(|l| l.layer_id == conv10)
            .map(|l| l.total_params)
            .sum();
        let share = classifier as f64 / report.total_params as f64;
        assert!(share >= 0.40, "classifier share {share:.4}");
        assert!((share - 0.415).abs() < 0.005, "classifier share {share:.4}");
    }

    #[test]
    fn mini_seed_is_valid_and_small() {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let report = size_report(&arch).unwrap();
        assert_eq!(report.total_params, brute_force_params(&arch));
        assert!(report.total_params < 50_000, "mini seed {}", report.total_params);
        let shapes = arch.shapes().unwrap();
        assert_eq!(shapes[&arch.final_conv_id()].1, 8);
    }

    #[test]
    fn random_layer_param_counts_match_enumeration() {
        // >= 20 randomized small conv configs against the exhaustive loop.
        use rand::Rng;
        let mut rng = crate::rng::substream(11, crate::rng::Stream::Synthesis, 0);
        for _ in 0..25 {
            let kh = rng.gen_range(1..=5);
            let kw = rng.gen_range(1..=5);
            let cin = rng.gen_range(1..=7);
            let cout = rng.gen_range(1..=7);
            let spec = LayerSpec {
                id: 1,
                name: "t".into(),
                kind: LayerKind::Conv,
                kernel: Some((kh, kw)),
                stride: 1,
                padding: 0,
                in_channels: cin,
                out_channels: cout,
                has_bias: true,
                activation: Activation::Relu,
            };
            let mut brute = 0u64;
            for _ in 0..cout {
                for _ in 0..cin {
                    for _ in 0..kh {
                        for _ in 0..kw {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(spec.weight_count(), brute);
        }
    }
}
