//! Synaptic probability models derived from a trained parent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::WeightStore;
use crate::error::{Error, Result};
use crate::graph::{ArchGraph, LayerId};

/// Floor applied to live-synapse probabilities so no live synapse becomes
/// unsampleable.
pub const PROB_FLOOR: f64 = 1e-3;

/// How per-synapse survival probabilities are derived from trained weights.
///
/// `LayerMax` normalizes each |w| by the layer's maximum |w|, so only the
/// strongest synapse reaches probability one and expected survival sits far
/// below the environmental factor. `Saturating` normalizes by kappa times
/// the layer's mean |w| and clamps at one, which saturates most trained
/// synapses at probability one and leaves the environmental factor as the
/// dominant starvation pressure across a long run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingModel {
    LayerMax,
    Saturating { kappa: f64 },
}

impl Default for EncodingModel {
    fn default() -> Self {
        EncodingModel::LayerMax
    }
}

/// Per-synapse survival probabilities with the exact shape of the parent's
/// masks. Dead parent synapses carry probability zero: heredity cannot
/// resurrect them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneticEncoding {
    pub parent_generation: u32,
    pub probs: BTreeMap<LayerId, Vec<f64>>,
}

impl GeneticEncoding {
    /// Probability one for every live parent synapse.
    pub fn all_live(parent: &ArchGraph) -> Self {
        Self::uniform(parent, 1.0)
    }

    /// The same probability for every live parent synapse.
    pub fn uniform(parent: &ArchGraph, p: f64) -> Self {
        let probs = parent
            .masks
            .iter()
            .map(|(&id, mask)| {
                (id, mask.bits.iter().map(|&b| if b { p } else { 0.0 }).collect())
            })
            .collect();
        GeneticEncoding { parent_generation: 0, probs }
    }

    pub fn shape_check(&self, parent: &ArchGraph) -> Result<()> {
        if self.probs.len() != parent.masks.len() {
            return Err(Error::ShapeMismatch(format!(
                "encoding covers {} layers, parent has {}",
                self.probs.len(),
                parent.masks.len()
            )));
        }
        for (&id, mask) in &parent.masks {
            let probs = self.probs.get(&id).ok_or_else(|| {
                Error::ShapeMismatch(format!("encoding missing layer {id}"))
            })?;
            if probs.len() != mask.len() {
                return Err(Error::ShapeMismatch(format!(
                    "encoding for layer {id} has {} entries, mask has {}",
                    probs.len(),
                    mask.len()
                )));
            }
        }
        Ok(())
    }

    /// Invariant check: probabilities in [0,1], dead synapses exactly zero,
    /// live synapses at least the floor.
    pub fn is_valid_for(&self, parent: &ArchGraph) -> bool {
        self.shape_check(parent).is_ok()
            && parent.masks.iter().all(|(id, mask)| {
                self.probs[id].iter().zip(mask.bits.iter()).all(|(&p, &live)| {
                    if live {
                        (PROB_FLOOR..=1.0).contains(&p)
                    } else {
                        p == 0.0
                    }
                })
            })
    }
}

/// Layer-max-normalized magnitude encoding:
/// p_i = clamp(|w_i| / max_L |w|, 1e-3, 1) for live synapses, 0 for dead.
pub fn derive_encoding(
    parent: &ArchGraph,
    parent_weights: &WeightStore<f32>,
) -> Result<GeneticEncoding> {
    derive_encoding_with(EncodingModel::LayerMax, parent, parent_weights, 0)
}

pub fn derive_encoding_with(
    model: EncodingModel,
    parent: &ArchGraph,
    parent_weights: &WeightStore<f32>,
    parent_generation: u32,
) -> Result<GeneticEncoding> {
    parent_weights.shape_check(parent)?;
    let mut probs = BTreeMap::new();
    for (&id, mask) in &parent.masks {
        let lw = parent_weights.layer(id);
        let live_mags: Vec<f64> = mask
            .bits
            .iter()
            .zip(lw.weights.iter())
            .filter(|(&live, _)| live)
            .map(|(_, &w)| f64::from(w.abs()))
            .collect();
        if live_mags.is_empty() {
            return Err(Error::AllDeadLayer(parent.layer(id).name.clone()));
        }
        let denom = match model {
            EncodingModel::LayerMax => live_mags.iter().cloned().fold(0.0, f64::max),
            EncodingModel::Saturating { kappa } => {
                kappa * live_mags.iter().sum::<f64>() / live_mags.len() as f64
            }
        };
        if denom <= 0.0 {
            return Err(Error::AllDeadLayer(format!(
                "{} (live weights carry no magnitude)",
                parent.layer(id).name
            )));
        }
        let layer_probs = mask
            .bits
            .iter()
            .zip(lw.weights.iter())
            .map(|(&live, &w)| {
                if live {
                    (f64::from(w.abs()) / denom).clamp(PROB_FLOOR, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        probs.insert(id, layer_probs);
    }
    Ok(GeneticEncoding { parent_generation, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_squeezenet_mini, Mask};

    fn tiny_parent() -> (ArchGraph, WeightStore<f32>) {
        // Reuse the accounting fixture: one conv layer, 3 weights.
        let arch = crate::graph::test_fixtures::single_conv_graph(3, 1, 1, 1, 0, (1, 1));
        let weights = WeightStore::zeros(&arch);
        (arch, weights)
    }

    #[test]
    fn magnitudes_normalize_to_layer_max() {
        let (arch, mut weights) = tiny_parent();
        weights.layers.get_mut(&1).unwrap().weights = vec![0.5, -1.0, 0.25];
        let enc = derive_encoding(&arch, &weights).unwrap();
        assert_eq!(enc.probs[&1], vec![0.5, 1.0, 0.25]);
        assert!(enc.is_valid_for(&arch));
    }

    #[test]
    fn dead_synapses_get_probability_zero() {
        let (mut arch, mut weights) = tiny_parent();
        weights.layers.get_mut(&1).unwrap().weights = vec![0.5, -1.0, 0.25];
        arch.masks.insert(1, Mask { out_channels: 1, in_channels: 3, kh: 1, kw: 1, bits: vec![true, false, true] });
        let enc = derive_encoding(&arch, &weights).unwrap();
        assert_eq!(enc.probs[&1], vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn equal_nonzero_weights_all_reach_one() {
        let (arch, mut weights) = tiny_parent();
        weights.layers.get_mut(&1).unwrap().weights = vec![-0.3, 0.3, 0.3];
        let enc = derive_encoding(&arch, &weights).unwrap();
        assert_eq!(enc.probs[&1], vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn tiny_magnitudes_hit_the_floor() {
        let (arch, mut weights) = tiny_parent();
        weights.layers.get_mut(&1).unwrap().weights = vec![1.0, 1e-9, 0.5];
        let enc = derive_encoding(&arch, &weights).unwrap();
        assert_eq!(enc.probs[&1][1], PROB_FLOOR);
    }

    #[test]
    fn all_dead_layer_is_an_error() {
        let (mut arch, weights) = tiny_parent();
        arch.masks.insert(1, Mask { out_channels: 1, in_channels: 3, kh: 1, kw: 1, bits: vec![false; 3] });
        assert!(matches!(
            derive_encoding(&arch, &weights),
            Err(Error::AllDeadLayer(_))
        ));
    }

    #[test]
    fn saturating_model_pushes_most_probabilities_to_one() {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let weights = crate::engine::WeightStore::init_he(
            &arch,
            &mut crate::rng::substream(5, crate::rng::Stream::WeightInit, 0),
        );
        let enc = derive_encoding_with(
            EncodingModel::Saturating { kappa: 0.5 },
            &arch,
            &weights,
            0,
        )
        .unwrap();
        let all: Vec<f64> = enc.probs.values().flatten().copied().collect();
        let at_one = all.iter().filter(|&&p| p == 1.0).count();
        assert!(at_one as f64 / all.len() as f64 > 0.6, "{at_one}/{}", all.len());
        assert!(enc.is_valid_for(&arch));
    }
}
