//! Stochastic synthesis of offspring architectures.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::WeightStore;
use crate::error::{Error, Result};
use crate::graph::{compact_with_map, propagate_dead_channels, ArchGraph, LayerId, Mask};
use crate::rng::{substream, Stream};

use super::encoding::GeneticEncoding;
use super::env::EnvironmentConfig;

#[derive(Debug, Clone)]
pub struct Offspring {
    pub arch: ArchGraph,
    /// Surviving parent weights remapped onto the compacted graph.
    pub weights: WeightStore<f32>,
}

/// Instrumentation for the sampling step: the exact per-synapse thresholds
/// compared against the uniform draws (encoding times environmental factor),
/// and the accepted masks before dead-channel propagation and compaction.
#[derive(Debug, Clone)]
pub struct SynthesisTrace {
    pub thresholds: BTreeMap<LayerId, Vec<f64>>,
    pub sampled_masks: BTreeMap<LayerId, Mask>,
}

/// Draws each synapse independently: survive with probability p_i * R, never
/// resurrecting dead parent synapses. Resamples when a layer would fall
/// below the filter floor or a classifier filter would die; compaction then
/// shrinks the surviving structure. The offspring inherits the parent's
/// surviving weight values.
pub fn synthesize_offspring(
    enc: &GeneticEncoding,
    env: &EnvironmentConfig,
    parent: &ArchGraph,
    parent_weights: &WeightStore<f32>,
) -> Result<Offspring> {
    let mut rng = substream(env.rng_seed, Stream::Synthesis, u64::from(enc.parent_generation) + 1);
    synthesize_with_rng(enc, env, parent, parent_weights, &mut rng).map(|(o, _)| o)
}

pub fn synthesize_offspring_traced(
    enc: &GeneticEncoding,
    env: &EnvironmentConfig,
    parent: &ArchGraph,
    parent_weights: &WeightStore<f32>,
) -> Result<(Offspring, SynthesisTrace)> {
    let mut rng = substream(env.rng_seed, Stream::Synthesis, u64::from(enc.parent_generation) + 1);
    synthesize_with_rng(enc, env, parent, parent_weights, &mut rng)
}

pub(crate) fn synthesize_with_rng(
    enc: &GeneticEncoding,
    env: &EnvironmentConfig,
    parent: &ArchGraph,
    parent_weights: &WeightStore<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<(Offspring, SynthesisTrace)> {
    env.validate()?;
    parent.validate()?;
    enc.shape_check(parent)?;
    parent_weights.shape_check(parent)?;

    let thresholds: BTreeMap<LayerId, Vec<f64>> = enc
        .probs
        .iter()
        .map(|(&id, probs)| (id, probs.iter().map(|p| p * env.r).collect()))
        .collect();
    let classifier = parent.final_conv_id();

    let mut last_reason = String::new();
    for _attempt in 0..env.max_resample_attempts {
        // Bernoulli draw per parent-live synapse, in layer-id then OIHW
        // order so a fixed seed fixes the outcome.
        let mut candidate = parent.clone();
        for (&id, mask) in candidate.masks.iter_mut() {
            let t = &thresholds[&id];
            for (bit, &threshold) in mask.bits.iter_mut().zip(t.iter()) {
                if *bit {
                    *bit = rng.gen::<f64>() < threshold;
                }
            }
        }
        let sampled_masks = candidate.masks.clone();
        let propagated = propagate_dead_channels(&candidate);

        let mut ok = true;
        for &id in &propagated.conv_ids() {
            let mask = propagated.mask(id);
            let floor = env.min_filters_per_layer.min(mask.out_channels);
            if mask.live_filters() < floor {
                last_reason = format!(
                    "layer {} kept {} of the required {} filters",
                    propagated.layer(id).name,
                    mask.live_filters(),
                    floor
                );
                ok = false;
                break;
            }
        }
        if ok {
            let mask = propagated.mask(classifier);
            for f in 0..mask.out_channels {
                if !mask.filter_is_live(f) {
                    last_reason = format!("classifier filter {f} lost all synapses");
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let compaction = compact_with_map(&propagated)?;
        let mut weights = parent_weights.clone();
        weights.apply_mask(&propagated);
        let weights = weights.compacted(&propagated, &compaction);
        let offspring = Offspring { arch: compaction.graph, weights };
        let trace = SynthesisTrace { thresholds, sampled_masks };
        return Ok((offspring, trace));
    }
    Err(Error::DegenerateArchitecture(format!(
        "{} resample attempts exhausted; last failure: {last_reason}",
        env.max_resample_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::WeightStore;
    use crate::graph::build_squeezenet_mini;
    use crate::rng::{substream, Stream};

    fn parent_with_weights() -> (ArchGraph, WeightStore<f32>) {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let weights = WeightStore::init_he(&arch, &mut substream(21, Stream::WeightInit, 0));
        (arch, weights)
    }

    #[test]
    fn identity_case_reproduces_the_parent() {
        let (arch, weights) = parent_with_weights();
        let enc = GeneticEncoding::all_live(&arch);
        let env = EnvironmentConfig { r: 1.0, rng_seed: 5, ..Default::default() };
        let off = synthesize_offspring(&enc, &env, &arch, &weights).unwrap();
        assert_eq!(off.arch, arch);
        assert_eq!(off.weights, weights);
    }

    #[test]
    fn r_above_one_is_rejected() {
        let (arch, weights) = parent_with_weights();
        let enc = GeneticEncoding::all_live(&arch);
        let env = EnvironmentConfig { r: 1.5, ..Default::default() };
        assert!(matches!(
            synthesize_offspring(&enc, &env, &arch, &weights),
            Err(Error::InvalidEnvironmentFactor(_))
        ));
    }

    #[test]
    fn survival_counts_stay_within_binomial_bounds() {
        // All p = 1, R = 0.5 over the mini seed's ~28k synapses: expect
        // mean p*R with 3-sigma slack.
        let (arch, weights) = parent_with_weights();
        let total: u64 = arch.masks.values().map(|m| m.live_count()).sum();
        assert!(total > 10_000);
        let enc = GeneticEncoding::all_live(&arch);
        let env = EnvironmentConfig {
            r: 0.5,
            rng_seed: 77,
            min_filters_per_layer: 1,
            max_resample_attempts: 50,
            ..Default::default()
        };
        let (off, trace) = synthesize_offspring_traced(&enc, &env, &arch, &weights).unwrap();
        let survived: u64 = trace.sampled_masks.values().map(|m| m.live_count()).sum();
        let expect = total as f64 * 0.5;
        let sigma = (total as f64 * 0.5 * 0.5).sqrt();
        assert!(
            (survived as f64 - expect).abs() < 3.0 * sigma,
            "survived {survived} vs {expect} +- {sigma}"
        );
        assert!(off.arch.live_params() <= arch.live_params());
    }

    #[test]
    fn thresholds_are_encoding_times_r() {
        let (arch, weights) = parent_with_weights();
        let enc = super::super::encoding::derive_encoding(&arch, &weights).unwrap();
        let env = EnvironmentConfig { r: 0.7, rng_seed: 3, max_resample_attempts: 50, ..Default::default() };
        let (_, trace) = synthesize_offspring_traced(&enc, &env, &arch, &weights).unwrap();
        for (id, probs) in &enc.probs {
            for (t, p) in trace.thresholds[id].iter().zip(probs.iter()) {
                assert_eq!(*t, p * 0.7);
            }
        }
    }

    #[test]
    fn offspring_masks_are_subsets_of_the_parent() {
        let (arch, weights) = parent_with_weights();
        let enc = GeneticEncoding::uniform(&arch, 0.8);
        let env = EnvironmentConfig { r: 0.9, rng_seed: 9, max_resample_attempts: 50, ..Default::default() };
        let (_, trace) = synthesize_offspring_traced(&enc, &env, &arch, &weights).unwrap();
        for (id, mask) in &trace.sampled_masks {
            for (child, parent_bit) in mask.bits.iter().zip(arch.mask(*id).bits.iter()) {
                assert!(!child | parent_bit, "resurrected synapse in layer {id}");
            }
        }
    }

    #[test]
    fn surviving_weights_are_inherited() {
        let (arch, weights) = parent_with_weights();
        let enc = GeneticEncoding::uniform(&arch, 0.9);
        let env = EnvironmentConfig { r: 1.0, rng_seed: 11, max_resample_attempts: 50, ..Default::default() };
        let (off, trace) = synthesize_offspring_traced(&enc, &env, &arch, &weights).unwrap();
        // Spot-check: every live offspring weight appears among the parent's
        // values for that layer.
        for (&id, lw) in &off.weights.layers {
            let mask = off.arch.mask(id);
            let parent_vals = &weights.layer(id).weights;
            for (v, &live) in lw.weights.iter().zip(mask.bits.iter()) {
                if live {
                    assert!(parent_vals.contains(v));
                }
            }
        }
        drop(trace);
    }

    #[test]
    fn impossible_floor_exhausts_resamples() {
        let (arch, weights) = parent_with_weights();
        // Probability floor everywhere: candidates lose nearly everything.
        let enc = GeneticEncoding::uniform(&arch, 1e-3);
        let env = EnvironmentConfig {
            r: 0.5,
            rng_seed: 13,
            min_filters_per_layer: 8,
            max_resample_attempts: 3,
            ..Default::default()
        };
        assert!(matches!(
            synthesize_offspring(&enc, &env, &arch, &weights),
            Err(Error::DegenerateArchitecture(_))
        ));
    }
}
