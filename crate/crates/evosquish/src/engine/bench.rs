//! Wall-clock inference throughput measurement.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::ArchGraph;
use crate::rng::{substream, Stream};

use super::ops::{forward, ConvAlgo};
use super::tensor::TensorBuffer;
use super::weights::WeightStore;

pub const DEFAULT_BENCH_BATCH: u32 = 32;

/// Repeated timed forward passes after three warm-up batches; reports total
/// images over elapsed wall time. A zero duration still times one batch.
pub fn benchmark_throughput(
    arch: &ArchGraph,
    weights: &WeightStore<f32>,
    batch_size: u32,
    duration_sec: f64,
    algo: ConvAlgo,
    seed: u64,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("bench batch size must be >= 1".into()));
    }
    let (c, h, w) = arch.input_shape;
    let mut rng = substream(seed, Stream::Bench, 0);
    let len = batch_size as usize * (c * h * w) as usize;
    let data: Vec<f32> = (0..len).map(|_| rng.gen::<f32>()).collect();
    let batch =
        TensorBuffer::new(vec![batch_size as usize, c as usize, h as usize, w as usize], data)?;

    for _ in 0..3 {
        forward(arch, weights, &batch, algo)?;
    }
    let start = Instant::now();
    let mut batches = 0u64;
    loop {
        forward(arch, weights, &batch, algo)?;
        batches += 1;
        if start.elapsed().as_secs_f64() >= duration_sec {
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64().max(1e-9);
    Ok((batches * u64::from(batch_size)) as f64 / elapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::WeightStore;
    use crate::graph::build_squeezenet_mini;

    #[test]
    fn throughput_is_positive_even_at_zero_duration() {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let weights =
            WeightStore::init_he(&arch, &mut substream(3, Stream::WeightInit, 0));
        let ips =
            benchmark_throughput(&arch, &weights, 4, 0.0, ConvAlgo::Im2col, 1).unwrap();
        assert!(ips > 0.0);
    }

    #[test]
    fn zero_batch_is_rejected() {
        let arch = build_squeezenet_mini(10, (3, 32, 32)).unwrap();
        let weights =
            WeightStore::init_he(&arch, &mut substream(3, Stream::WeightInit, 0));
        assert!(benchmark_throughput(&arch, &weights, 0, 0.0, ConvAlgo::Im2col, 1).is_err());
    }
}
