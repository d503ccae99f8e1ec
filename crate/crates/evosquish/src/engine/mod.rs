//! Deterministic numeric kernel: masked convolution forward/backward,
//! pooling, softmax cross-entropy, SGD training, evaluation and throughput
//! measurement.

mod bench;
mod eval;
mod ops;
mod tensor;
mod train;
mod weights;

pub use bench::{benchmark_throughput, DEFAULT_BENCH_BATCH};
pub use eval::{argmax_row, evaluate_top1, top1_from_scores};
pub use ops::{backward, forward, ConvAlgo};
pub use tensor::{Real, TensorBuffer};
pub use train::{train, TrainConfig, TrainOutcome};
pub use weights::{LayerWeights, WeightStore};

#[cfg(test)]
pub(crate) use ops::{backward_sample, forward_sample, Plan};
