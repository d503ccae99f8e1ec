//! Top-1 accuracy evaluation.

use crate::data::{make_stream, DataStore, Split, StreamOptions};
use crate::error::{Error, Result};
use crate::graph::ArchGraph;

use super::ops::{forward, ConvAlgo};
use super::tensor::{Real, TensorBuffer};
use super::weights::WeightStore;

/// Index of the row maximum; ties resolve to the lowest class index because
/// only a strictly greater score displaces the running best.
pub fn argmax_row<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn top1_from_scores<T: Real>(scores: &TensorBuffer<T>, labels: &[u32]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = scores.dims[1];
    let mut hits = 0usize;
    for (s, &label) in labels.iter().enumerate() {
        let row = &scores.data[s * classes..(s + 1) * classes];
        if argmax_row(row) == label as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn evaluate_top1(
    arch: &ArchGraph,
    weights: &WeightStore<f32>,
    store: &DataStore,
    split: Split,
    algo: ConvAlgo,
) -> Result<f64> {
    let stream = make_stream(
        store,
        split,
        StreamOptions {
            batch_size: 256,
            seed: 0,
            epoch: 0,
            shuffle: false,
            hflip: false,
            pad_crop: false,
        },
    )
    .map_err(|e| match e {
        Error::EmptySplit(_) => Error::EmptyDataset,
        other => other,
    })?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (batch, labels) in stream {
        let probs = forward(arch, weights, &batch, algo)?;
        let classes = probs.dims[1];
        for (s, &label) in labels.iter().enumerate() {
            if argmax_row(&probs.data[s * classes..(s + 1) * classes]) == label as usize {
                hits += 1;
            }
        }
        total += labels.len();
    }
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(hits as f64 / total as f64)
}
