//! SGD-with-momentum training over seeded minibatch streams.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_stream, DataStore, Split, StreamOptions};
use crate::error::{Error, Result};
use crate::graph::ArchGraph;

use super::ops::{backward, ConvAlgo};
use super::weights::WeightStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f32,
    pub rng_seed: u64,
    pub hflip: bool,
    pub pad_crop: bool,
    pub conv_algo: ConvAlgo,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            lr_decay: 1.0,
            rng_seed: 0,
            hflip: true,
            pad_crop: false,
            conv_algo: ConvAlgo::Im2col,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightStore<f32>,
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains `init` on the store's train split. Dead positions stay exactly
/// zero through every step: their gradients are zeroed by `backward` and the
/// updated weights are re-masked after each update. With a fixed config and
/// seed the result is bit-identical across runs and worker counts.
pub fn train(
    arch: &ArchGraph,
    init: WeightStore<f32>,
    store: &DataStore,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut weights = init;
    weights.shape_check(arch)?;
    weights.apply_mask(arch);
    let mut velocity = WeightStore::<f32>::zeros(arch);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs as usize);

    let mut log = match log_path {
        Some(path) => {
            let fresh = !path.exists();
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(file, "epoch,mean_loss,lr")?;
            }
            Some(file)
        }
        None => None,
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let stream = make_stream(
            store,
            Split::Train,
            StreamOptions {
                batch_size: cfg.batch_size as usize,
                seed: cfg.rng_seed,
                epoch: u64::from(epoch),
                shuffle: true,
                hflip: cfg.hflip,
                pad_crop: cfg.pad_crop,
            },
        )?;
        let mut loss_sum = 0.0;
        let mut samples = 0usize;
        for (batch, labels) in stream {
            let n = labels.len();
            let (grads, loss) = backward(arch, &weights, &batch, &labels, cfg.conv_algo)?;
            for (id, v) in velocity.layers.iter_mut() {
                let g = grads.layer(*id);
                let w = weights.layers.get_mut(id).unwrap();
                for ((vi, &gi), wi) in
                    v.weights.iter_mut().zip(g.weights.iter()).zip(w.weights.iter_mut())
                {
                    *vi = cfg.momentum * *vi + gi;
                    *wi -= lr * *vi;
                }
                for ((vi, &gi), wi) in v.bias.iter_mut().zip(g.bias.iter()).zip(w.bias.iter_mut()) {
                    *vi = cfg.momentum * *vi + gi;
                    *wi -= lr * *vi;
                }
            }
            weights.apply_mask(arch);
            loss_sum += loss * n as f64;
            samples += n;
        }
        let mean_loss = loss_sum / samples as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NumericOverflow(format!("epoch {epoch} loss diverged")));
        }
        if let Some(file) = log.as_mut() {
            writeln!(file, "{epoch},{mean_loss:.6},{lr:.6}")?;
        }
        epoch_losses.push(mean_loss);
    }
    weights.check_finite()?;
    Ok(TrainOutcome { weights, epoch_losses })
}
