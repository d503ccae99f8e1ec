//! Seeded minibatch streams with optional train-time augmentation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::TensorBuffer;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

use super::cifar::{DataStore, SplitData};
use super::manifest::Normalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StreamOptions {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
    pub shuffle: bool,
    pub hflip: bool,
    pub pad_crop: bool,
}

/// Iterator over (normalized image batch, label) pairs. Epoch order and all
/// augmentation draws are pure functions of (seed, epoch, original sample
/// index), so the stream replays identically regardless of batch size or
/// worker count.
pub struct LabeledBatchStream<'a> {
    split: &'a SplitData,
    shape: (usize, usize, usize),
    normalization: Normalization,
    order: Vec<usize>,
    cursor: usize,
    opts: StreamOptions,
}

pub fn make_stream<'a>(
    store: &'a DataStore,
    split: Split,
    opts: StreamOptions,
) -> Result<LabeledBatchStream<'a>> {
    let data = match split {
        Split::Train => &store.train,
        Split::Test => &store.test,
    };
    if data.is_empty() {
        return Err(Error::EmptySplit(split.name().to_string()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if opts.shuffle {
        let mut rng = substream(opts.seed, Stream::Shuffle, opts.epoch);
        order.shuffle(&mut rng);
    }
    Ok(LabeledBatchStream {
        split: data,
        shape: (
            store.input_shape.0 as usize,
            store.input_shape.1 as usize,
            store.input_shape.2 as usize,
        ),
        normalization: store.normalization.clone(),
        order,
        cursor: 0,
        opts,
    })
}

/// Mirrors each row in place: planar layout, per channel.
fn hflip_planar(pixels: &mut [u8], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w;
            pixels[row..row + w].reverse();
        }
    }
}

/// Zero-pads by `pad` on every side and crops back to h x w at (dy, dx).
fn pad_crop_planar(pixels: &[u8], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<u8> {
    let mut out = vec![0u8; pixels.len()];
    for ch in 0..c {
        for y in 0..h {
            let src_y = y as isize + dy as isize - pad as isize;
            if src_y < 0 || src_y >= h as isize {
                continue;
            }
            for x in 0..w {
                let src_x = x as isize + dx as isize - pad as isize;
                if src_x < 0 || src_x >= w as isize {
                    continue;
                }
                out[ch * h * w + y * w + x] =
                    pixels[ch * h * w + src_y as usize * w + src_x as usize];
            }
        }
    }
    out
}

impl LabeledBatchStream<'_> {
    fn assemble(&self, indices: &[usize]) -> (TensorBuffer<f32>, Vec<u32>) {
        let (c, h, w) = self.shape;
        let plane = h * w;
        let mut data = Vec::with_capacity(indices.len() * c * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            let mut pixels = self.split.sample(idx).to_vec();
            if self.opts.hflip || self.opts.pad_crop {
                let mut rng =
                    substream(self.opts.seed, Stream::Augment, (self.opts.epoch << 32) | idx as u64);
                if self.opts.hflip && rng.gen::<bool>() {
                    hflip_planar(&mut pixels, c, h, w);
                }
                if self.opts.pad_crop {
                    let pad = 4usize;
                    let dy = rng.gen_range(0..=2 * pad);
                    let dx = rng.gen_range(0..=2 * pad);
                    pixels = pad_crop_planar(&pixels, c, h, w, pad, dy, dx);
                }
            }
            for ch in 0..c {
                let mean = self.normalization.mean[ch.min(2)];
                let std = self.normalization.std[ch.min(2)];
                for &p in &pixels[ch * plane..(ch + 1) * plane] {
                    data.push((f32::from(p) / 255.0 - mean) / std);
                }
            }
            labels.push(self.split.labels[idx]);
        }
        let batch = TensorBuffer { dims: vec![indices.len(), c, h, w], data };
        (batch, labels)
    }
}

impl Iterator for LabeledBatchStream<'_> {
    type Item = (TensorBuffer<f32>, Vec<u32>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.opts.batch_size).min(self.order.len());
        let indices: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.assemble(&indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cifar::CIFAR_PIXELS;
    use crate::data::manifest::Normalization;

    fn toy_store(n: usize) -> DataStore {
        let mut train = SplitData::empty(CIFAR_PIXELS);
        for i in 0..n {
            let mut px = vec![0u8; CIFAR_PIXELS];
            for (j, p) in px.iter_mut().enumerate() {
                *p = ((i * 13 + j) % 256) as u8;
            }
            train.pixels.extend_from_slice(&px);
            train.labels.push((i % 10) as u32);
        }
        DataStore {
            train,
            test: SplitData::empty(CIFAR_PIXELS),
            input_shape: (3, 32, 32),
            num_classes: 10,
            normalization: Normalization { mean: [0.5; 3], std: [0.25; 3] },
        }
    }

    fn opts(batch: usize) -> StreamOptions {
        StreamOptions { batch_size: batch, seed: 7, epoch: 0, shuffle: true, hflip: false, pad_crop: false }
    }

    #[test]
    fn batch_sizes_include_final_short_batch() {
        let store = toy_store(100);
        let sizes: Vec<usize> =
            make_stream(&store, Split::Train, opts(32)).unwrap().map(|(b, _)| b.dims[0]).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn same_seed_same_order() {
        let store = toy_store(64);
        let a: Vec<Vec<u32>> =
            make_stream(&store, Split::Train, opts(16)).unwrap().map(|(_, l)| l).collect();
        let b: Vec<Vec<u32>> =
            make_stream(&store, Split::Train, opts(16)).unwrap().map(|(_, l)| l).collect();
        assert_eq!(a, b);
        let mut other = opts(16);
        other.epoch = 1;
        let c: Vec<Vec<u32>> =
            make_stream(&store, Split::Train, other).unwrap().map(|(_, l)| l).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_split_is_an_error() {
        let store = toy_store(4);
        assert!(matches!(
            make_stream(&store, Split::Test, opts(8)),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn hflip_matches_precomputed_mirror() {
        // Asymmetric fixture: pixel value encodes its column index.
        let (c, h, w) = (3usize, 4usize, 5usize);
        let mut px = vec![0u8; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    px[ch * h * w + y * w + x] = (10 * ch + x) as u8;
                }
            }
        }
        let mut flipped = px.clone();
        hflip_planar(&mut flipped, c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(
                        flipped[ch * h * w + y * w + x],
                        px[ch * h * w + y * w + (w - 1 - x)]
                    );
                }
            }
        }
    }

    #[test]
    fn pad_crop_centered_is_identity() {
        let (c, h, w) = (3usize, 6usize, 6usize);
        let px: Vec<u8> = (0..c * h * w).map(|i| (i % 251) as u8).collect();
        let out = pad_crop_planar(&px, c, h, w, 4, 4, 4);
        assert_eq!(px, out);
        // A shifted crop moves pixels and zero-fills the vacated border.
        let shifted = pad_crop_planar(&px, c, h, w, 4, 0, 4);
        assert_eq!(shifted[4 * w], px[0]);
        assert_eq!(shifted[0], 0);
    }

    #[test]
    fn normalization_is_applied_per_channel() {
        let store = toy_store(2);
        let (batch, _) = make_stream(&store, Split::Train, opts(2)).unwrap().next().unwrap();
        let raw = f32::from(store.train.sample(store_order_first(&store)) [0]) / 255.0;
        let expect = (raw - 0.5) / 0.25;
        assert!((batch.data[0] - expect).abs() < 1e-6);
    }

    fn store_order_first(store: &DataStore) -> usize {
        // Recompute the shuffle the stream used.
        let mut order: Vec<usize> = (0..store.train.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut crate::rng::substream(7, crate::rng::Stream::Shuffle, 0));
        order[0]
    }
}
