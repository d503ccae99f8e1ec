//! Forward and backward kernels over the layer graph.
//!
//! Convolution runs either as a direct loop or as explicit patch-matrix
//! multiplication (`ConvAlgo`); both are checked against the same
//! brute-force oracles. Accumulation happens in the scalar type of the
//! store (f32 in production, f64 in shadow-precision tests) with a fixed
//! summation order, so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Activation, ArchGraph, LayerId, LayerKind};

use super::tensor::{Real, TensorBuffer};
use super::weights::{LayerWeights, WeightStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConvAlgo {
    Direct,
    #[default]
    Im2col,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerPlan {
    pub id: LayerId,
    pub kind: LayerKind,
    pub activation: Activation,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    pub ih: usize,
    pub iw: usize,
    pub oh: usize,
    pub ow: usize,
    pub has_bias: bool,
    /// Positions (indices into the plan) of this layer's predecessors.
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub layers: Vec<LayerPlan>,
    pub num_classes: usize,
    pub softmax_pos: usize,
}

impl Plan {
    pub fn new(arch: &ArchGraph) -> Result<Plan> {
        arch.validate()?;
        let shapes = arch.shapes()?;
        let pos_of = |id: LayerId| arch.layers.iter().position(|l| l.id == id).unwrap();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for layer in &arch.layers {
            let (kh, kw) = layer.kernel.map(|(a, b)| (a as usize, b as usize)).unwrap_or((0, 0));
            let (ih, iw) = match arch.preds_of(layer.id).first() {
                Some(&p) => {
                    let (_, h, w) = shapes[&p];
                    (h as usize, w as usize)
                }
                None => (arch.input_shape.1 as usize, arch.input_shape.2 as usize),
            };
            let (_, oh, ow) = shapes[&layer.id];
            layers.push(LayerPlan {
                id: layer.id,
                kind: layer.kind,
                activation: layer.activation,
                kh,
                kw,
                stride: layer.stride as usize,
                pad: layer.padding as usize,
                cin: layer.in_channels as usize,
                cout: layer.out_channels as usize,
                ih,
                iw,
                oh: oh as usize,
                ow: ow as usize,
                has_bias: layer.has_bias,
                preds: arch.preds_of(layer.id).iter().map(|&p| pos_of(p)).collect(),
            });
        }
        let softmax_pos = layers.iter().position(|l| l.kind == LayerKind::Softmax).unwrap();
        let sm = &layers[softmax_pos];
        if sm.oh != 1 || sm.ow != 1 {
            return Err(Error::ShapeMismatch("softmax sink must see a 1x1 feature map".into()));
        }
        Ok(Plan { layers, num_classes: arch.num_classes as usize, softmax_pos })
    }
}

/// Eight-lane dot product with a fixed combine order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for j in 0..8 {
            acc[j] = acc[j] + a[base + j] * b[base + j];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..a.len() {
        tail = tail + a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi = *yi + a * *xi;
    }
}

/// Gathers zero-padded patches: one row of cin*kh*kw values per output
/// position, matching the OIHW weight layout.
fn im2col<T: Real>(p: &LayerPlan, input: &[T], patches: &mut Vec<T>) {
    let k = p.cin * p.kh * p.kw;
    patches.clear();
    patches.resize(p.oh * p.ow * k, T::zero());
    for oy in 0..p.oh {
        for ox in 0..p.ow {
            let row = (oy * p.ow + ox) * k;
            for i in 0..p.cin {
                let ibase = i * p.ih * p.iw;
                for ky in 0..p.kh {
                    let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                    if iy < 0 || iy >= p.ih as isize {
                        continue;
                    }
                    let irow = ibase + iy as usize * p.iw;
                    let prow = row + (i * p.kh + ky) * p.kw;
                    for kx in 0..p.kw {
                        let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                        if ix < 0 || ix >= p.iw as isize {
                            continue;
                        }
                        patches[prow + kx] = input[irow + ix as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch-space gradients back into image space.
fn col2im_add<T: Real>(p: &LayerPlan, dpatches: &[T], dinput: &mut [T]) {
    let k = p.cin * p.kh * p.kw;
    for oy in 0..p.oh {
        for ox in 0..p.ow {
            let row = (oy * p.ow + ox) * k;
            for i in 0..p.cin {
                let ibase = i * p.ih * p.iw;
                for ky in 0..p.kh {
                    let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                    if iy < 0 || iy >= p.ih as isize {
                        continue;
                    }
                    let irow = ibase + iy as usize * p.iw;
                    let prow = row + (i * p.kh + ky) * p.kw;
                    for kx in 0..p.kw {
                        let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                        if ix < 0 || ix >= p.iw as isize {
                            continue;
                        }
                        dinput[irow + ix as usize] = dinput[irow + ix as usize] + dpatches[prow + kx];
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(
    p: &LayerPlan,
    lw: &LayerWeights<T>,
    input: &[T],
    out: &mut [T],
    algo: ConvAlgo,
    patches: &mut Vec<T>,
) {
    let k = p.cin * p.kh * p.kw;
    match algo {
        ConvAlgo::Im2col => {
            im2col(p, input, patches);
            for o in 0..p.cout {
                let wrow = &lw.weights[o * k..(o + 1) * k];
                let bias = if p.has_bias { lw.bias[o] } else { T::zero() };
                let obase = o * p.oh * p.ow;
                for pos in 0..p.oh * p.ow {
                    out[obase + pos] = dot(wrow, &patches[pos * k..(pos + 1) * k]) + bias;
                }
            }
        }
        ConvAlgo::Direct => {
            for o in 0..p.cout {
                let wbase = o * k;
                let bias = if p.has_bias { lw.bias[o] } else { T::zero() };
                for oy in 0..p.oh {
                    for ox in 0..p.ow {
                        let mut acc = bias;
                        for i in 0..p.cin {
                            let ibase = i * p.ih * p.iw;
                            let wrow = wbase + (i * p.kh) * p.kw;
                            for ky in 0..p.kh {
                                let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                                if iy < 0 || iy >= p.ih as isize {
                                    continue;
                                }
                                let irow = ibase + iy as usize * p.iw;
                                for kx in 0..p.kw {
                                    let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                                    if ix < 0 || ix >= p.iw as isize {
                                        continue;
                                    }
                                    acc = acc
                                        + lw.weights[wrow + ky * p.kw + kx] * input[irow + ix as usize];
                                }
                            }
                        }
                        out[(o * p.oh + oy) * p.ow + ox] = acc;
                    }
                }
            }
        }
    }
    if p.activation == Activation::Relu {
        for v in out.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    p: &LayerPlan,
    lw: &LayerWeights<T>,
    input: &[T],
    output: &[T],
    dout: &[T],
    dw: &mut LayerWeights<T>,
    dinput: &mut [T],
    algo: ConvAlgo,
    patches: &mut Vec<T>,
    dpatches: &mut Vec<T>,
) {
    let k = p.cin * p.kh * p.kw;
    let positions = p.oh * p.ow;
    // ReLU gate; for the linear classifier dpre == dout.
    let mut dpre = dout.to_vec();
    if p.activation == Activation::Relu {
        for (g, &post) in dpre.iter_mut().zip(output.iter()) {
            if post <= T::zero() {
                *g = T::zero();
            }
        }
    }
    for o in 0..p.cout {
        let obase = o * positions;
        let mut db = T::zero();
        for pos in 0..positions {
            db = db + dpre[obase + pos];
        }
        dw.bias[o] = dw.bias[o] + db;
    }
    match algo {
        ConvAlgo::Im2col => {
            im2col(p, input, patches);
            for o in 0..p.cout {
                let obase = o * positions;
                let drow = &mut dw.weights[o * k..(o + 1) * k];
                for pos in 0..positions {
                    let g = dpre[obase + pos];
                    if g != T::zero() {
                        axpy(drow, g, &patches[pos * k..(pos + 1) * k]);
                    }
                }
            }
            dpatches.clear();
            dpatches.resize(positions * k, T::zero());
            for pos in 0..positions {
                let prow = &mut dpatches[pos * k..(pos + 1) * k];
                for o in 0..p.cout {
                    let g = dpre[o * positions + pos];
                    if g != T::zero() {
                        axpy(prow, g, &lw.weights[o * k..(o + 1) * k]);
                    }
                }
            }
            col2im_add(p, dpatches, dinput);
        }
        ConvAlgo::Direct => {
            for o in 0..p.cout {
                let wbase = o * k;
                for oy in 0..p.oh {
                    for ox in 0..p.ow {
                        let g = dpre[(o * p.oh + oy) * p.ow + ox];
                        if g == T::zero() {
                            continue;
                        }
                        for i in 0..p.cin {
                            let ibase = i * p.ih * p.iw;
                            let wrow = wbase + (i * p.kh) * p.kw;
                            for ky in 0..p.kh {
                                let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                                if iy < 0 || iy >= p.ih as isize {
                                    continue;
                                }
                                let irow = ibase + iy as usize * p.iw;
                                for kx in 0..p.kw {
                                    let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                                    if ix < 0 || ix >= p.iw as isize {
                                        continue;
                                    }
                                    let widx = wrow + ky * p.kw + kx;
                                    let iidx = irow + ix as usize;
                                    dw.weights[widx] = dw.weights[widx] + g * input[iidx];
                                    dinput[iidx] = dinput[iidx] + g * lw.weights[widx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Window scan order is fixed (ky, then kx ascending) and strict comparison
/// keeps the first maximum, so ties resolve to the lowest input index.
fn maxpool_arg<T: Real>(p: &LayerPlan, input: &[T], c: usize, oy: usize, ox: usize) -> usize {
    let ibase = c * p.ih * p.iw;
    let mut best_idx = usize::MAX;
    let mut best = T::neg_infinity();
    for ky in 0..p.kh {
        let iy = (oy * p.stride + ky) as isize - p.pad as isize;
        if iy < 0 || iy >= p.ih as isize {
            continue;
        }
        for kx in 0..p.kw {
            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
            if ix < 0 || ix >= p.iw as isize {
                continue;
            }
            let idx = ibase + iy as usize * p.iw + ix as usize;
            if input[idx] > best {
                best = input[idx];
                best_idx = idx;
            }
        }
    }
    best_idx
}

fn maxpool_forward<T: Real>(p: &LayerPlan, input: &[T], out: &mut [T]) {
    for c in 0..p.cout {
        for oy in 0..p.oh {
            for ox in 0..p.ow {
                let idx = maxpool_arg(p, input, c, oy, ox);
                out[(c * p.oh + oy) * p.ow + ox] = input[idx];
            }
        }
    }
}

fn softmax_channels<T: Real>(c: usize, input: &[T], out: &mut [T]) {
    let mut max = T::neg_infinity();
    for &v in input.iter().take(c) {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for i in 0..c {
        let e = (input[i] - max).exp();
        out[i] = e;
        sum = sum + e;
    }
    for v in out.iter_mut().take(c) {
        *v = *v / sum;
    }
}

/// Activations for every layer of one sample, in plan order.
pub(crate) fn forward_sample<T: Real>(
    plan: &Plan,
    weights: &WeightStore<T>,
    input: &[T],
    algo: ConvAlgo,
) -> Vec<Vec<T>> {
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(plan.layers.len());
    let mut patches: Vec<T> = Vec::new();
    for p in &plan.layers {
        let out_len = p.cout * p.oh * p.ow;
        let mut out = vec![T::zero(); out_len];
        match p.kind {
            LayerKind::Input => out.copy_from_slice(input),
            LayerKind::Conv => {
                let src = &acts[p.preds[0]];
                conv_forward(p, weights.layer(p.id), src, &mut out, algo, &mut patches);
            }
            LayerKind::Maxpool => maxpool_forward(p, &acts[p.preds[0]], &mut out),
            LayerKind::GlobalAvgpool => {
                let src = &acts[p.preds[0]];
                let area = p.ih * p.iw;
                let inv = T::one() / T::from_f64(area as f64);
                for c in 0..p.cout {
                    let mut sum = T::zero();
                    for v in &src[c * area..(c + 1) * area] {
                        sum = sum + *v;
                    }
                    out[c] = sum * inv;
                }
            }
            LayerKind::Concat => {
                let mut offset = 0;
                for &pred in &p.preds {
                    let src = &acts[pred];
                    out[offset..offset + src.len()].copy_from_slice(src);
                    offset += src.len();
                }
            }
            LayerKind::Softmax => softmax_channels(p.cout, &acts[p.preds[0]], &mut out),
        }
        acts.push(out);
    }
    acts
}

/// Per-sample backward pass: gradients of the cross-entropy loss at `label`
/// with respect to every weight and bias. Softmax and cross-entropy are
/// fused at the sink.
pub(crate) fn backward_sample<T: Real>(
    plan: &Plan,
    weights: &WeightStore<T>,
    acts: &[Vec<T>],
    label: usize,
    algo: ConvAlgo,
) -> (WeightStore<T>, f64) {
    let mut grads: WeightStore<T> = WeightStore {
        layers: weights
            .layers
            .iter()
            .map(|(&id, lw)| {
                (
                    id,
                    LayerWeights {
                        weights: vec![T::zero(); lw.weights.len()],
                        bias: vec![T::zero(); lw.bias.len()],
                    },
                )
            })
            .collect(),
    };
    let mut dacts: Vec<Vec<T>> = acts.iter().map(|a| vec![T::zero(); a.len()]).collect();

    // Fused softmax + cross-entropy at the sink: dlogits = p - onehot.
    let probs = &acts[plan.softmax_pos];
    let p_label = probs[label].max(T::min_positive_value());
    let loss = -p_label.as_f64().ln();
    {
        let logits_pos = plan.layers[plan.softmax_pos].preds[0];
        let d = &mut dacts[logits_pos];
        for c in 0..plan.num_classes {
            d[c] = probs[c] - if c == label { T::one() } else { T::zero() };
        }
    }

    let mut patches: Vec<T> = Vec::new();
    let mut dpatches: Vec<T> = Vec::new();
    for pos in (0..plan.layers.len()).rev() {
        if pos == plan.softmax_pos {
            continue;
        }
        let p = &plan.layers[pos];
        match p.kind {
            LayerKind::Input | LayerKind::Softmax => {}
            LayerKind::Conv => {
                let dout = std::mem::take(&mut dacts[pos]);
                let pred = p.preds[0];
                let mut dinput = std::mem::take(&mut dacts[pred]);
                let dw = grads.layers.get_mut(&p.id).unwrap();
                conv_backward(
                    p,
                    weights.layer(p.id),
                    &acts[pred],
                    &acts[pos],
                    &dout,
                    dw,
                    &mut dinput,
                    algo,
                    &mut patches,
                    &mut dpatches,
                );
                dacts[pred] = dinput;
                dacts[pos] = dout;
            }
            LayerKind::Maxpool => {
                let pred = p.preds[0];
                let (before, after) = dacts.split_at_mut(pos);
                let dinput = &mut before[pred];
                let dout = &after[0];
                let input = &acts[pred];
                for c in 0..p.cout {
                    for oy in 0..p.oh {
                        for ox in 0..p.ow {
                            let g = dout[(c * p.oh + oy) * p.ow + ox];
                            if g != T::zero() {
                                let idx = maxpool_arg(p, input, c, oy, ox);
                                dinput[idx] = dinput[idx] + g;
                            }
                        }
                    }
                }
            }
            LayerKind::GlobalAvgpool => {
                let pred = p.preds[0];
                let (before, after) = dacts.split_at_mut(pos);
                let dinput = &mut before[pred];
                let dout = &after[0];
                let area = p.ih * p.iw;
                let inv = T::one() / T::from_f64(area as f64);
                for c in 0..p.cout {
                    let g = dout[c] * inv;
                    for v in &mut dinput[c * area..(c + 1) * area] {
                        *v = *v + g;
                    }
                }
            }
            LayerKind::Concat => {
                let (before, after) = dacts.split_at_mut(pos);
                let dout = &after[0];
                let mut offset = 0;
                for &pred in &p.preds {
                    let dinput = &mut before[pred];
                    let len = dinput.len();
                    for (v, &g) in dinput.iter_mut().zip(dout[offset..offset + len].iter()) {
                        *v = *v + g;
                    }
                    offset += len;
                }
            }
        }
    }
    (grads, loss)
}

/// Every layer's output for a single (c, h, w) sample, keyed by layer id.
/// Intended for oracle tests and structural-equivalence checks.
pub fn forward_activations<T: Real>(
    arch: &ArchGraph,
    weights: &WeightStore<T>,
    sample: &TensorBuffer<T>,
    algo: ConvAlgo,
) -> Result<Vec<(LayerId, Vec<T>)>> {
    weights.shape_check(arch)?;
    let (ec, eh, ew) = arch.input_shape;
    if sample.dims != vec![ec as usize, eh as usize, ew as usize] {
        return Err(Error::ShapeMismatch(format!(
            "sample dims {:?} do not match input shape {:?}",
            sample.dims, arch.input_shape
        )));
    }
    let plan = Plan::new(arch)?;
    let acts = forward_sample(&plan, weights, &sample.data, algo);
    Ok(plan.layers.iter().map(|l| l.id).zip(acts).collect())
}

fn check_batch<T: Real>(arch: &ArchGraph, batch: &TensorBuffer<T>) -> Result<usize> {
    let (n, c, h, w) = batch.nchw()?;
    let (ec, eh, ew) = arch.input_shape;
    if (c, h, w) != (ec as usize, eh as usize, ew as usize) {
        return Err(Error::ShapeMismatch(format!(
            "batch samples are {c}x{h}x{w}, graph expects {ec}x{eh}x{ew}"
        )));
    }
    Ok(n)
}

/// Batch forward pass returning class probabilities, one row per sample.
/// Rows sum to one; masked weights contribute exactly zero because the
/// store holds zeros at dead positions.
pub fn forward<T: Real>(
    arch: &ArchGraph,
    weights: &WeightStore<T>,
    batch: &TensorBuffer<T>,
    algo: ConvAlgo,
) -> Result<TensorBuffer<T>> {
    weights.shape_check(arch)?;
    let n = check_batch(arch, batch)?;
    let plan = Plan::new(arch)?;
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let acts = forward_sample(&plan, weights, batch.sample(s), algo);
            acts[plan.softmax_pos].clone()
        })
        .collect();
    let mut data = Vec::with_capacity(n * plan.num_classes);
    for row in rows {
        data.extend_from_slice(&row);
    }
    let out = TensorBuffer::new(vec![n, plan.num_classes], data)?;
    out.check_finite("forward output")?;
    Ok(out)
}

/// Batch backward pass: mean cross-entropy loss and its gradient. Samples
/// are processed in parallel but reduced in fixed sample order, and masked
/// positions are forced to zero, so the result is independent of the worker
/// count.
pub fn backward<T: Real>(
    arch: &ArchGraph,
    weights: &WeightStore<T>,
    batch: &TensorBuffer<T>,
    labels: &[u32],
    algo: ConvAlgo,
) -> Result<(WeightStore<T>, f64)> {
    weights.shape_check(arch)?;
    let n = check_batch(arch, batch)?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} samples but {} labels", labels.len())));
    }
    for &l in labels {
        if l >= arch.num_classes {
            return Err(Error::InvalidLabel { label: l, num_classes: arch.num_classes });
        }
    }
    let plan = Plan::new(arch)?;
    let per_sample: Vec<(WeightStore<T>, f64)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let acts = forward_sample(&plan, weights, batch.sample(s), algo);
            backward_sample(&plan, weights, &acts, labels[s] as usize, algo)
        })
        .collect();

    let mut total = WeightStore::zeros(arch);
    let mut loss_sum = 0.0;
    for (grads, loss) in &per_sample {
        loss_sum += loss;
        for (id, lw) in &grads.layers {
            let acc = total.layers.get_mut(id).unwrap();
            for (a, g) in acc.weights.iter_mut().zip(lw.weights.iter()) {
                *a = *a + *g;
            }
            for (a, g) in acc.bias.iter_mut().zip(lw.bias.iter()) {
                *a = *a + *g;
            }
        }
    }
    let scale = T::from_f64(1.0 / n as f64);
    for lw in total.layers.values_mut() {
        for v in lw.weights.iter_mut() {
            *v = *v * scale;
        }
        for v in lw.bias.iter_mut() {
            *v = *v * scale;
        }
    }
    total.apply_mask(arch);
    let mean_loss = loss_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NumericOverflow("loss is not finite".into()));
    }
    Ok((total, mean_loss))
}
