//! Forward and backward passes, generic over the float width so the same code
//! trains in f32 and serves as an f64 reference for gradient checks.

use std::ops::{Add, AddAssign, Mul, Sub};

use super::model::{LayerSpec, ModelSpec};

pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + AddAssign
    + std::fmt::Debug
    + 'static
{
    const ZERO: Self;
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Activations kept for the backward pass. `acts[i]` is the input of layer
/// `i`; the final entry is the logits.
pub(crate) struct Trace<T> {
    pub acts: Vec<Vec<T>>,
    pool_argmax: Vec<Vec<u32>>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

pub(crate) fn forward_trace<T: Real>(
    model: &ModelSpec,
    params: &[T],
    input: Vec<T>,
    batch: usize,
) -> Trace<T> {
    let offsets = model.param_offsets();
    let mut acts = vec![input];
    let mut pool_argmax = vec![Vec::new(); model.layers().len()];
    for (i, layer) in model.layers().iter().enumerate() {
        let out = layer_forward(
            layer,
            offsets[i].map(|(w, b)| (&params[w..b], &params[b..])),
            acts.last().unwrap(),
            &model.shapes()[i],
            &model.shapes()[i + 1],
            batch,
            Some(&mut pool_argmax[i]),
        );
        acts.push(out);
    }
    Trace { acts, pool_argmax }
}

/// Forward pass that keeps only the current activation; returns the output
/// of layer `stop_after` (or the logits when `None`).
pub(crate) fn forward_to<T: Real>(
    model: &ModelSpec,
    params: &[T],
    input: Vec<T>,
    batch: usize,
    stop_after: Option<usize>,
) -> Vec<T> {
    let offsets = model.param_offsets();
    let last = stop_after.unwrap_or(model.layers().len().saturating_sub(1));
    let mut current = input;
    for (i, layer) in model.layers().iter().enumerate().take(last + 1) {
        current = layer_forward(
            layer,
            offsets[i].map(|(w, b)| (&params[w..b], &params[b..])),
            &current,
            &model.shapes()[i],
            &model.shapes()[i + 1],
            batch,
            None,
        );
    }
    current
}

fn layer_forward<T: Real>(
    layer: &LayerSpec,
    params: Option<(&[T], &[T])>,
    input: &[T],
    in_shape: &[usize],
    out_shape: &[usize],
    batch: usize,
    argmax: Option<&mut Vec<u32>>,
) -> Vec<T> {
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match *layer {
        LayerSpec::Conv2d {
            kernel_h,
            kernel_w,
            stride,
            ..
        } => {
            let (w, rest) = params.unwrap();
            let (ic, ih, iw) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
            let mut out = vec![T::ZERO; batch * out_len];
            for b in 0..batch {
                let x = &input[b * in_len..(b + 1) * in_len];
                let y = &mut out[b * out_len..(b + 1) * out_len];
                for o in 0..oc {
                    let bias = rest[o];
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = bias;
                            for ch in 0..ic {
                                for ky in 0..kernel_h {
                                    let wrow = ((o * ic + ch) * kernel_h + ky) * kernel_w;
                                    let xrow = (ch * ih + r * stride + ky) * iw + c * stride;
                                    for kx in 0..kernel_w {
                                        acc += w[wrow + kx] * x[xrow + kx];
                                    }
                                }
                            }
                            y[(o * oh + r) * ow + c] = acc;
                        }
                    }
                }
            }
            out
        }
        LayerSpec::MaxPool { size } => {
            let (ch, ih, iw) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = vec![T::ZERO; batch * out_len];
            let mut idx = vec![0u32; if argmax.is_some() { batch * out_len } else { 0 }];
            for b in 0..batch {
                let x = &input[b * in_len..(b + 1) * in_len];
                for k in 0..ch {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut best_i = (k * ih + r * size) * iw + c * size;
                            let mut best = x[best_i];
                            for dy in 0..size {
                                for dx in 0..size {
                                    let j = (k * ih + r * size + dy) * iw + c * size + dx;
                                    if x[j] > best {
                                        best = x[j];
                                        best_i = j;
                                    }
                                }
                            }
                            let o = b * out_len + (k * oh + r) * ow + c;
                            out[o] = best;
                            if !idx.is_empty() {
                                idx[o] = best_i as u32;
                            }
                        }
                    }
                }
            }
            if let Some(slot) = argmax {
                *slot = idx;
            }
            out
        }
        LayerSpec::Relu => input
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect(),
        LayerSpec::Flatten => input.to_vec(),
        LayerSpec::Dense { out_features } => {
            let (w, bias) = params.unwrap();
            let mut out = vec![T::ZERO; batch * out_len];
            for b in 0..batch {
                let x = &input[b * in_len..(b + 1) * in_len];
                for j in 0..out_features {
                    let row = &w[j * in_len..(j + 1) * in_len];
                    let mut acc = bias[j];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += *wi * *xi;
                    }
                    out[b * out_len + j] = acc;
                }
            }
            out
        }
    }
}

/// Back-propagates `grad_logits` (batch x classes) and returns the gradient
/// for every parameter, in flat layout order.
pub(crate) fn backward<T: Real>(
    model: &ModelSpec,
    params: &[T],
    trace: &Trace<T>,
    grad_logits: Vec<T>,
    batch: usize,
) -> Vec<T> {
    let offsets = model.param_offsets();
    let mut grads = vec![T::ZERO; params.len()];
    let mut g = grad_logits;
    for (i, layer) in model.layers().iter().enumerate().rev() {
        let in_shape = &model.shapes()[i];
        let out_shape = &model.shapes()[i + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let x = &trace.acts[i];
        let need_input_grad = i > 0;
        g = match *layer {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                let (wo, bo) = offsets[i].unwrap();
                let w = &params[wo..bo];
                let (ic, ih, iw) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                let mut gin = vec![T::ZERO; if need_input_grad { batch * in_len } else { 0 }];
                let (gw, gb) = grads[wo..].split_at_mut(bo - wo);
                for b in 0..batch {
                    let xs = &x[b * in_len..(b + 1) * in_len];
                    let gs = &g[b * out_len..(b + 1) * out_len];
                    for o in 0..oc {
                        for r in 0..oh {
                            for c in 0..ow {
                                let go = gs[(o * oh + r) * ow + c];
                                gb[o] += go;
                                for ch in 0..ic {
                                    for ky in 0..kernel_h {
                                        let wrow = ((o * ic + ch) * kernel_h + ky) * kernel_w;
                                        let xrow = (ch * ih + r * stride + ky) * iw + c * stride;
                                        for kx in 0..kernel_w {
                                            gw[wrow + kx] += go * xs[xrow + kx];
                                            if need_input_grad {
                                                gin[b * in_len + xrow + kx] += go * w[wrow + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gin
            }
            LayerSpec::MaxPool { .. } => {
                let mut gin = vec![T::ZERO; batch * in_len];
                let idx = &trace.pool_argmax[i];
                for b in 0..batch {
                    for o in 0..out_len {
                        let k = b * out_len + o;
                        gin[b * in_len + idx[k] as usize] += g[k];
                    }
                }
                gin
            }
            LayerSpec::Relu => g
                .iter()
                .zip(x)
                .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO })
                .collect(),
            LayerSpec::Flatten => g,
            LayerSpec::Dense { out_features } => {
                let (wo, bo) = offsets[i].unwrap();
                let w = &params[wo..bo];
                let mut gin = vec![T::ZERO; if need_input_grad { batch * in_len } else { 0 }];
                let (gw, gb) = grads[wo..].split_at_mut(bo - wo);
                for b in 0..batch {
                    let xs = &x[b * in_len..(b + 1) * in_len];
                    for j in 0..out_features {
                        let go = g[b * out_len + j];
                        gb[j] += go;
                        let row = j * in_len;
                        for k in 0..in_len {
                            gw[row + k] += go * xs[k];
                        }
                        if need_input_grad {
                            let gi = &mut gin[b * in_len..(b + 1) * in_len];
                            for k in 0..in_len {
                                gi[k] += go * w[row + k];
                            }
                        }
                    }
                }
                gin
            }
        };
    }
    grads
}
