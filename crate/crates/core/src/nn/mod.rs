//! A small convolutional network with hand-written backpropagation.

mod engine;
pub mod gradcheck;
mod loss;
mod model;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_grad, gradient_check, GradCheckReport};
pub use loss::{cross_entropy, grad_wrt_logits, kd_loss, LossWeights};
pub use model::{LayerSpec, ModelSpec};
pub use params::{FlatParams, FlatUpdate, ParamLayout, ParamRole, Segment};
pub use tensor::DenseTensor;

pub(crate) use engine::Real;

use crate::error::{Error, Result};

/// Inputs with hard labels and, for distillation, teacher logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DenseTensor,
    pub labels: Vec<usize>,
    pub soft_targets: Option<DenseTensor>,
}

impl Batch {
    pub fn new(inputs: DenseTensor, labels: Vec<usize>, soft_targets: Option<DenseTensor>) -> Self {
        Batch {
            inputs,
            labels,
            soft_targets,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_input(model: &ModelSpec, inputs: &DenseTensor) -> Result<usize> {
    let shape = inputs.shape();
    if shape.len() != model.input_shape().len() + 1 || &shape[1..] != model.input_shape() {
        return Err(Error::shape(format!(
            "batch {:?} does not match model input [B, {:?}]",
            shape,
            model.input_shape()
        )));
    }
    if shape[0] == 0 {
        return Err(Error::shape("batch must hold at least one sample"));
    }
    Ok(shape[0])
}

fn check_params(model: &ModelSpec, len: usize) -> Result<()> {
    if model.num_params() != len {
        return Err(Error::shape(format!(
            "model expects {} parameters, got {len}",
            model.num_params()
        )));
    }
    Ok(())
}

fn check_batch(model: &ModelSpec, batch: &Batch) -> Result<usize> {
    let b = check_input(model, &batch.inputs)?;
    if batch.labels.len() != b {
        return Err(Error::shape(format!(
            "{} labels for {b} inputs",
            batch.labels.len()
        )));
    }
    if let Some((i, &l)) = batch
        .labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l >= model.num_classes())
    {
        return Err(Error::invalid(format!(
            "label {l} of sample {i} out of range"
        )));
    }
    if let Some(s) = &batch.soft_targets {
        if s.shape() != [b, model.num_classes()] {
            return Err(Error::shape(format!(
                "soft targets {:?} do not match [{b}, {}]",
                s.shape(),
                model.num_classes()
            )));
        }
    }
    Ok(b)
}

/// Raw logits for a batch, shape `[B, num_classes]`.
pub fn forward(model: &ModelSpec, params: &FlatParams, batch: &DenseTensor) -> Result<DenseTensor> {
    check_params(model, params.len())?;
    let b = check_input(model, batch)?;
    let out = engine::forward_to(model, params.values(), batch.values().to_vec(), b, None);
    DenseTensor::new(vec![b, model.num_classes()], out)
}

/// Per-sample output of layer `layer_index`, shape `[B, ...]`.
pub fn layer_activations(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &DenseTensor,
    layer_index: usize,
) -> Result<DenseTensor> {
    check_params(model, params.len())?;
    let b = check_input(model, batch)?;
    if layer_index >= model.layers().len() {
        return Err(Error::invalid(format!("model has no layer {layer_index}")));
    }
    let out = engine::forward_to(
        model,
        params.values(),
        batch.values().to_vec(),
        b,
        Some(layer_index),
    );
    let mut shape = vec![b];
    shape.extend(&model.shapes()[layer_index + 1]);
    DenseTensor::new(shape, out)
}

pub(crate) fn loss_and_grad_generic<T: Real>(
    model: &ModelSpec,
    params: &[T],
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Vec<T>)> {
    check_params(model, params.len())?;
    let b = check_batch(model, batch)?;
    let input: Vec<T> = batch
        .inputs
        .values()
        .iter()
        .map(|&v| T::from_f32(v))
        .collect();
    let soft = batch.soft_targets.as_ref().map(|s| s.values());
    if want_grad {
        let trace = engine::forward_trace(model, params, input, b);
        let (loss, g) = loss::weighted(
            trace.logits(),
            model.num_classes(),
            &batch.labels,
            soft,
            weights,
            temperature,
            true,
        )?;
        Ok((loss, engine::backward(model, params, &trace, g, b)))
    } else {
        let logits = engine::forward_to(model, params, input, b, None);
        loss::weighted(
            &logits,
            model.num_classes(),
            &batch.labels,
            soft,
            weights,
            temperature,
            false,
        )
    }
}

/// Weighted training loss `ce * CE + kd * KD` on a batch.
pub fn loss(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
) -> Result<f64> {
    loss_and_grad_generic(model, params.values(), batch, weights, temperature, false).map(|r| r.0)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
) -> Result<(f64, FlatUpdate)> {
    let (l, g) = loss_and_grad_generic(model, params.values(), batch, weights, temperature, true)?;
    Ok((l, FlatUpdate::new(g)))
}

pub fn grad(
    model: &ModelSpec,
    params: &FlatParams,
    batch: &Batch,
    weights: LossWeights,
    temperature: f64,
) -> Result<FlatUpdate> {
    loss_and_grad(model, params, batch, weights, temperature).map(|r| r.1)
}

/// `params - lr * gradient`.
pub fn sgd_step(params: &FlatParams, gradient: &FlatUpdate, lr: f32) -> Result<FlatParams> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::invalid(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    params::check_len(params.len(), gradient.len())?;
    let mut next = params.clone();
    for (p, g) in next.values_mut().iter_mut().zip(gradient.values()) {
        *p -= lr * g;
    }
    Ok(next)
}
