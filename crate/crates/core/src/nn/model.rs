//! Architecture descriptions and the parameter layout they induce.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{FlatParams, ParamLayout, ParamRole, Segment};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    MaxPool {
        size: usize,
    },
    Relu,
    Flatten,
    Dense {
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
            } => {
                let [_, h, w] = spatial(input, "conv2d")?;
                if out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err(Error::shape("conv2d sizes must be positive"));
                }
                if h < kernel_h || w < kernel_w {
                    return Err(Error::shape(format!(
                        "conv2d kernel {kernel_h}x{kernel_w} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel_h) / stride + 1,
                    (w - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::MaxPool { size } => {
                let [c, h, w] = spatial(input, "max_pool")?;
                if size == 0 || h < size || w < size {
                    return Err(Error::shape(format!(
                        "max_pool size {size} does not fit input {h}x{w}"
                    )));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { out_features } => {
                if input.len() != 1 {
                    return Err(Error::shape(format!(
                        "dense expects a flat input, got {input:?} (insert a flatten layer)"
                    )));
                }
                if out_features == 0 {
                    return Err(Error::shape("dense out_features must be positive"));
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn spatial(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape(format!(
            "{what} expects a [channels, height, width] input, got {input:?}"
        ))),
    }
}

/// A validated feed-forward architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    num_classes: usize,
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    num_classes: usize,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModelSpec) -> Result<Self> {
        ModelSpec::new(raw.layers, raw.input_shape, raw.num_classes)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        RawModelSpec {
            layers: m.layers,
            input_shape: m.input_shape,
            num_classes: m.num_classes,
        }
    }
}

impl ModelSpec {
    pub fn new(
        layers: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::shape(format!("invalid input shape {input_shape:?}")));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.len() != 1 || out[0] != num_classes {
            return Err(Error::shape(format!(
                "model emits {out:?} but {num_classes} logits are required"
            )));
        }
        Ok(ModelSpec {
            layers,
            input_shape,
            num_classes,
            shapes,
        })
    }

    /// Two conv blocks (16 and 32 filters, 5x5) followed by a 128-unit hidden
    /// dense layer.
    pub fn default_cnn(input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(
            Self::default_cnn_layers(num_classes),
            input_shape,
            num_classes,
        )
    }

    pub fn default_cnn_layers(num_classes: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                out_channels: 16,
                kernel_h: 5,
                kernel_w: 5,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv2d {
                out_channels: 32,
                kernel_h: 5,
                kernel_w: 5,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 128 },
            LayerSpec::Relu,
            LayerSpec::Dense {
                out_features: num_classes,
            },
        ]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-sample shapes: entry `i` is the input of layer `i`, the last entry
    /// is the logits.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layout(&self) -> ParamLayout {
        let mut segments = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &self.shapes[i];
            match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    segments.push(Segment::new(
                        i,
                        ParamRole::Weight,
                        vec![out_channels, input[0], kernel_h, kernel_w],
                    ));
                    segments.push(Segment::new(i, ParamRole::Bias, vec![out_channels]));
                }
                LayerSpec::Dense { out_features } => {
                    segments.push(Segment::new(
                        i,
                        ParamRole::Weight,
                        vec![out_features, input[0]],
                    ));
                    segments.push(Segment::new(i, ParamRole::Bias, vec![out_features]));
                }
                _ => {}
            }
        }
        ParamLayout::new(segments)
    }

    pub fn num_params(&self) -> usize {
        self.layout().total_len()
    }

    /// Offsets of each parameterized layer's (weight, bias) in the flat vector.
    pub(crate) fn param_offsets(&self) -> Vec<Option<(usize, usize)>> {
        let mut offsets = vec![None; self.layers.len()];
        let mut cursor = 0;
        let layout = self.layout();
        for pair in layout.segments().chunks(2) {
            let w = pair[0].len();
            offsets[pair[0].layer_index] = Some((cursor, cursor + w));
            cursor += w + pair[1].len();
        }
        offsets
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init_params(&self, stream: RngStream) -> FlatParams {
        let layout = self.layout();
        let mut rng = stream.rng();
        let mut values = Vec::with_capacity(layout.total_len());
        for pair in layout.segments().chunks(2) {
            let fan_in: usize = pair[0].shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f32).sqrt();
            for seg in pair {
                for _ in 0..seg.len() {
                    values.push(rng.random_range(-bound..=bound));
                }
            }
        }
        FlatParams::from_parts(layout, values).expect("layout length matches by construction")
    }
}
