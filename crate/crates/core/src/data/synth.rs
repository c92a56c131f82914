//! Gaussian blobs in pixel space, a desk-scale stand-in for image datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::nn::DenseTensor;
use crate::rng::{purpose, RngStream};

/// Image-shaped inputs get a dark border of width `min(h, w) / 8` where every
/// class mean is zero, so corner pixels carry no class signal (as in real
/// digit or clothing scans).
fn in_background(input_shape: &[usize], flat: usize) -> bool {
    let [_, h, w] = input_shape else { return false };
    let border = (*h).min(*w) / 8;
    let (r, c) = ((flat / w) % h, flat % w);
    r < border || c < border || r >= h - border || c >= w - border
}

fn class_means(
    num_classes: usize,
    input_shape: &[usize],
    len: usize,
    stream: RngStream,
) -> Vec<Vec<f32>> {
    let mut rng = stream.rng();
    (0..num_classes)
        .map(|_| {
            (0..len)
                .map(|i| {
                    let v = rng.random::<f32>();
                    if in_background(input_shape, i) {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

fn sample_class_major(
    means: &[Vec<f32>],
    per_class: usize,
    input_shape: &[usize],
    sigma: f32,
    stream: RngStream,
) -> Result<Vec<LabeledExample>> {
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(means.len() * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let values = mean
                .iter()
                .map(|&m| {
                    let z: f32 = rng.sample(StandardNormal);
                    (m + sigma * z).clamp(0.0, 1.0)
                })
                .collect();
            out.push(LabeledExample {
                input: DenseTensor::new(input_shape.to_vec(), values)?,
                label,
            });
        }
    }
    Ok(out)
}

fn check(num_classes: usize, per_class: usize, input_shape: &[usize], sigma: f32) -> Result<usize> {
    if num_classes == 0 || per_class == 0 {
        return Err(Error::invalid(
            "blobs need at least one class and one example per class",
        ));
    }
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::invalid("blob sigma must be non-negative"));
    }
    let len: usize = input_shape.iter().product();
    if input_shape.is_empty() || len == 0 {
        return Err(Error::shape(format!("invalid input shape {input_shape:?}")));
    }
    Ok(len)
}

/// `per_class` samples per class, class-major order; each class has its own
/// uniformly drawn mean image (zero on the border) and isotropic noise `sigma`, clamped to `[0, 1]`.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    input_shape: &[usize],
    sigma: f32,
    seed: u64,
) -> Result<Dataset> {
    Ok(synth_blobs_split(num_classes, per_class, 0, input_shape, sigma, seed)?.0)
}

/// Train and test sets drawn around the same class means.
pub fn synth_blobs_split(
    num_classes: usize,
    per_class: usize,
    test_per_class: usize,
    input_shape: &[usize],
    sigma: f32,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let len = check(num_classes, per_class, input_shape, sigma)?;
    let root = RngStream::new(seed).derive(purpose::DATA);
    let means = class_means(num_classes, input_shape, len, root.derive(0));
    let train = sample_class_major(&means, per_class, input_shape, sigma, root.derive(1))?;
    let test = sample_class_major(&means, test_per_class, input_shape, sigma, root.derive(2))?;
    Ok((
        Dataset::new(train, num_classes, input_shape.to_vec())?,
        Dataset::new(test, num_classes, input_shape.to_vec())?,
    ))
}
