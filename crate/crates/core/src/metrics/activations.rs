use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, DenseTensor, FlatParams, ModelSpec};

/// Mean activation map of one layer over samples of a single class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationGrid {
    pub layer_index: usize,
    pub class_label: usize,
    /// `[channels, height, width]`; lower-rank outputs are padded with
    /// leading ones.
    pub shape: [usize; 3],
    pub values: Vec<f64>,
}

pub fn activation_grid(
    model: &ModelSpec,
    params: &FlatParams,
    samples: &Dataset,
    layer_index: usize,
) -> Result<ActivationGrid> {
    let first = samples
        .examples()
        .first()
        .ok_or_else(|| Error::invalid("no samples to average"))?;
    let label = first.label;
    if samples.examples().iter().any(|e| e.label != label) {
        return Err(Error::invalid("samples mix several labels"));
    }
    let out_shape = model
        .shapes()
        .get(layer_index + 1)
        .ok_or_else(|| Error::invalid(format!("model has no layer {layer_index}")))?;
    let shape = match out_shape.as_slice() {
        [c, h, w] => [*c, *h, *w],
        [h, w] => [1, *h, *w],
        [w] => [1, 1, *w],
        other => {
            return Err(Error::shape(format!(
                "cannot grid an activation of shape {other:?}"
            )))
        }
    };
    let mut sum = vec![0.0f64; shape.iter().product()];
    for chunk in samples.examples().chunks(256) {
        let acts = nn::layer_activations(
            model,
            params,
            &DenseTensor::stack(chunk.iter().map(|e| &e.input))?,
            layer_index,
        )?;
        for row in acts.rows() {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
    }
    let n = samples.len() as f64;
    Ok(ActivationGrid {
        layer_index,
        class_label: label,
        shape,
        values: sum.into_iter().map(|s| s / n).collect(),
    })
}

impl ActivationGrid {
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.values[c * plane..(c + 1) * plane]
    }

    /// Binary 8-bit greyscale image of one channel, scaled so its maximum is
    /// 255 (an all-zero channel stays black).
    pub fn channel_pgm(&self, c: usize) -> Vec<u8> {
        let [_, h, w] = self.shape;
        let data = self.channel(c);
        let max = data.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(data.iter().map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }

    /// `channel,row,col,value` rows.
    pub fn to_csv(&self) -> String {
        let [c, h, w] = self.shape;
        let mut out = String::from("channel,row,col,value\n");
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let _ = writeln!(
                        out,
                        "{ch},{r},{col},{}",
                        self.values[(ch * h + r) * w + col]
                    );
                }
            }
        }
        out
    }

    /// Writes `<stem>.csv` and one `<stem>_c<channel>.pgm` per channel.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        written.push(csv);
        for c in 0..self.shape[0] {
            let p = dir.join(format!("{stem}_c{c}.pgm"));
            std::fs::write(&p, self.channel_pgm(c)).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}
