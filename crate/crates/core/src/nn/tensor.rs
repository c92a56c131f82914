use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Stacks equally shaped tensors along a new leading batch dimension.
    pub fn stack<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DenseTensor>,
    {
        let mut shape: Option<Vec<usize>> = None;
        let mut values = Vec::new();
        let mut count = 0;
        for t in items {
            match &shape {
                None => shape = Some(t.shape.clone()),
                Some(s) if *s != t.shape => {
                    return Err(Error::shape(format!(
                        "cannot stack {:?} with {:?}",
                        s, t.shape
                    )))
                }
                _ => {}
            }
            values.extend_from_slice(&t.values);
            count += 1;
        }
        let inner = shape.ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let mut full = Vec::with_capacity(inner.len() + 1);
        full.push(count);
        full.extend(inner);
        Ok(DenseTensor {
            shape: full,
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading dimension, or 0 for a scalar-shaped tensor.
    pub fn batch_size(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// The `i`-th row along the leading dimension.
    pub fn row(&self, i: usize) -> &[f32] {
        let width = self.row_width();
        &self.values[i * width..(i + 1) * width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        let width = self.row_width().max(1);
        self.values.chunks(width)
    }

    fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }
}
