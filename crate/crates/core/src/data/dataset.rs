use crate::error::{Error, Result};
use crate::nn::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: DenseTensor,
    pub label: usize,
}

/// An example paired with teacher logits for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftExample {
    pub input: DenseTensor,
    pub label: usize,
    pub soft_target: Vec<f32>,
}

impl SoftExample {
    pub fn without_soft_target(example: &LabeledExample) -> Self {
        SoftExample {
            input: example.input.clone(),
            label: example.label,
            soft_target: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    input_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(
        examples: Vec<LabeledExample>,
        num_classes: usize,
        input_shape: Vec<usize>,
    ) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(Error::invalid(format!(
                    "example {i} has label {} but the dataset has {num_classes} classes",
                    ex.label
                )));
            }
            if ex.input.shape() != input_shape.as_slice() {
                return Err(Error::shape(format!(
                    "example {i} has shape {:?}, expected {input_shape:?}",
                    ex.input.shape()
                )));
            }
            if ex.input.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "example {i} has pixel values outside [0, 1]"
                )));
            }
        }
        Ok(Dataset {
            examples,
            num_classes,
            input_shape,
        })
    }

    pub fn empty(num_classes: usize, input_shape: Vec<usize>) -> Self {
        Dataset {
            examples: Vec::new(),
            num_classes,
            input_shape,
        }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Raises the class count (labels stay valid).
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(e) = self.examples.iter().find(|e| e.label >= num_classes) {
            return Err(Error::invalid(format!(
                "label {} does not fit {num_classes} classes",
                e.label
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut examples = Vec::with_capacity(indices.len());
        for &i in indices {
            let ex = self
                .examples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("index {i} out of range")))?;
            examples.push(ex.clone());
        }
        Ok(Dataset {
            examples,
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        })
    }

    pub fn filter_label(&self, label: usize) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| e.label == label)
                .cloned()
                .collect(),
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        }
    }

    /// First `n` examples.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples.iter().take(n).cloned().collect(),
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        }
    }
}
