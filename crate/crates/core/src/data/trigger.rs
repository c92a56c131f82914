//! Pixel-overwrite backdoor triggers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerPixel {
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub channel: usize,
    pub value: f32,
}

impl TriggerPixel {
    fn key(&self) -> (usize, usize, usize) {
        (self.row, self.col, self.channel)
    }
}

/// The poisoning function: overwrite listed pixels, optionally relabel to
/// `target_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrigger", into = "RawTrigger")]
pub struct TriggerSpec {
    pixels: Vec<TriggerPixel>,
    target_class: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrigger {
    pixels: Vec<TriggerPixel>,
    target_class: usize,
}

impl TryFrom<RawTrigger> for TriggerSpec {
    type Error = Error;
    fn try_from(r: RawTrigger) -> Result<Self> {
        TriggerSpec::new(r.pixels, r.target_class)
    }
}

impl From<TriggerSpec> for RawTrigger {
    fn from(t: TriggerSpec) -> Self {
        RawTrigger {
            pixels: t.pixels,
            target_class: t.target_class,
        }
    }
}

impl Default for TriggerSpec {
    /// 2x2 block at the top-left corner plus a 1x2 bar to its right, all
    /// white, targeting class 0.
    fn default() -> Self {
        let px = |row, col| TriggerPixel {
            row,
            col,
            channel: 0,
            value: 1.0,
        };
        TriggerSpec {
            pixels: vec![px(0, 0), px(0, 1), px(1, 0), px(1, 1), px(0, 3), px(0, 4)],
            target_class: 0,
        }
    }
}

impl TriggerSpec {
    pub fn new(pixels: Vec<TriggerPixel>, target_class: usize) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("trigger has no pixels"));
        }
        let mut seen = BTreeSet::new();
        for p in &pixels {
            if !seen.insert(p.key()) {
                return Err(Error::invalid(format!(
                    "duplicate trigger pixel (row {}, col {}, channel {})",
                    p.row, p.col, p.channel
                )));
            }
            if !(0.0..=1.0).contains(&p.value) {
                return Err(Error::invalid(format!(
                    "trigger value {} outside [0, 1]",
                    p.value
                )));
            }
        }
        Ok(TriggerSpec {
            pixels,
            target_class,
        })
    }

    pub fn pixels(&self) -> &[TriggerPixel] {
        &self.pixels
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    /// Flat offsets of every pixel within an input of `shape`.
    pub fn offsets(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let (c, h, w) = match *shape {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            [d] => (1, 1, d),
            _ => return Err(Error::shape(format!("cannot place a trigger on {shape:?}"))),
        };
        self.pixels
            .iter()
            .map(|p| {
                if p.channel >= c || p.row >= h || p.col >= w {
                    Err(Error::invalid(format!(
                        "trigger pixel (row {}, col {}, channel {}) outside input {shape:?}",
                        p.row, p.col, p.channel
                    )))
                } else {
                    Ok((p.channel * h + p.row) * w + p.col)
                }
            })
            .collect()
    }

    pub fn stamp(&self, input: &DenseTensor) -> Result<DenseTensor> {
        let offsets = self.offsets(input.shape())?;
        let mut out = input.clone();
        for (o, p) in offsets.into_iter().zip(&self.pixels) {
            out.values_mut()[o] = p.value;
        }
        Ok(out)
    }
}

pub fn apply_trigger(
    example: &LabeledExample,
    trigger: &TriggerSpec,
    flip_label: bool,
) -> Result<LabeledExample> {
    Ok(LabeledExample {
        input: trigger.stamp(&example.input)?,
        label: if flip_label {
            trigger.target_class
        } else {
            example.label
        },
    })
}

/// Splits a trigger into `k` disjoint parts: after sorting pixels by
/// (row, col, channel), pixel `i` goes to part `i mod k`.
pub fn split_trigger_dba(trigger: &TriggerSpec, k: usize) -> Result<Vec<TriggerSpec>> {
    if k == 0 || k > trigger.pixels.len() {
        return Err(Error::invalid(format!(
            "cannot split a {}-pixel trigger into {k} parts",
            trigger.pixels.len()
        )));
    }
    if k == 1 {
        return Ok(vec![trigger.clone()]);
    }
    let mut sorted = trigger.pixels.clone();
    sorted.sort_by_key(TriggerPixel::key);
    let mut parts = vec![Vec::new(); k];
    for (i, p) in sorted.into_iter().enumerate() {
        parts[i % k].push(p);
    }
    parts
        .into_iter()
        .map(|pixels| TriggerSpec::new(pixels, trigger.target_class))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_image() -> LabeledExample {
        LabeledExample {
            input: DenseTensor::zeros(vec![1, 6, 6]),
            label: 4,
        }
    }

    fn corner4() -> TriggerSpec {
        let px = |row, col| TriggerPixel {
            row,
            col,
            channel: 0,
            value: 1.0,
        };
        TriggerSpec::new(vec![px(0, 0), px(0, 1), px(1, 0), px(1, 1)], 2).unwrap()
    }

    #[test]
    fn corner_trigger_sets_exactly_its_pixels() {
        let out = apply_trigger(&zero_image(), &corner4(), false).unwrap();
        let nonzero: Vec<usize> = out
            .input
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![0, 1, 6, 7]);
        assert_eq!(out.label, 4);
        assert_eq!(
            apply_trigger(&zero_image(), &corner4(), true)
                .unwrap()
                .label,
            2
        );
    }

    #[test]
    fn invalid_triggers_rejected() {
        assert!(TriggerSpec::new(vec![], 0).is_err());
        let p = TriggerPixel {
            row: 0,
            col: 0,
            channel: 0,
            value: 1.0,
        };
        assert!(TriggerSpec::new(vec![p, p], 0).is_err());
        let far = TriggerSpec::new(vec![TriggerPixel { row: 9, ..p }], 0).unwrap();
        assert!(apply_trigger(&zero_image(), &far, true).is_err());
        let bad_value: std::result::Result<TriggerSpec, _> =
            serde_json::from_str(r#"{"pixels":[{"row":0,"col":0,"value":2.0}],"target_class":0}"#);
        assert!(bad_value.is_err());
    }

    #[test]
    fn dba_split_examples() {
        let t = corner4();
        assert_eq!(split_trigger_dba(&t, 1).unwrap(), vec![t.clone()]);
        let parts = split_trigger_dba(&t, 4).unwrap();
        assert!(parts
            .iter()
            .all(|p| p.pixels().len() == 1 && p.target_class() == 2));
        assert!(split_trigger_dba(&t, 5).is_err());
        assert!(split_trigger_dba(&t, 0).is_err());
        let default_parts = split_trigger_dba(&TriggerSpec::default(), 4).unwrap();
        let sizes: Vec<usize> = default_parts.iter().map(|p| p.pixels().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1]);
    }

    proptest! {
        #[test]
        fn parts_reassemble_and_stamp_like_the_whole(
            coords in proptest::collection::btree_set((0usize..6, 0usize..6), 1..20),
            k_raw in 1usize..20,
            base in proptest::collection::vec(0f32..1.0, 36),
        ) {
            let pixels: Vec<TriggerPixel> = coords
                .iter()
                .map(|&(row, col)| TriggerPixel { row, col, channel: 0, value: 0.75 })
                .collect();
            let t = TriggerSpec::new(pixels, 1).unwrap();
            let k = 1 + (k_raw - 1) % t.pixels().len();
            let parts = split_trigger_dba(&t, k).unwrap();
            let mut union: Vec<(usize, usize, usize)> =
                parts.iter().flat_map(|p| p.pixels().iter().map(TriggerPixel::key)).collect();
            union.sort();
            let mut orig: Vec<_> = t.pixels().iter().map(TriggerPixel::key).collect();
            orig.sort();
            prop_assert_eq!(union, orig);

            let ex = LabeledExample { input: DenseTensor::new(vec![1, 6, 6], base).unwrap(), label: 3 };
            let once = apply_trigger(&ex, &t, false).unwrap();
            prop_assert_eq!(&apply_trigger(&once, &t, false).unwrap(), &once);
            let mut seq = ex.clone();
            for p in &parts {
                seq = apply_trigger(&seq, p, false).unwrap();
            }
            prop_assert_eq!(&seq, &once);
            for (i, (a, b)) in ex.input.values().iter().zip(once.input.values()).enumerate() {
                let (r, c) = (i / 6, i % 6);
                if !coords.contains(&(r, c)) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
