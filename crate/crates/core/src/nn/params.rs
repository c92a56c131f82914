//! Flattened parameter vectors and their on-disk `.fp32` form.
//!
//! The file format is one JSON header line describing the segment layout,
//! followed by the raw values as little-endian IEEE-754 binary32:
//!
//! ```text
//! {"segments":[{"layer_index":0,"role":"weight","shape":[16,1,5,5]},...]}\n
//! <4 * total_len bytes>
//! ```

use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub layer_index: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(layer_index: usize, role: ParamRole, shape: Vec<usize>) -> Self {
        Segment {
            layer_index,
            role,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLayout {
    segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new(segments: Vec<Segment>) -> Self {
        ParamLayout { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

/// Model parameters as one vector plus the table that explains it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    layout: ParamLayout,
    values: Vec<f32>,
}

impl FlatParams {
    pub fn from_parts(layout: ParamLayout, values: Vec<f32>) -> Result<Self> {
        if layout.total_len() != values.len() {
            return Err(Error::shape(format!(
                "layout describes {} values but {} were given",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(FlatParams { layout, values })
    }

    /// Reassembles from per-segment tensors (the inverse of [`FlatParams::unflatten`]).
    pub fn flatten(layout: ParamLayout, parts: &[Vec<f32>]) -> Result<Self> {
        if parts.len() != layout.segments.len() {
            return Err(Error::shape("segment count mismatch"));
        }
        let mut values = Vec::with_capacity(layout.total_len());
        for (seg, part) in layout.segments.iter().zip(parts) {
            if seg.len() != part.len() {
                return Err(Error::shape(format!(
                    "segment {:?} of layer {} expects {} values, got {}",
                    seg.role,
                    seg.layer_index,
                    seg.len(),
                    part.len()
                )));
            }
            values.extend_from_slice(part);
        }
        Self::from_parts(layout, values)
    }

    pub fn unflatten(&self) -> Vec<Vec<f32>> {
        let mut out = Vec::with_capacity(self.layout.segments.len());
        let mut cursor = 0;
        for seg in &self.layout.segments {
            out.push(self.values[cursor..cursor + seg.len()].to_vec());
            cursor += seg.len();
        }
        out
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + update`, elementwise.
    pub fn apply(&self, update: &FlatUpdate) -> Result<FlatParams> {
        check_len(self.len(), update.len())?;
        let values = self
            .values
            .iter()
            .zip(update.values())
            .map(|(p, u)| p + u)
            .collect();
        Ok(FlatParams {
            layout: self.layout.clone(),
            values,
        })
    }

    /// `self - base`, the update that moves `base` onto `self`.
    pub fn delta_from(&self, base: &FlatParams) -> Result<FlatUpdate> {
        check_len(self.len(), base.len())?;
        Ok(FlatUpdate::new(
            self.values
                .iter()
                .zip(&base.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        write_fp32(&mut w, &self.layout, &self.values)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let (layout, values) = read_fp32(r, Path::new("<stream>"))?;
        Self::from_parts(layout, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (layout, values) = read_fp32(std::io::BufReader::new(file), path)?;
        Self::from_parts(layout, values)
    }
}

/// A parameter delta; shares its model's layout but not the table itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatUpdate {
    values: Vec<f32>,
}

impl FlatUpdate {
    pub fn new(values: Vec<f32>) -> Self {
        FlatUpdate { values }
    }

    pub fn zeros(len: usize) -> Self {
        FlatUpdate {
            values: vec![0.0; len],
        }
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

    /// Euclidean norm, reduced in f64.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn save(&self, layout: &ParamLayout, path: &Path) -> Result<()> {
        check_len(layout.total_len(), self.len())?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_fp32(&mut w, layout, &self.values)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ParamLayout, Self)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (layout, values) = read_fp32(std::io::BufReader::new(file), path)?;
        Ok((layout, FlatUpdate::new(values)))
    }
}

pub(crate) fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("vector lengths differ: {a} vs {b}")));
    }
    Ok(())
}

fn write_fp32(w: &mut impl Write, layout: &ParamLayout, values: &[f32]) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, layout)?;
    w.write_all(b"\n")?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_fp32(r: impl Read, path: &Path) -> Result<(ParamLayout, Vec<f32>)> {
    let mut reader = std::io::BufReader::new(r);
    let mut header = Vec::new();
    reader
        .read_until(b'\n', &mut header)
        .map_err(|e| Error::io(path, e))?;
    if header.last() != Some(&b'\n') {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: header.len() as u64,
            message: "missing header line".into(),
        });
    }
    let layout: ParamLayout =
        serde_json::from_slice(&header[..header.len() - 1]).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad layout header: {e}"),
        })?;
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::io(path, e))?;
    let expected = layout.total_len() * 4;
    if body.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (header.len() + body.len().min(expected)) as u64,
            message: format!("expected {expected} payload bytes, found {}", body.len()),
        });
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((layout, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ParamLayout {
        ParamLayout::new(vec![
            Segment::new(0, ParamRole::Weight, vec![2, 3]),
            Segment::new(0, ParamRole::Bias, vec![2]),
        ])
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_bit_identical(values in proptest::collection::vec(any::<f32>(), 8)) {
            let p = FlatParams::from_parts(layout(), values.clone()).unwrap();
            let back = FlatParams::flatten(layout(), &p.unflatten()).unwrap();
            let a: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn fp32_file_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 8)) {
            let p = FlatParams::from_parts(layout(), values).unwrap();
            let mut buf = Vec::new();
            p.write_to(&mut buf).unwrap();
            prop_assert_eq!(FlatParams::read_from(&buf[..]).unwrap(), p);
        }
    }

    #[test]
    fn header_is_one_json_line_then_le_floats() {
        let p = FlatParams::from_parts(layout(), (0..8).map(|i| i as f32).collect()).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["segments"][0]["role"], "weight");
        assert_eq!(header["segments"][1]["shape"][0], 2);
        assert_eq!(&buf[nl + 1 + 4..nl + 1 + 8], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), nl + 1 + 32);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let p = FlatParams::from_parts(layout(), vec![0.5; 8]).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            FlatParams::read_from(&buf[..]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn apply_and_delta_are_inverse() {
        let base = FlatParams::from_parts(layout(), vec![1.0; 8]).unwrap();
        let u = FlatUpdate::new(vec![0.5; 8]);
        let moved = base.apply(&u).unwrap();
        assert_eq!(moved.delta_from(&base).unwrap(), u);
        assert!(base.apply(&FlatUpdate::zeros(3)).is_err());
    }
}
