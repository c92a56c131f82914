//! Reader and writer for the big-endian IDX format used by MNIST-family
//! datasets.

use std::path::Path;

use super::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::nn::DenseTensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn expect_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let got = be_u32(bytes, 0, path)?;
    if got != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn expect_len(bytes: &[u8], want: usize, header: usize, path: &Path) -> Result<()> {
    if bytes.len() != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(want) as u64,
            message: format!(
                "expected {} payload bytes after the {header}-byte header, found {}",
                want - header,
                bytes.len().saturating_sub(header)
            ),
        });
    }
    Ok(())
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
///
/// The class count is inferred as `max(label) + 1`; use
/// [`Dataset::with_num_classes`] to widen it.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    expect_magic(&images, IMAGES_MAGIC, images_path)?;
    expect_magic(&labels, LABELS_MAGIC, labels_path)?;
    let n_images = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!(
                "{n_labels} labels for {n_images} images in {}",
                images_path.display()
            ),
        });
    }
    let pixels = rows * cols;
    expect_len(&images, 16 + n_images * pixels, 16, images_path)?;
    expect_len(&labels, 8 + n_labels, 8, labels_path)?;

    let mut examples = Vec::with_capacity(n_images);
    let mut max_label = None::<usize>;
    for i in 0..n_images {
        let start = 16 + i * pixels;
        let values = images[start..start + pixels]
            .iter()
            .map(|&b| f32::from(b) / 255.0)
            .collect();
        let label = usize::from(labels[8 + i]);
        max_label = Some(max_label.map_or(label, |m| m.max(label)));
        examples.push(LabeledExample {
            input: DenseTensor::new(vec![1, rows, cols], values)?,
            label,
        });
    }
    Dataset::new(
        examples,
        max_label.map_or(0, |m| m + 1),
        vec![1, rows, cols],
    )
}

/// Writes an images file; `pixels` holds `count * rows * cols` bytes.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::invalid(
            "pixel buffer is not a whole number of images",
        ));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend(((pixels.len() / per) as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = vec![0, 255, 51, 102, 7, 8, 9, 10];
        write_idx_images(&img, 2, 2, &pixels).unwrap();
        write_idx_labels(&lab, &[3, 1]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_shape(), &[1, 2, 2]);
        assert_eq!(ds.labels(), vec![3, 1]);
        assert_eq!(ds.num_classes(), 4);
        for (k, &b) in pixels.iter().enumerate() {
            assert_eq!(
                ds.examples()[k / 4].input.values()[k % 4],
                f32::from(b) / 255.0
            );
        }
    }

    #[test]
    fn empty_pair_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        let mut header = Vec::new();
        header.extend(IMAGES_MAGIC.to_be_bytes());
        header.extend(0u32.to_be_bytes());
        header.extend(28u32.to_be_bytes());
        header.extend(28u32.to_be_bytes());
        std::fs::write(&img, header).unwrap();
        write_idx_labels(&lab, &[]).unwrap();
        assert!(load_idx(&img, &lab).unwrap().is_empty());
    }

    #[test]
    fn malformed_files_are_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&img, 2, 2, &[1; 8]).unwrap();
        write_idx_labels(&lab, &[0]).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");

        write_idx_labels(&lab, &[0, 1]).unwrap();
        let mut bytes = std::fs::read(&img).unwrap();
        bytes.pop();
        std::fs::write(&img, &bytes).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");

        bytes[3] = 0x01;
        std::fs::write(&img, &bytes).unwrap();
        assert!(load_idx(&img, &lab)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
    }
}
