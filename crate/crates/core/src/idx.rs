//! Reader for the big-endian IDX containers used by MNIST-style image sets.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::noise::{LabeledDataset, Split};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: "header truncated".into(),
        })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load `limit` (or all) images as flattened rows; labels are kept as stored,
/// so there are `max_label + 1` classes. With `normalize`, pixels are scaled to `[0, 1]`.
pub fn load_idx_images(images: &Path, labels: &Path, limit: Option<usize>, normalize: bool) -> Result<LabeledDataset> {
    if limit == Some(0) {
        return Err(Error::invalid("limit must be positive"));
    }
    let img = read(images)?;
    let lab = read(labels)?;
    parse_idx(&img, &lab, limit, normalize)
}

pub fn parse_idx(img: &[u8], lab: &[u8], limit: Option<usize>, normalize: bool) -> Result<LabeledDataset> {
    if limit == Some(0) {
        return Err(Error::invalid("limit must be positive"));
    }
    let magic = be_u32(img, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let magic = be_u32(lab, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(img, 4)? as usize;
    let rows = be_u32(img, 8)? as usize;
    let cols = be_u32(img, 12)? as usize;
    let label_count = be_u32(lab, 4)? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{count} images but {label_count} labels"),
        });
    }
    let n = limit.map_or(count, |l| l.min(count));
    if n == 0 {
        return Err(Error::invalid("IDX file holds no images"));
    }
    let pixels = rows * cols;
    let need = 16 + n * pixels;
    if img.len() < need {
        return Err(Error::Format {
            offset: img.len() as u64,
            message: format!("image payload truncated, expected {need} bytes"),
        });
    }
    if lab.len() < 8 + n {
        return Err(Error::Format {
            offset: lab.len() as u64,
            message: format!("label payload truncated, expected {} bytes", 8 + n),
        });
    }
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let data = img[16..need].iter().map(|&b| b as f64 * scale).collect();
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(Matrix::from_vec(n, pixels, data)?, labels, classes, Split::Train)
}
