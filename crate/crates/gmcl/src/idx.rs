//! IDX image/label pairs: big-endian headers, one unsigned byte per value.

use std::path::Path;

use gmcl_core::data::{pixel_to_unit, LabeledImageSet, Split};
use gmcl_core::{DatasetSpec, Scalar, Tensor};

use crate::error::{read, GmclError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(GmclError::format(path, format!("truncated header: {} bytes, need {need}", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    if word(0) != magic {
        return Err(GmclError::format(path, format!("bad magic {:#010x}, expected {magic:#010x}", word(0))));
    }
    let shape: Vec<usize> = (1..=dims).map(|i| word(i) as usize).collect();
    let body = bytes.len() - need;
    let expect: usize = shape.iter().product();
    if body != expect {
        return Err(GmclError::format(path, format!("payload is {body} bytes, header promises {expect}")));
    }
    Ok(shape)
}

/// Single-channel images `[n, rows, cols]` and their labels.
pub fn load_idx_pair<T: Scalar>(images: &Path, labels: &Path, spec: &DatasetSpec, split: Split) -> Result<LabeledImageSet<T>> {
    let ib = read(images)?;
    let lb = read(labels)?;
    let ishape = header(images, &ib, IMAGE_MAGIC, 3)?;
    let lshape = header(labels, &lb, LABEL_MAGIC, 1)?;
    if ishape[0] != lshape[0] {
        return Err(GmclError::consistency(labels, format!("{} labels for {} images", lshape[0], ishape[0])));
    }
    if spec.channels != 1 {
        return Err(GmclError::consistency(images, format!("IDX images are single-channel, dataset expects {}", spec.channels)));
    }
    if ishape[1] != spec.image_size || ishape[2] != spec.image_size {
        return Err(GmclError::consistency(
            images,
            format!("images are {}×{}, dataset expects {}×{}", ishape[1], ishape[2], spec.image_size, spec.image_size),
        ));
    }
    let n = ishape[0];
    let data = ib[16..].iter().map(|&p| pixel_to_unit::<T>(p)).collect();
    let labels_v: Vec<usize> = lb[8..].iter().map(|&l| l as usize).collect();
    if let Some((i, &l)) = labels_v.iter().enumerate().find(|(_, &l)| l >= spec.num_classes) {
        return Err(GmclError::consistency(labels, format!("label {l} at index {i} exceeds {} classes", spec.num_classes)));
    }
    let tensor = Tensor::from_vec(&[n, 1, ishape[1], ishape[2]], data);
    Ok(LabeledImageSet::new(tensor, labels_v, split, spec)?)
}

/// Encodes an IDX image file from bytes laid out `[n, rows, cols]`.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for w in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
