//! Directory of PGM/PPM images listed in `labels.csv` as `filename,label_index`.

use std::fmt::Write as _;
use std::path::Path;

use gmcl_core::data::{pixel_to_unit, unit_to_pixel, LabeledImageSet, Split};
use gmcl_core::{DatasetSpec, Scalar, Tensor};

use crate::error::{read, write, GmclError, Result};
use crate::pnm::{read_pnm, write_pnm, Pnm};

pub const MANIFEST: &str = "labels.csv";

/// Loads every listed image in manifest order. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_manifest_dir<T: Scalar>(dir: &Path, spec: &DatasetSpec, split: Split) -> Result<LabeledImageSet<T>> {
    let path = dir.join(MANIFEST);
    let text = String::from_utf8(read(&path)?).map_err(|_| GmclError::format(&path, "manifest is not UTF-8"))?;
    let (h, c) = (spec.image_size, spec.channels);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let bad = |msg: String| GmclError::format(&path, format!("line {line}: {msg}"));
        let (file, label) = content.split_once(',').ok_or_else(|| bad(format!("expected `filename,label_index`, got `{content}`")))?;
        let label: usize = label.trim().parse().map_err(|_| bad(format!("bad label `{}`", label.trim())))?;
        if label >= spec.num_classes {
            return Err(GmclError::consistency(&path, format!("line {line}: label {label} out of range for {} classes", spec.num_classes)));
        }
        let image_path = dir.join(file.trim());
        if !image_path.is_file() {
            return Err(GmclError::consistency(&path, format!("line {line}: missing image file `{}`", file.trim())));
        }
        let img = read_pnm(&image_path).map_err(|e| match e {
            GmclError::Format { message, .. } => GmclError::format(&path, format!("line {line}: {}: {message}", file.trim())),
            other => other,
        })?;
        if img.channels != c || img.width != h || img.height != h {
            return Err(GmclError::consistency(
                &path,
                format!("line {line}: `{}` is {}×{}×{}, dataset expects {c}×{h}×{h}", file.trim(), img.channels, img.height, img.width),
            ));
        }
        data.extend(img.planar().into_iter().map(pixel_to_unit::<T>));
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(GmclError::format(&path, "manifest lists no images"));
    }
    let images = Tensor::from_vec(&[labels.len(), c, h, h], data);
    Ok(LabeledImageSet::new(images, labels, split, spec)?)
}

/// Writes `images` as `{stem}_{i}.pgm/ppm` files plus a manifest.
pub fn write_manifest_dir<T: Scalar>(dir: &Path, set: &LabeledImageSet<T>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GmclError::io(dir, e))?;
    let shape = set.images.shape();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let mut manifest = String::new();
    for i in 0..set.len() {
        let name = format!("img_{i:05}.{ext}");
        let planar: Vec<u8> = set.image(i).iter().map(|&v| unit_to_pixel(v)).collect();
        write_pnm(&dir.join(&name), &Pnm::from_planar(c, h, w, &planar))?;
        let _ = writeln!(manifest, "{name},{}", set.labels[i]);
    }
    write(&dir.join(MANIFEST), manifest.as_bytes())
}
