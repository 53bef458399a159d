//! Teacher curriculum written out as images.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gmcl_core::data::unit_to_pixel;
use gmcl_core::{LatentBatch, RunState, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{write, GmclError, Result};
use crate::manifest::MANIFEST;
use crate::pnm::{write_pnm, Pnm};

/// What an export produced.
#[derive(Debug, Clone)]
pub struct ExportedCurriculum<T> {
    pub files: Vec<PathBuf>,
    /// Teacher output `[classes · count, c, H, H]`, class-major.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Generates `count` images per class from seeded latents in one batch and
/// writes them as `class{k}_{i}.pgm` (one channel) or `.ppm` (three
/// channels), plus a `labels.csv` manifest so the directory loads back as a
/// dataset.
pub fn export_curriculum<T: Scalar>(state: &mut RunState<T>, out_dir: &Path, count: usize, seed: u64) -> Result<ExportedCurriculum<T>> {
    let teacher = state
        .teacher
        .as_mut()
        .ok_or_else(|| gmcl_core::Error::Config("checkpoint holds no teacher (plain trainer run)".into()))?;
    if count == 0 {
        return Err(gmcl_core::Error::Config("export count must be at least 1".into()).into());
    }
    let (k, c, h) = (teacher.num_classes, teacher.channels, teacher.image_size);
    let labels: Vec<usize> = (0..k).flat_map(|class| std::iter::repeat_n(class, count)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = LatentBatch::with_labels(labels.clone(), teacher.latent_dim, &mut rng);
    let images = teacher.generate(&batch)?;

    std::fs::create_dir_all(out_dir).map_err(|e| GmclError::io(out_dir, e))?;
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let per = c * h * h;
    let mut files = Vec::with_capacity(labels.len());
    let mut manifest = String::new();
    for (n, &class) in labels.iter().enumerate() {
        let i = n % count;
        let name = format!("class{class}_{i}.{ext}");
        let planar: Vec<u8> = images.data()[n * per..(n + 1) * per].iter().map(|&v| unit_to_pixel(v)).collect();
        let path = out_dir.join(&name);
        write_pnm(&path, &Pnm::from_planar(c, h, h, &planar))?;
        let _ = writeln!(manifest, "{name},{class}");
        files.push(path);
    }
    write(&out_dir.join(MANIFEST), manifest.as_bytes())?;
    Ok(ExportedCurriculum { files, images, labels })
}
