//! In-memory labeled image sets, the synthetic stand-in dataset, the two
//! augmentation pipelines and patch tiling. File formats live in the std
//! companion crate.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Augmentation, DatasetSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel byte → `[−1, 1]`.
pub fn pixel_to_unit<T: Scalar>(p: u8) -> T {
    T::from_f64_lossy(p as f64 / 127.5 - 1.0)
}

/// `[−1, 1]` → pixel byte by `round((v + 1) · 127.5)`, clamped.
pub fn unit_to_pixel<T: Scalar>(v: T) -> u8 {
    let x = Float::round((v.as_f64() + 1.0) * 127.5);
    if x.is_nan() {
        0
    } else {
        x.clamp(0.0, 255.0) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet<T> {
    /// `[n, channels, H, H]`, values in `[−1, 1]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl<T: Scalar> LabeledImageSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, split: Split, spec: &DatasetSpec) -> Result<Self> {
        let s = images.shape();
        let expected = [labels.len(), spec.channels, spec.image_size, spec.image_size];
        if s != expected {
            return Err(Error::Dimension { op: "image set", left: s.to_vec(), right: expected.to_vec() });
        }
        if labels.is_empty() {
            return Err(Error::Input("image set is empty".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= spec.num_classes) {
            return Err(Error::Label { index, label, classes: spec.num_classes });
        }
        Ok(LabeledImageSet { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.images.numel() / self.len().max(1)
    }

    pub fn image(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        (Tensor::from_vec(&shape, data), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Consecutive batches of at most `size` samples.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = (Tensor<T>, Vec<usize>)> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.gather(&idx)
        })
    }

    /// A uniformly random batch of distinct samples.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<(Tensor<T>, Vec<usize>)> {
        if batch > self.len() {
            return Err(Error::Config(alloc::format!(
                "batch of {batch} requested from a set of {}",
                self.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, self.len(), batch).into_vec();
        Ok(self.gather(&idx))
    }
}

/// Per-class grating frequency (random orientation and phase) over a class
/// colour, with a class-independent distractor grating, a random colour cast
/// and Gaussian noise. Labels survive flips and right-angle rotations.
const SYNTH_NOISE: f64 = 0.15;
const SYNTH_SIGNAL: f64 = 0.4;
const SYNTH_TINT: f64 = 1.0;
const SYNTH_DISTRACTOR: f64 = 0.2;
const SYNTH_CAST: f64 = 1.3;

/// Sign pattern of the class colour: vertices of a tetrahedron in RGB.
const TINT_SIGNS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

/// Class-conditional textured images, `n_per_class` of each class, ordered
/// class-major. Deterministic in `seed`.
pub fn synth_generate<T: Scalar>(spec: &DatasetSpec, n_per_class: usize, seed: u64, split: Split) -> Result<LabeledImageSet<T>> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Input("synthetic set needs at least one image per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("positive sigma");
    let (h, c, k) = (spec.image_size, spec.channels, spec.num_classes);
    let mut data = Vec::with_capacity(k * n_per_class * c * h * h);
    let mut labels = Vec::with_capacity(k * n_per_class);
    let mut cast = vec![0.0; c];
    for class in 0..k {
        let freq = 1.5 + class as f64;
        let signs = TINT_SIGNS[class % 4];
        for _ in 0..n_per_class {
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = SYNTH_SIGNAL * rng.random_range(0.8..1.2);
            let (ca, sa) = (Float::cos(angle), Float::sin(angle));
            let d_angle = rng.random_range(0.0..PI);
            let d_freq = rng.random_range(1.0..1.5 + k as f64);
            let d_phase = rng.random_range(0.0..2.0 * PI);
            let (da, db) = (Float::cos(d_angle), Float::sin(d_angle));
            for v in cast.iter_mut() {
                *v = rng.random_range(-SYNTH_CAST..SYNTH_CAST);
            }
            for ch in 0..c {
                let tint = SYNTH_TINT * signs[ch % 3] + cast[ch];
                for y in 0..h {
                    for x in 0..h {
                        let (xf, yf) = (x as f64 / h as f64, y as f64 / h as f64);
                        let u = xf * ca + yf * sa;
                        let d = xf * da + yf * db;
                        let v = tint
                            + amp * Float::sin(2.0 * PI * freq * u + phase)
                            + SYNTH_DISTRACTOR * Float::sin(2.0 * PI * d_freq * d + d_phase)
                            + noise.sample(&mut rng);
                        data.push(T::from_f64_lossy(v.clamp(-1.0, 1.0)));
                    }
                }
            }
            labels.push(class);
        }
    }
    let images = Tensor::from_vec(&[k * n_per_class, c, h, h], data);
    LabeledImageSet::new(images, labels, split, spec)
}

/// Reflect index into `[0, n)` (edge not repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Crop offset pair for a reflect-padded image, uniform over `[0, 2·pad]²`.
pub fn crop_offsets<R: Rng + ?Sized>(pad: usize, rng: &mut R) -> (usize, usize) {
    (rng.random_range(0..=2 * pad), rng.random_range(0..=2 * pad))
}

/// Crops one `[c, h, w]` image out of its reflect-padded version at offset
/// `(dy, dx)` and optionally mirrors it horizontally.
pub fn crop_flip_image<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize, flip: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len());
    for ch in 0..c {
        for y in 0..h {
            let sy = reflect(y as isize + dy as isize - pad as isize, h);
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                let sx = reflect(xx as isize + dx as isize - pad as isize, w);
                out.push(img[(ch * h + sy) * w + sx]);
            }
        }
    }
    out
}

/// Reflect-pad by `pad`, random crop back to size, 50% horizontal flip.
pub fn augment_crop_flip<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, pad: usize, rng: &mut R) -> Tensor<T> {
    let s = batch.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let per = c * h * w;
    let mut data = Vec::with_capacity(batch.numel());
    for i in 0..b {
        let (dy, dx) = crop_offsets(pad, rng);
        let flip = rng.random_bool(0.5);
        data.extend(crop_flip_image(&batch.data()[i * per..(i + 1) * per], c, h, w, pad, dy, dx, flip));
    }
    Tensor::from_vec(s, data)
}

/// Quarter turns counter-clockwise of a square `[c, h, h]` image.
pub fn rotate90<T: Scalar>(img: &[T], c: usize, h: usize, turns: usize) -> Vec<T> {
    let mut cur = img.to_vec();
    for _ in 0..turns % 4 {
        let mut next = vec![T::zero(); cur.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..h {
                    // out[y][x] = in[x][h-1-y]
                    next[(ch * h + y) * h + x] = cur[(ch * h + x) * h + (h - 1 - y)];
                }
            }
        }
        cur = next;
    }
    cur
}

pub fn flip_horizontal<T: Scalar>(img: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = img.to_vec();
    for row in out.chunks_mut(w).take(c * h) {
        row.reverse();
    }
    out
}

pub fn flip_vertical<T: Scalar>(img: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len());
    for ch in 0..c {
        for y in (0..h).rev() {
            out.extend_from_slice(&img[(ch * h + y) * w..(ch * h + y + 1) * w]);
        }
    }
    out
}

/// Per-channel `clamp(scale · x + shift, −1, 1)`.
pub fn color_jitter<T: Scalar>(img: &mut [T], c: usize, scales: &[f64], shifts: &[f64]) {
    let per = img.len() / c.max(1);
    for ch in 0..c {
        let (a, b) = (T::from_f64_lossy(scales[ch]), T::from_f64_lossy(shifts[ch]));
        for v in &mut img[ch * per..(ch + 1) * per] {
            *v = (a * *v + b).max(-T::one()).min(T::one());
        }
    }
}

/// Random quarter-turn rotation, horizontal and vertical flips, and
/// per-channel contrast (×U[0.8, 1.2]) / brightness (+U[−0.1, 0.1]) jitter.
pub fn augment_traditional<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, rng: &mut R) -> Tensor<T> {
    let s = batch.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let per = c * h * w;
    let mut data = Vec::with_capacity(batch.numel());
    for i in 0..b {
        let mut img = batch.data()[i * per..(i + 1) * per].to_vec();
        if h == w {
            img = rotate90(&img, c, h, rng.random_range(0..4));
        }
        if rng.random_bool(0.5) {
            img = flip_horizontal(&img, c, h, w);
        }
        if rng.random_bool(0.5) {
            img = flip_vertical(&img, c, h, w);
        }
        let scales: Vec<f64> = (0..c).map(|_| rng.random_range(0.8..=1.2)).collect();
        let shifts: Vec<f64> = (0..c).map(|_| rng.random_range(-0.1..=0.1)).collect();
        color_jitter(&mut img, c, &scales, &shifts);
        data.extend(img);
    }
    Tensor::from_vec(s, data)
}

pub fn augment<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, kind: Augmentation, rng: &mut R) -> Tensor<T> {
    match kind {
        Augmentation::None => batch.clone(),
        Augmentation::CropFlip => augment_crop_flip(batch, 4, rng),
        Augmentation::Traditional => augment_traditional(batch, rng),
    }
}

/// Non-overlapping `patch × patch` tiles of a `[c, H, W]` image in row-major
/// tile order; incomplete edge tiles are dropped.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Vec<Tensor<T>>> {
    let s = image.shape();
    if s.len() != 3 || patch == 0 {
        return Err(Error::Input(alloc::format!("patchify expects [c, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < patch || w < patch {
        return Err(Error::Input(alloc::format!("{h}×{w} image is smaller than a {patch}×{patch} patch")));
    }
    let mut out = Vec::new();
    for ty in 0..h / patch {
        for tx in 0..w / patch {
            let mut data = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for y in 0..patch {
                    let row = (ch * h + ty * patch + y) * w + tx * patch;
                    data.extend_from_slice(&image.data()[row..row + patch]);
                }
            }
            out.push(Tensor::from_vec(&[c, patch, patch], data));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize, c: usize) -> DatasetSpec {
        DatasetSpec { image_size: h, channels: c, ..DatasetSpec::default() }
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(pixel_to_unit::<f64>(255), 1.0);
        assert_eq!(pixel_to_unit::<f64>(0), -1.0);
        assert_eq!(unit_to_pixel(-1.0f64), 0);
        assert_eq!(unit_to_pixel(1.0f64), 255);
        for p in 0..=255u8 {
            assert_eq!(unit_to_pixel(pixel_to_unit::<f32>(p)), p);
        }
    }

    #[test]
    fn synth_counts_and_determinism() {
        let s = spec(16, 3);
        let a = synth_generate::<f32>(&s, 1, 5, Split::Train).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a.labels, vec![0, 1, 2, 3]);
        let b = synth_generate::<f32>(&s, 1, 5, Split::Train).unwrap();
        assert_eq!(a, b);
        let c = synth_generate::<f32>(&s, 1, 6, Split::Train).unwrap();
        assert_ne!(a.images, c.images);
        assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(8, 5), 0);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn centered_crop_without_flip_is_identity() {
        let img: Vec<f64> = (0..2 * 4 * 4).map(|i| i as f64).collect();
        assert_eq!(crop_flip_image(&img, 2, 4, 4, 4, 4, 4, false), img);
        let once = crop_flip_image(&img, 2, 4, 4, 4, 4, 4, true);
        assert_eq!(crop_flip_image(&once, 2, 4, 4, 4, 4, 4, true), img);
    }

    #[test]
    fn rotation_group() {
        let img: Vec<f64> = (0..3 * 5 * 5).map(|i| (i as f64).sin()).collect();
        assert_eq!(rotate90(&img, 3, 5, 4), img);
        let quarter = rotate90(&img, 3, 5, 1);
        assert_ne!(quarter, img);
        assert_eq!(rotate90(&quarter, 3, 5, 3), img);
    }

    #[test]
    fn neutral_jitter_is_identity() {
        let mut img: Vec<f64> = (0..2 * 9).map(|i| (i as f64 * 0.3).cos()).collect();
        let before = img.clone();
        color_jitter(&mut img, 2, &[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(img, before);
    }

    #[test]
    fn patch_tiling() {
        let img = Tensor::<f64>::from_fn(&[1, 64, 64], |i| i as f64);
        assert_eq!(patchify(&img, 32).unwrap().len(), 4);
        let tall = Tensor::<f64>::zeros(&[1, 33, 64]);
        assert_eq!(patchify(&tall, 32).unwrap().len(), 2);
        assert!(patchify(&Tensor::<f64>::zeros(&[1, 31, 64]), 32).is_err());
    }
}
