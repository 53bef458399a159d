//! Teacher generator, student classifier and the per-step meta schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::config::{DatasetSpec, StudentArch, TeacherArch, TrainingConfig};
use crate::error::{Error, Result};
use crate::init::standard_normal;
use crate::nn::{self, Layer, Mode, NetSettings, Parameter, Sequential};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Noise vectors and the labels they are conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    /// `[batch, latent_dim]`
    pub z: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LatentBatch<T> {
    /// `z ~ N(0, I)`; labels cycle through the classes so every batch is balanced.
    pub fn sample<R: Rng + ?Sized>(
        batch: usize,
        latent_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        LatentBatch {
            z: standard_normal(&[batch, latent_dim], rng),
            labels: (0..batch).map(|i| i % num_classes).collect(),
        }
    }

    /// `z ~ N(0, I)` for the given labels.
    pub fn with_labels<R: Rng + ?Sized>(labels: Vec<usize>, latent_dim: usize, rng: &mut R) -> Self {
        LatentBatch { z: standard_normal(&[labels.len(), latent_dim], rng), labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Conditional curriculum generator.
#[derive(Debug, Clone)]
pub struct TeacherGenerator<T> {
    pub latent_dim: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub net: Sequential<T>,
}

/// Layer stack of the teacher for the given sizes.
pub fn teacher_layers(
    arch: TeacherArch,
    latent_dim: usize,
    num_classes: usize,
    image_size: usize,
    channels: usize,
    widths: (usize, usize, usize),
) -> Vec<Layer> {
    let input = latent_dim + num_classes;
    match arch {
        TeacherArch::Conv => {
            let (hidden, fc_channels, conv_channels) = widths;
            let q = image_size / 4;
            vec![
                Layer::Linear { inputs: input, outputs: hidden },
                Layer::BatchNorm { channels: hidden },
                Layer::LeakyRelu,
                Layer::Linear { inputs: hidden, outputs: fc_channels * q * q },
                Layer::BatchNorm { channels: fc_channels * q * q },
                Layer::LeakyRelu,
                Layer::Reshape(vec![fc_channels, q, q]),
                Layer::Upsample2x,
                Layer::Conv { in_channels: fc_channels, out_channels: conv_channels, kernel: 3, stride: 1, padding: 1 },
                Layer::BatchNorm { channels: conv_channels },
                Layer::LeakyRelu,
                Layer::Upsample2x,
                Layer::Conv { in_channels: conv_channels, out_channels: channels, kernel: 3, stride: 1, padding: 1 },
                Layer::Tanh,
            ]
        }
        TeacherArch::Linear => vec![
            Layer::Linear { inputs: input, outputs: channels * image_size * image_size },
            Layer::Tanh,
            Layer::Reshape(vec![channels, image_size, image_size]),
        ],
    }
}

impl<T: Scalar> TeacherGenerator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainingConfig, spec: &DatasetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = teacher_layers(
            cfg.teacher_arch,
            cfg.latent_dim,
            spec.num_classes,
            spec.image_size,
            spec.channels,
            (cfg.teacher_hidden, cfg.teacher_fc_channels, cfg.teacher_conv_channels),
        );
        let settings = NetSettings { leaky_slope: cfg.leaky_slope, bn_eps: cfg.bn_eps, bn_momentum: 0.0 };
        Ok(TeacherGenerator {
            latent_dim: cfg.latent_dim,
            num_classes: spec.num_classes,
            image_size: spec.image_size,
            channels: spec.channels,
            net: Sequential::new("teacher", layers, settings, rng),
        })
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.net.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.net.params
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.net.bind(g)
    }

    /// Concatenation of `z` and the one-hot labels, `[batch, latent + classes]`.
    pub fn conditioned_input(&self, batch: &LatentBatch<T>) -> Result<Tensor<T>> {
        let zs = batch.z.shape();
        if zs.len() != 2 || zs[1] != self.latent_dim || zs[0] != batch.len() {
            return Err(Error::Dimension {
                op: "teacher_forward",
                left: zs.to_vec(),
                right: vec![batch.len(), self.latent_dim],
            });
        }
        let width = self.latent_dim + self.num_classes;
        let mut data = vec![T::zero(); batch.len() * width];
        for (i, &label) in batch.labels.iter().enumerate() {
            if label >= self.num_classes {
                return Err(Error::Label { index: i, label, classes: self.num_classes });
            }
            let row = &mut data[i * width..(i + 1) * width];
            row[..self.latent_dim]
                .copy_from_slice(&batch.z.data()[i * self.latent_dim..(i + 1) * self.latent_dim]);
            row[self.latent_dim + label] = T::one();
        }
        Ok(Tensor::from_vec(&[batch.len(), width], data))
    }

    /// Curriculum `[batch, C, H, H]` with values in (−1, 1).
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], batch: &LatentBatch<T>) -> Result<Var> {
        let input = self.conditioned_input(batch)?;
        let input = g.constant(input);
        self.net.forward(g, vars, input, Mode::Train)
    }

    /// Forward pass on a scratch graph; returns the curriculum values.
    pub fn generate(&mut self, batch: &LatentBatch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let out = self.forward(&mut g, &vars, batch)?;
        Ok(g.value(out).clone())
    }
}

/// Task classifier.
#[derive(Debug, Clone)]
pub struct StudentLearner<T> {
    pub num_classes: usize,
    pub channels: usize,
    pub image_size: usize,
    pub net: Sequential<T>,
}

pub fn student_layers(
    arch: StudentArch,
    channels: usize,
    image_size: usize,
    num_classes: usize,
    widths: [usize; 5],
    tiny_filters: usize,
) -> Vec<Layer> {
    match arch {
        StudentArch::Cnn => {
            let mut layers = Vec::new();
            let mut cin = channels;
            for (i, &w) in widths.iter().enumerate() {
                let stride = if i == 1 || i == 3 { 2 } else { 1 };
                layers.push(Layer::Conv { in_channels: cin, out_channels: w, kernel: 3, stride, padding: 1 });
                layers.push(Layer::BatchNorm { channels: w });
                layers.push(Layer::LeakyRelu);
                cin = w;
            }
            layers.push(Layer::GlobalAvgPool);
            layers.push(Layer::Linear { inputs: cin, outputs: num_classes });
            layers
        }
        StudentArch::TinyConv => vec![
            Layer::Conv { in_channels: channels, out_channels: tiny_filters, kernel: 3, stride: 1, padding: 1 },
            Layer::Tanh,
            Layer::Flatten,
            Layer::Linear { inputs: tiny_filters * image_size * image_size, outputs: num_classes },
        ],
        StudentArch::Linear => vec![
            Layer::Flatten,
            Layer::Linear { inputs: channels * image_size * image_size, outputs: num_classes },
        ],
    }
}

impl<T: Scalar> StudentLearner<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainingConfig, spec: &DatasetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if cfg.student_arch == StudentArch::Cnn && spec.image_size < 8 {
            return Err(Error::Config(format!(
                "the cnn student needs image_size ≥ 8, got {}",
                spec.image_size
            )));
        }
        let layers = student_layers(
            cfg.student_arch,
            spec.channels,
            spec.image_size,
            spec.num_classes,
            cfg.student_widths,
            cfg.tiny_filters,
        );
        let settings = NetSettings {
            leaky_slope: cfg.leaky_slope,
            bn_eps: cfg.bn_eps,
            bn_momentum: cfg.student_bn_momentum,
        };
        Ok(StudentLearner {
            num_classes: spec.num_classes,
            channels: spec.channels,
            image_size: spec.image_size,
            net: Sequential::new("student", layers, settings, rng),
        })
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.net.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.net.params
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.net.bind(g)
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.channels || shape[2] != self.image_size || shape[3] != self.image_size {
            return Err(Error::Dimension {
                op: "student_forward",
                left: shape.to_vec(),
                right: vec![self.channels, self.image_size, self.image_size],
            });
        }
        Ok(())
    }

    /// Logits `[batch, classes]` for `images[batch, C, H, H]`.
    /// A training-mode call needs at least two images.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], images: Var, mode: Mode) -> Result<Var> {
        self.check_images(g.shape(images))?;
        if mode == Mode::Train && g.shape(images)[0] < 2 {
            return Err(Error::DegenerateVariance { op: "student_forward", count: g.shape(images)[0] });
        }
        self.net.forward(g, vars, images, mode)
    }

    /// Evaluation-mode logits on a scratch graph.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &vars, x, Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Replaces the running batchnorm statistics with the average of the
    /// per-batch statistics over `chunks` (one pass, training mode).
    pub fn recompute_bn_stats<'a, I>(&mut self, chunks: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Tensor<T>>,
    {
        let mut sums: Option<Vec<crate::functional::BatchStats<T>>> = None;
        let mut count = 0usize;
        for chunk in chunks {
            self.check_images(chunk.shape())?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let x = g.constant(chunk.clone());
            let (_, stats) = self.net.forward_collect(&mut g, &vars, x)?;
            count += 1;
            sums = Some(match sums {
                None => stats,
                Some(acc) => acc
                    .into_iter()
                    .zip(stats)
                    .map(|(a, s)| {
                        Ok(crate::functional::BatchStats {
                            mean: a.mean.zip_map(&s.mean, "bn", |x, y| x + y)?,
                            var: a.var.zip_map(&s.var, "bn", |x, y| x + y)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            });
        }
        if let Some(sums) = sums {
            let inv = T::one() / T::from_f64_lossy(count as f64);
            self.net.running = sums
                .into_iter()
                .map(|s| crate::functional::BatchStats {
                    mean: s.mean.map(|v| v * inv),
                    var: s.var.map(|v| v * inv),
                })
                .collect();
        }
        Ok(())
    }
}

/// Learnable per-step learning rates `α_j = exp(raw_lr[j])` and momenta
/// `μ_j = sigmoid(raw_momentum[j])`.
#[derive(Debug, Clone)]
pub struct MetaSchedule<T> {
    /// `[raw_lr, raw_momentum]`, each of length `M`.
    pub params: Vec<Parameter<T>>,
}

impl<T: Scalar> MetaSchedule<T> {
    pub fn new(steps: usize, initial_lr: f64, initial_momentum: f64) -> Result<Self> {
        if steps == 0 || !(initial_lr > 0.0) || !(initial_momentum > 0.0 && initial_momentum < 1.0) {
            return Err(Error::Config(format!(
                "meta schedule needs steps ≥ 1, lr > 0 and momentum in (0,1); got {steps}, {initial_lr}, {initial_momentum}"
            )));
        }
        let raw_lr = T::from_f64_lossy(initial_lr).ln();
        let m = T::from_f64_lossy(initial_momentum);
        let raw_mom = (m / (T::one() - m)).ln();
        Ok(MetaSchedule {
            params: vec![
                Parameter::new("meta.raw_lr", Tensor::full(&[steps], raw_lr)),
                Parameter::new("meta.raw_momentum", Tensor::full(&[steps], raw_mom)),
            ],
        })
    }

    pub fn steps(&self) -> usize {
        self.params[0].value.numel()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        nn::bind(g, &self.params)
    }

    /// `(α_j, μ_j)` as differentiable scalar nodes.
    pub fn values(&self, g: &mut Graph<T>, vars: &[Var], j: usize) -> Result<(Var, Var)> {
        if j >= self.steps() {
            return Err(Error::Index { what: "schedule step", index: j, len: self.steps() });
        }
        let raw_lr = g.select(vars[0], j)?;
        let raw_mom = g.select(vars[1], j)?;
        Ok((g.exp(raw_lr), g.sigmoid(raw_mom)))
    }

    /// `(α_j, μ_j)` as plain numbers.
    pub fn effective(&self, j: usize) -> Result<(T, T)> {
        if j >= self.steps() {
            return Err(Error::Index { what: "schedule step", index: j, len: self.steps() });
        }
        let lr = self.params[0].value.data()[j].exp();
        let x = self.params[1].value.data()[j];
        Ok((lr, T::one() / (T::one() + (-x).exp())))
    }
}
