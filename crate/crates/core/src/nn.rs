//! Named parameters and a small sequential network container.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::functional::{self, BatchStats};
use crate::init::kaiming_normal;
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Momentum buffer (SGD).
    pub velocity: Option<Tensor<T>>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter { name: name.into(), value, velocity: None, adam: None }
    }

    pub fn velocity_or_zeros(&self) -> Tensor<T> {
        self.velocity.clone().unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn adam_state(&mut self) -> &mut AdamState<T> {
        let shape = self.value.shape().to_vec();
        self.adam.get_or_insert_with(|| AdamState::new(&shape))
    }
}

/// Places every parameter into `g` as a trainable leaf, in order.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &[Parameter<T>]) -> Vec<Var> {
    params.iter().map(|p| g.param(p.value.clone())).collect()
}

/// Gradients of `loss` w.r.t. `vars`, reporting unreachable ones by name.
pub fn named_gradients<T: Scalar>(
    g: &mut Graph<T>,
    loss: Var,
    vars: &[Var],
    names: &[&str],
) -> Result<Vec<Tensor<T>>> {
    g.gradients(loss, vars).map_err(|e| rename_unreachable(e, names))
}

pub(crate) fn rename_unreachable(e: Error, names: &[&str]) -> Error {
    match e {
        Error::Unreachable { name } => {
            let resolved = name
                .strip_prefix('#')
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| names.get(i))
                .map(|n| String::from(*n))
                .unwrap_or(name);
            Error::Unreachable { name: resolved }
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Linear { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize },
    LeakyRelu,
    Tanh,
    Upsample2x,
    GlobalAvgPool,
    /// Reshape each sample to the given per-sample shape.
    Reshape(Vec<usize>),
    Flatten,
}

impl Layer {
    fn param_count(&self) -> usize {
        match *self {
            Layer::Linear { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv { in_channels, out_channels, kernel, .. } => {
                out_channels * in_channels * kernel * kernel + out_channels
            }
            Layer::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are refreshed.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSettings {
    pub leaky_slope: f64,
    pub bn_eps: f64,
    /// Weight of the old value in the running-statistics update.
    pub bn_momentum: f64,
}

/// Layers applied in order. Parameters are stored flat, in layer order.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    layers: Vec<Layer>,
    pub params: Vec<Parameter<T>>,
    /// One entry per batchnorm layer, in order.
    pub running: Vec<BatchStats<T>>,
    bn_names: Vec<String>,
    settings: NetSettings,
}

pub fn param_count(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::param_count).sum()
}

impl<T: Scalar> Sequential<T> {
    /// Kaiming-normal weights, zero biases, unit batchnorm scale.
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        layers: Vec<Layer>,
        settings: NetSettings,
        rng: &mut R,
    ) -> Self {
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut bn_names = Vec::new();
        let (mut fc, mut conv, mut bn) = (0, 0, 0);
        for layer in &layers {
            match *layer {
                Layer::Linear { inputs, outputs } => {
                    fc += 1;
                    let w = kaiming_normal(&[outputs, inputs], inputs, settings.leaky_slope, rng);
                    params.push(Parameter::new(format!("{prefix}.fc{fc}.weight"), w));
                    params.push(Parameter::new(
                        format!("{prefix}.fc{fc}.bias"),
                        Tensor::zeros(&[outputs]),
                    ));
                }
                Layer::Conv { in_channels, out_channels, kernel, .. } => {
                    conv += 1;
                    let fan_in = in_channels * kernel * kernel;
                    let w = kaiming_normal(
                        &[out_channels, in_channels, kernel, kernel],
                        fan_in,
                        settings.leaky_slope,
                        rng,
                    );
                    params.push(Parameter::new(format!("{prefix}.conv{conv}.weight"), w));
                    params.push(Parameter::new(
                        format!("{prefix}.conv{conv}.bias"),
                        Tensor::zeros(&[out_channels]),
                    ));
                }
                Layer::BatchNorm { channels } => {
                    bn += 1;
                    params.push(Parameter::new(
                        format!("{prefix}.bn{bn}.gamma"),
                        Tensor::ones(&[channels]),
                    ));
                    params.push(Parameter::new(
                        format!("{prefix}.bn{bn}.beta"),
                        Tensor::zeros(&[channels]),
                    ));
                    running.push(BatchStats {
                        mean: Tensor::zeros(&[channels]),
                        var: Tensor::ones(&[channels]),
                    });
                    bn_names.push(format!("{prefix}.bn{bn}"));
                }
                _ => {}
            }
        }
        Sequential { layers, params, running, bn_names, settings }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn settings(&self) -> NetSettings {
        self.settings
    }

    /// Name prefix of each batchnorm layer, parallel to `running`.
    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        bind(g, &self.params)
    }

    /// Runs the network on `input` using parameter nodes `vars`.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], input: Var, mode: Mode) -> Result<Var> {
        let (out, stats) = self.run(g, vars, input, mode)?;
        if mode == Mode::Train {
            let keep = T::from_f64_lossy(self.settings.bn_momentum);
            let fresh = T::one() - keep;
            for (r, s) in self.running.iter_mut().zip(stats) {
                r.mean = r.mean.zip_map(&s.mean, "running", |old, new| fresh * new + keep * old)?;
                r.var = r.var.zip_map(&s.var, "running", |old, new| fresh * new + keep * old)?;
            }
        }
        Ok(out)
    }

    /// Training-mode pass that returns the batch statistics of every
    /// batchnorm layer without touching the running statistics.
    pub fn forward_collect(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: Var,
    ) -> Result<(Var, Vec<BatchStats<T>>)> {
        self.run(g, vars, input, Mode::Train)
    }

    fn run(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<BatchStats<T>>)> {
        if vars.len() != self.params.len() {
            return Err(Error::Dimension {
                op: "sequential",
                left: vec![self.params.len()],
                right: vec![vars.len()],
            });
        }
        let slope = T::from_f64_lossy(self.settings.leaky_slope);
        let eps = T::from_f64_lossy(self.settings.bn_eps);
        let mut x = input;
        let mut p = vars.iter().copied();
        let mut next = || p.next().expect("parameter count checked above");
        let mut bn_index = 0;
        let mut stats = Vec::new();
        for layer in &self.layers {
            x = match layer {
                Layer::Linear { .. } => {
                    let (w, b) = (next(), next());
                    functional::linear(g, x, w, b)?
                }
                Layer::Conv { stride, padding, .. } => {
                    let (w, b) = (next(), next());
                    functional::conv2d(g, x, w, b, *stride, *padding)?
                }
                Layer::BatchNorm { .. } => {
                    let (gamma, beta) = (next(), next());
                    let y = match mode {
                        Mode::Train => {
                            let (y, s) = functional::batchnorm_train(g, x, gamma, beta, eps)?;
                            stats.push(s);
                            y
                        }
                        Mode::Eval => {
                            functional::batchnorm_eval(g, x, gamma, beta, &self.running[bn_index], eps)?
                        }
                    };
                    bn_index += 1;
                    y
                }
                Layer::LeakyRelu => g.leaky_relu(x, slope),
                Layer::Tanh => g.tanh(x),
                Layer::Upsample2x => g.upsample2x(x)?,
                Layer::GlobalAvgPool => functional::global_avg_pool(g, x)?,
                Layer::Reshape(per_sample) => {
                    let mut shape = vec![g.shape(x)[0]];
                    shape.extend_from_slice(per_sample);
                    g.reshape(x, &shape)?
                }
                Layer::Flatten => {
                    let s = g.shape(x);
                    let shape = [s[0], s[1..].iter().product()];
                    g.reshape(x, &shape)?
                }
            };
        }
        Ok((x, stats))
    }
}
