//! Run configuration and its flat `key = value` text form.
//!
//! The same text is used for configuration files and for the config
//! section of checkpoints. Missing keys take their defaults; unknown keys
//! are rejected.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentStrategy {
    /// One bank of `M` latent batches drawn at start and reused.
    FixedAcrossTraining,
    ResampledPerMetaIteration,
    ResampledPerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    None,
    /// Reflect-pad by 4, random crop, random horizontal flip.
    CropFlip,
    /// Quarter-turn rotation, flips, brightness/contrast jitter.
    Traditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainer {
    Gmcl,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherArch {
    /// fc → fc → two upsample+conv stages, batchnorm throughout.
    Conv,
    /// One linear layer and a tanh.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentArch {
    /// Five 3×3 conv/batchnorm/leaky-ReLU blocks, global pooling, one FC.
    Cnn,
    /// One conv (tanh) and an FC over the flattened map.
    TinyConv,
    Linear,
}

macro_rules! keyword_enum {
    ($t:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $text),+ }
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> core::result::Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(format!("unknown value `{s}`")),
                }
            }
        }
    };
}

keyword_enum!(Precision { Precision::F32 => "f32", Precision::F64 => "f64" });
keyword_enum!(LatentStrategy {
    LatentStrategy::FixedAcrossTraining => "fixed_across_training",
    LatentStrategy::ResampledPerMetaIteration => "resampled_per_meta_iteration",
    LatentStrategy::ResampledPerStep => "resampled_per_step",
});
keyword_enum!(Augmentation {
    Augmentation::None => "none",
    Augmentation::CropFlip => "crop_flip",
    Augmentation::Traditional => "traditional",
});
keyword_enum!(Trainer { Trainer::Gmcl => "gmcl", Trainer::Plain => "plain" });
keyword_enum!(TeacherArch { TeacherArch::Conv => "conv", TeacherArch::Linear => "linear" });
keyword_enum!(StudentArch {
    StudentArch::Cnn => "cnn",
    StudentArch::TinyConv => "tiny_conv",
    StudentArch::Linear => "linear",
});

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub trainer: Trainer,
    /// N
    pub meta_iterations: usize,
    /// M
    pub teach_steps: usize,
    /// Student step size used when the schedule is not adaptive, and by the
    /// plain learner.
    pub learning_rate: f64,
    pub initial_lr: f64,
    pub initial_momentum: f64,
    pub teacher_lr: f64,
    pub meta_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub latent_dim: usize,
    pub inner_batch: usize,
    pub outer_batch: usize,
    pub latent_strategy: LatentStrategy,
    pub adaptive_schedule: bool,
    pub seed: u64,
    pub precision: Precision,
    /// Applied to real batches by both trainers.
    pub real_augmentation: Augmentation,
    pub teacher_arch: TeacherArch,
    pub teacher_hidden: usize,
    pub teacher_fc_channels: usize,
    pub teacher_conv_channels: usize,
    pub student_arch: StudentArch,
    pub student_widths: [usize; 5],
    pub tiny_filters: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub student_bn_momentum: f64,
    /// 0 disables periodic evaluation (the final iteration is always evaluated).
    pub eval_every: usize,
    /// Recompute student batchnorm statistics over the training set before evaluating.
    pub eval_bn_recompute: bool,
    /// Drop the teaching loop entirely; only used for baseline equivalence checks.
    pub skip_teaching: bool,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            trainer: Trainer::Gmcl,
            meta_iterations: 2000,
            teach_steps: 16,
            learning_rate: 0.02,
            initial_lr: 0.02,
            initial_momentum: 0.5,
            teacher_lr: 0.01,
            meta_lr: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.9,
            adam_eps: 1e-5,
            latent_dim: 128,
            inner_batch: 64,
            outer_batch: 128,
            latent_strategy: LatentStrategy::FixedAcrossTraining,
            adaptive_schedule: true,
            seed: 0,
            precision: Precision::F32,
            real_augmentation: Augmentation::CropFlip,
            teacher_arch: TeacherArch::Conv,
            teacher_hidden: 1024,
            teacher_fc_channels: 128,
            teacher_conv_channels: 64,
            student_arch: StudentArch::Cnn,
            student_widths: [32, 64, 64, 128, 128],
            tiny_filters: 2,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            student_bn_momentum: 0.0,
            eval_every: 100,
            eval_bn_recompute: false,
            skip_teaching: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// H; images are H × H.
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Sizes used when the synthetic set stands in for real data.
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            image_size: 32,
            channels: 3,
            num_classes: 4,
            class_names: ["epithelial", "inflammatory", "fibroblast", "miscellaneous"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            synthetic_train_per_class: 64,
            synthetic_test_per_class: 128,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 4, got {}",
                self.image_size
            )));
        }
        if self.channels == 0 || self.num_classes < 2 {
            return Err(Error::Config("need channels ≥ 1 and num_classes ≥ 2".into()));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "class_names has {} entries for num_classes = {}",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.meta_iterations < 1 || self.teach_steps < 1 {
            return bad(format!(
                "meta_iterations and teach_steps must be ≥ 1 (got {} and {})",
                self.meta_iterations, self.teach_steps
            ));
        }
        if self.inner_batch < 2 || self.outer_batch < 2 {
            return bad(format!(
                "inner_batch and outer_batch must be ≥ 2 (got {} and {})",
                self.inner_batch, self.outer_batch
            ));
        }
        if !(self.learning_rate > 0.0 && self.initial_lr > 0.0) {
            return bad("learning_rate and initial_lr must be > 0".into());
        }
        // zero freezes the teacher / schedule
        if !(self.teacher_lr >= 0.0 && self.meta_lr >= 0.0) {
            return bad("teacher_lr and meta_lr must be ≥ 0".into());
        }
        if !(self.initial_momentum > 0.0 && self.initial_momentum < 1.0) {
            return bad("initial_momentum must lie in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("adam_beta1 and adam_beta2 must lie in [0, 1) and adam_eps must be > 0".into());
        }
        if self.latent_dim == 0 || self.student_widths.contains(&0) || self.tiny_filters == 0 {
            return bad("latent_dim, student_widths and tiny_filters must be positive".into());
        }
        if self.teacher_hidden == 0 || self.teacher_fc_channels == 0 || self.teacher_conv_channels == 0 {
            return bad("teacher_hidden, teacher_fc_channels and teacher_conv_channels must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.student_bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("student_bn_momentum must lie in [0, 1] and bn_eps must be > 0".into());
        }
        Ok(())
    }
}

/// Parsed configuration file: training settings plus the dataset description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub dataset: DatasetSpec,
}

fn parse_value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V>
where
    V::Err: core::fmt::Display,
{
    raw.parse::<V>()
        .map_err(|e| Error::Config(format!("line {line}: bad value for `{key}`: {e}")))
}

/// Whether `key` occurs in `msg` as a whole identifier.
fn mentions(msg: &str, key: &str) -> bool {
    let ident = |c: char| c.is_alphanumeric() || c == '_';
    msg.match_indices(key).any(|(i, _)| {
        let before = msg[..i].chars().next_back();
        let after = msg[i + key.len()..].chars().next();
        !before.is_some_and(ident) && !after.is_some_and(ident)
    })
}

fn parse_bool(raw: &str) -> core::result::Result<bool, String> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true/false, got `{raw}`")),
    }
}

fn parse_widths(raw: &str) -> core::result::Result<[usize; 5], String> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("expected 5 comma-separated widths, got {}", parts.len()));
    }
    let mut out = [0; 5];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("bad width `{p}`"))?;
    }
    Ok(out)
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line}: expected `key = value`, got `{content}`"))
            })?;
            cfg.set(line, key.trim(), value.trim())?;
            seen.push((key.trim().to_string(), line));
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => {
                let line = seen.iter().filter(|(k, _)| mentions(&msg, k)).map(|(_, l)| *l).max();
                Error::Config(match line {
                    Some(l) => format!("line {l}: {msg}"),
                    None => msg,
                })
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.dataset.validate()
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let t = &mut self.training;
        let d = &mut self.dataset;
        let bool_of = |v: &str| parse_bool(v).map_err(|e| Error::Config(format!("line {line}: `{key}`: {e}")));
        match key {
            "trainer" => t.trainer = parse_value(line, key, v)?,
            "meta_iterations" => t.meta_iterations = parse_value(line, key, v)?,
            "teach_steps" => t.teach_steps = parse_value(line, key, v)?,
            "learning_rate" => t.learning_rate = parse_value(line, key, v)?,
            "initial_lr" => t.initial_lr = parse_value(line, key, v)?,
            "initial_momentum" => t.initial_momentum = parse_value(line, key, v)?,
            "teacher_lr" => t.teacher_lr = parse_value(line, key, v)?,
            "meta_lr" => t.meta_lr = parse_value(line, key, v)?,
            "adam_beta1" => t.adam_beta1 = parse_value(line, key, v)?,
            "adam_beta2" => t.adam_beta2 = parse_value(line, key, v)?,
            "adam_eps" => t.adam_eps = parse_value(line, key, v)?,
            "latent_dim" => t.latent_dim = parse_value(line, key, v)?,
            "inner_batch" => t.inner_batch = parse_value(line, key, v)?,
            "outer_batch" => t.outer_batch = parse_value(line, key, v)?,
            "latent_strategy" => t.latent_strategy = parse_value(line, key, v)?,
            "adaptive_schedule" => t.adaptive_schedule = bool_of(v)?,
            "seed" => t.seed = parse_value(line, key, v)?,
            "precision" => t.precision = parse_value(line, key, v)?,
            "real_augmentation" => t.real_augmentation = parse_value(line, key, v)?,
            "teacher_arch" => t.teacher_arch = parse_value(line, key, v)?,
            "teacher_hidden" => t.teacher_hidden = parse_value(line, key, v)?,
            "teacher_fc_channels" => t.teacher_fc_channels = parse_value(line, key, v)?,
            "teacher_conv_channels" => t.teacher_conv_channels = parse_value(line, key, v)?,
            "student_arch" => t.student_arch = parse_value(line, key, v)?,
            "student_widths" => {
                t.student_widths = parse_widths(v)
                    .map_err(|e| Error::Config(format!("line {line}: `{key}`: {e}")))?
            }
            "tiny_filters" => t.tiny_filters = parse_value(line, key, v)?,
            "leaky_slope" => t.leaky_slope = parse_value(line, key, v)?,
            "bn_eps" => t.bn_eps = parse_value(line, key, v)?,
            "student_bn_momentum" => t.student_bn_momentum = parse_value(line, key, v)?,
            "eval_every" => t.eval_every = parse_value(line, key, v)?,
            "eval_bn_recompute" => t.eval_bn_recompute = bool_of(v)?,
            "skip_teaching" => t.skip_teaching = bool_of(v)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(line, key, v)?,
            "image_size" => d.image_size = parse_value(line, key, v)?,
            "channels" => d.channels = parse_value(line, key, v)?,
            "num_classes" => d.num_classes = parse_value(line, key, v)?,
            "class_names" => {
                d.class_names = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "synthetic_train_per_class" => d.synthetic_train_per_class = parse_value(line, key, v)?,
            "synthetic_test_per_class" => d.synthetic_test_per_class = parse_value(line, key, v)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order. `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let d = &self.dataset;
        let w = t.student_widths;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn core::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("trainer", &t.trainer.as_str());
        kv("meta_iterations", &t.meta_iterations);
        kv("teach_steps", &t.teach_steps);
        kv("learning_rate", &t.learning_rate);
        kv("initial_lr", &t.initial_lr);
        kv("initial_momentum", &t.initial_momentum);
        kv("teacher_lr", &t.teacher_lr);
        kv("meta_lr", &t.meta_lr);
        kv("adam_beta1", &t.adam_beta1);
        kv("adam_beta2", &t.adam_beta2);
        kv("adam_eps", &t.adam_eps);
        kv("latent_dim", &t.latent_dim);
        kv("inner_batch", &t.inner_batch);
        kv("outer_batch", &t.outer_batch);
        kv("latent_strategy", &t.latent_strategy.as_str());
        kv("adaptive_schedule", &t.adaptive_schedule);
        kv("seed", &t.seed);
        kv("precision", &t.precision.as_str());
        kv("real_augmentation", &t.real_augmentation.as_str());
        kv("teacher_arch", &t.teacher_arch.as_str());
        kv("teacher_hidden", &t.teacher_hidden);
        kv("teacher_fc_channels", &t.teacher_fc_channels);
        kv("teacher_conv_channels", &t.teacher_conv_channels);
        kv("student_arch", &t.student_arch.as_str());
        kv("student_widths", &format!("{},{},{},{},{}", w[0], w[1], w[2], w[3], w[4]));
        kv("tiny_filters", &t.tiny_filters);
        kv("leaky_slope", &t.leaky_slope);
        kv("bn_eps", &t.bn_eps);
        kv("student_bn_momentum", &t.student_bn_momentum);
        kv("eval_every", &t.eval_every);
        kv("eval_bn_recompute", &t.eval_bn_recompute);
        kv("skip_teaching", &t.skip_teaching);
        kv("checkpoint_every", &t.checkpoint_every);
        kv("image_size", &d.image_size);
        kv("channels", &d.channels);
        kv("num_classes", &d.num_classes);
        kv("class_names", &d.class_names.join(","));
        kv("synthetic_train_per_class", &d.synthetic_train_per_class);
        kv("synthetic_test_per_class", &d.synthetic_test_per_class);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        let t = &cfg.training;
        assert_eq!(t.learning_rate, 0.02);
        assert_eq!(t.initial_lr, 0.02);
        assert_eq!(t.initial_momentum, 0.5);
        assert_eq!((t.adam_beta1, t.adam_beta2, t.adam_eps), (0.9, 0.9, 1e-5));
        assert_eq!(t.latent_dim, 128);
        assert_eq!((t.inner_batch, t.outer_batch), (64, 128));
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse("# a comment\nteach_steps = 3  # trailing\n\nseed=9\n").unwrap();
        assert_eq!(cfg.training.teach_steps, 3);
        assert_eq!(cfg.training.seed, 9);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("seed = 1\ninner_batch = 0\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 2") && m.contains("inner_batch")), "{e}");
        let e = RunConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 2") && m.contains("bogus")));
        let e = RunConfig::parse("\n\nlatent_dim = many\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 3")));
        let e = RunConfig::parse("image_size = 30\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.training.adam_eps = 1.2345678901234e-7;
        cfg.training.latent_strategy = LatentStrategy::ResampledPerStep;
        cfg.training.student_widths = [1, 2, 3, 4, 5];
        cfg.dataset.class_names = Vec::new();
        cfg.dataset.num_classes = 7;
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }
}
