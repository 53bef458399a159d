//! Dataset selection and the training run with its on-disk outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gmcl_core::config::{Augmentation, Trainer};
use gmcl_core::data::{synth_generate, LabeledImageSet, Split};
use gmcl_core::training::{run_training, IterationLog};
use gmcl_core::{DatasetSpec, MetricsReport, RunConfig, RunState, Scalar, TrainingConfig};

use crate::checkpoint;
use crate::error::{read, write, GmclError, Result};
use crate::idx::load_idx_pair;
use crate::manifest::{load_manifest_dir, MANIFEST};
use crate::metrics_log;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.gmcl";

/// Trainer presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Gmcl,
    GmclFixedSchedule,
    Plain,
    PlainAug,
    PlainTraditional,
}

impl RunMode {
    pub const ALL: [RunMode; 5] =
        [RunMode::Gmcl, RunMode::GmclFixedSchedule, RunMode::Plain, RunMode::PlainAug, RunMode::PlainTraditional];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Gmcl => "gmcl",
            RunMode::GmclFixedSchedule => "gmcl-fixed-schedule",
            RunMode::Plain => "plain",
            RunMode::PlainAug => "plain-aug",
            RunMode::PlainTraditional => "plain-traditional",
        }
    }

    pub fn apply(self, cfg: &mut TrainingConfig) {
        let (trainer, adaptive, aug) = match self {
            RunMode::Gmcl => (Trainer::Gmcl, true, Augmentation::CropFlip),
            RunMode::GmclFixedSchedule => (Trainer::Gmcl, false, Augmentation::CropFlip),
            RunMode::Plain => (Trainer::Plain, false, Augmentation::None),
            RunMode::PlainAug => (Trainer::Plain, false, Augmentation::CropFlip),
            RunMode::PlainTraditional => (Trainer::Plain, false, Augmentation::Traditional),
        };
        cfg.trainer = trainer;
        cfg.adaptive_schedule = adaptive;
        cfg.real_augmentation = aug;
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| GmclError::format(path, "config is not UTF-8"))?;
    RunConfig::parse(&text).map_err(|e| match e {
        gmcl_core::Error::Config(m) => gmcl_core::Error::Config(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

#[derive(Debug, Clone)]
pub struct Datasets<T> {
    pub train: LabeledImageSet<T>,
    pub test: LabeledImageSet<T>,
}

/// Seed offset between the synthetic training and test sets.
const SYNTH_TEST_SEED: u64 = 0x7e57_0000;

/// Synthetic sets when `data` is `None`; otherwise `data/train` and
/// `data/test` manifest directories, or the IDX files
/// `{train,test}-images.idx3-ubyte` and `{train,test}-labels.idx1-ubyte`.
pub fn load_datasets<T: Scalar>(data: Option<&Path>, spec: &DatasetSpec, seed: u64) -> Result<Datasets<T>> {
    let Some(dir) = data else {
        return Ok(Datasets {
            train: synth_generate(spec, spec.synthetic_train_per_class, seed, Split::Train)?,
            test: synth_generate(spec, spec.synthetic_test_per_class, seed ^ SYNTH_TEST_SEED, Split::Test)?,
        });
    };
    if dir.join("train").join(MANIFEST).is_file() {
        return Ok(Datasets {
            train: load_manifest_dir(&dir.join("train"), spec, Split::Train)?,
            test: load_manifest_dir(&dir.join("test"), spec, Split::Test)?,
        });
    }
    let idx = |split: &str, kind: &str, rank: u8| dir.join(format!("{split}-{kind}.idx{rank}-ubyte"));
    if idx("train", "images", 3).is_file() {
        return Ok(Datasets {
            train: load_idx_pair(&idx("train", "images", 3), &idx("train", "labels", 1), spec, Split::Train)?,
            test: load_idx_pair(&idx("test", "images", 3), &idx("test", "labels", 1), spec, Split::Test)?,
        });
    }
    Err(GmclError::format(
        dir,
        "expected train/ and test/ manifest directories or {train,test}-{images,labels} IDX files",
    ))
}

/// Final state plus where its outputs went.
#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub state: RunState<T>,
    pub final_eval: Option<MetricsReport>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Runs (or resumes) training, writing `metrics.csv`, `checkpoint.gmcl`
/// and, every `checkpoint_every` iterations, `checkpoint_{iter}.gmcl` into
/// `out_dir`. A resumed run keeps the log rows up to the checkpoint.
pub fn train<T: Scalar>(state: RunState<T>, data: &Datasets<T>, out_dir: &Path) -> Result<TrainOutcome<T>> {
    let mut state = state;
    std::fs::create_dir_all(out_dir).map_err(|e| GmclError::io(out_dir, e))?;
    let metrics = out_dir.join(METRICS_FILE);
    let prefix = if state.meta_iter > 0 && metrics.is_file() {
        let text = String::from_utf8_lossy(&read(&metrics)?).into_owned();
        metrics_log::truncate_to(&text, state.meta_iter)
    } else {
        format!("{}\n", metrics_log::HEADER)
    };
    write(&metrics, prefix.as_bytes())?;
    let file = File::options().append(true).open(&metrics).map_err(|e| GmclError::io(&metrics, e))?;
    let mut log = BufWriter::new(file);
    let mut final_eval = None;
    let every = state.config.checkpoint_every;
    let total = state.config.meta_iterations;
    run_training(&mut state, &data.train, Some(&data.test), |s: &RunState<T>, entry: &IterationLog| -> Result<()> {
        writeln!(log, "{}", metrics_log::row(entry)).map_err(|e| GmclError::io(&metrics, e))?;
        let i = entry.record.meta_iter;
        if every > 0 && i % every == 0 && i < total {
            log.flush().map_err(|e| GmclError::io(&metrics, e))?;
            checkpoint::save(&out_dir.join(format!("checkpoint_{i:06}.gmcl")), s)?;
        }
        if entry.eval.is_some() {
            final_eval = entry.eval.clone();
        }
        Ok(())
    })?;
    log.flush().map_err(|e| GmclError::io(&metrics, e))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&checkpoint, &state)?;
    Ok(TrainOutcome { state, final_eval, checkpoint, metrics })
}
