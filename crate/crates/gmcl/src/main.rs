use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmcl_core::config::Precision;
use gmcl_core::data::{patchify, pixel_to_unit, unit_to_pixel};
use gmcl_core::gradcheck::{run_gradcheck, GradcheckSettings};
use gmcl_core::{OpKind, RunConfig, RunState, Scalar, Tensor};

use gmcl::checkpoint;
use gmcl::error::{GmclError, Result};
use gmcl::export::export_curriculum;
use gmcl::manifest::write_manifest_dir;
use gmcl::pnm::{read_pnm, write_pnm, Pnm};
use gmcl::runner::{self, load_datasets, read_config, RunMode};

const PRECISION_ENV: &str = "GMCL_PRECISION";

#[derive(Parser)]
#[command(name = "gmcl", version, about = "Generative meta curriculum learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a student, with or without a teacher, and log metrics.
    Train {
        /// `key = value` configuration file; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for metrics.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint (its configuration is used).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; synthetic data when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// gmcl | gmcl-fixed-schedule | plain | plain-aug | plain-traditional
        #[arg(long)]
        mode: Option<RunMode>,
    },
    /// Evaluate a checkpoint's student on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write teacher samples as PGM/PPM images.
    ExportCurriculum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every op and of the meta-gradient.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write the synthetic train and test sets as manifest directories.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cut a large PGM/PPM image into square tiles.
    Patchify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        patch: usize,
        /// Label written for every tile into labels.csv.
        #[arg(long)]
        label: Option<usize>,
    },
}

enum Outcome {
    Done,
    GradcheckFailed,
}

fn precision(configured: Precision) -> Result<Precision> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| gmcl_core::Error::Config(format!("{PRECISION_ENV}: expected f32 or f64, got `{v}`")).into()),
        Err(_) => Ok(configured),
    }
}

fn train<T: Scalar>(cfg: RunConfig, resume: Option<&Path>, data: Option<&Path>, out: &Path) -> Result<()> {
    let state = match resume {
        Some(path) => checkpoint::load::<T>(path)?,
        None => RunState::new(cfg.training, cfg.dataset)?,
    };
    let sets = load_datasets::<T>(data, &state.spec, state.config.seed)?;
    let outcome = runner::train(state, &sets, out)?;
    if let Some(e) = outcome.final_eval {
        println!(
            "iteration {}: accuracy {:.4} auc {:.4} sensitivity {:.4} specificity {:.4}",
            outcome.state.meta_iter, e.accuracy, e.auc, e.sensitivity, e.specificity
        );
    }
    println!("metrics: {}", outcome.metrics.display());
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

fn eval<T: Scalar>(path: &Path, data: Option<&Path>) -> Result<()> {
    let mut state = checkpoint::load::<T>(path)?;
    let sets = load_datasets::<T>(data, &state.spec, state.config.seed)?;
    let report = state.evaluate(&sets.test, Some(&sets.train))?;
    println!("accuracy    {:.6}", report.accuracy);
    println!("auc         {:.6}", report.auc);
    println!("sensitivity {:.6}", report.sensitivity);
    println!("specificity {:.6}", report.specificity);
    println!("confusion (rows true, columns predicted):");
    for row in report.confusion.rows() {
        println!("  {}", row.iter().map(|c| format!("{c:>5}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}

fn export<T: Scalar>(path: &Path, out: &Path, count: usize, seed: u64) -> Result<()> {
    let mut state = checkpoint::load::<T>(path)?;
    let exported = export_curriculum(&mut state, out, count, seed)?;
    println!("wrote {} images to {}", exported.files.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train { config, out, checkpoint, data, seed, mode } => {
            if checkpoint.is_some() && (config.is_some() || seed.is_some() || mode.is_some()) {
                return Err(gmcl_core::Error::Config(
                    "--checkpoint resumes with the checkpoint's configuration; drop --config, --seed and --mode".into(),
                )
                .into());
            }
            let mut cfg = match &config {
                Some(p) => read_config(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            if let Some(m) = mode {
                m.apply(&mut cfg.training);
            }
            let configured = match &checkpoint {
                Some(p) => checkpoint::load_snapshot::<f32>(p)?.config.training.precision,
                None => cfg.training.precision,
            };
            match precision(configured)? {
                Precision::F32 => train::<f32>(cfg, checkpoint.as_deref(), data.as_deref(), &out)?,
                Precision::F64 => train::<f64>(cfg, checkpoint.as_deref(), data.as_deref(), &out)?,
            }
        }
        Command::Eval { checkpoint, data } => {
            let configured = checkpoint::load_snapshot::<f32>(&checkpoint)?.config.training.precision;
            match precision(configured)? {
                Precision::F32 => eval::<f32>(&checkpoint, data.as_deref())?,
                Precision::F64 => eval::<f64>(&checkpoint, data.as_deref())?,
            }
        }
        Command::ExportCurriculum { checkpoint, out, count, seed } => {
            let configured = checkpoint::load_snapshot::<f32>(&checkpoint)?.config.training.precision;
            match precision(configured)? {
                Precision::F32 => export::<f32>(&checkpoint, &out, count, seed)?,
                Precision::F64 => export::<f64>(&checkpoint, &out, count, seed)?,
            }
        }
        Command::Gradcheck { preset, seed, inject_fault } => {
            let fault = match inject_fault {
                Some(name) => Some(
                    OpKind::from_name(&name)
                        .ok_or_else(|| gmcl_core::Error::Config(format!("unknown op `{name}`")))?,
                ),
                None => None,
            };
            let settings = GradcheckSettings { seed, ..GradcheckSettings::default() };
            let report = run_gradcheck(&preset, &settings, fault)?;
            println!("{report}");
            if !report.passed() {
                if let Some(w) = report.offender() {
                    eprintln!("gradcheck failed: {} exceeds tolerance ({:.3e})", w.name, w.max_rel_error);
                }
                return Ok(Outcome::GradcheckFailed);
            }
        }
        Command::SynthData { out, config, seed } => {
            let cfg = match &config {
                Some(p) => read_config(p)?,
                None => RunConfig::default(),
            };
            let sets = load_datasets::<f32>(None, &cfg.dataset, seed)?;
            write_manifest_dir(&out.join("train"), &sets.train)?;
            write_manifest_dir(&out.join("test"), &sets.test)?;
            println!("wrote {} training and {} test images to {}", sets.train.len(), sets.test.len(), out.display());
        }
        Command::Patchify { input, out, patch, label } => {
            let img = read_pnm(&input)?;
            let planar: Vec<f32> = img.planar().into_iter().map(pixel_to_unit).collect();
            let tensor = Tensor::from_vec(&[img.channels, img.height, img.width], planar);
            let tiles = patchify(&tensor, patch).map_err(|e| GmclError::format(&input, e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| GmclError::io(&out, e))?;
            let ext = if img.channels == 1 { "pgm" } else { "ppm" };
            let mut manifest = String::new();
            for (i, t) in tiles.iter().enumerate() {
                let name = format!("patch_{i:05}.{ext}");
                let bytes: Vec<u8> = t.data().iter().map(|&v| unit_to_pixel(v)).collect();
                write_pnm(&out.join(&name), &Pnm::from_planar(img.channels, patch, patch, &bytes))?;
                if let Some(l) = label {
                    manifest.push_str(&format!("{name},{l}\n"));
                }
            }
            if label.is_some() {
                let path = out.join(gmcl::manifest::MANIFEST);
                std::fs::write(&path, manifest).map_err(|e| GmclError::io(&path, e))?;
            }
            println!("wrote {} patches to {}", tiles.len(), out.display());
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::GradcheckFailed) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

