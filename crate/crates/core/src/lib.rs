//! Generative meta curriculum learning.
//!
//! A teacher network generates synthetic curriculum batches that train a
//! student classifier for a few differentiable SGD steps; the student's loss
//! on real data is then backpropagated through those unrolled steps into the
//! teacher and into a learnable per-step learning-rate/momentum schedule.
//!
//! This crate is `no_std` (it needs `alloc`) and carries no IO.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod functional;
pub mod gradcheck;
pub mod init;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, OpKind, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use config::{DatasetSpec, RunConfig, TrainingConfig};
pub use data::LabeledImageSet;
pub use metrics::MetricsReport;
pub use models::{LatentBatch, MetaSchedule, StudentLearner, TeacherGenerator};
pub use tensor::{ConvGeometry, Tensor};
pub use training::{evaluate, run_training, train_plain_learner, IterationRecord, RunState};
