//! Error type shared by every module of the core crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes that do not fit together. Carries both offending shapes.
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Batch statistics cannot be formed (fewer than two values per channel).
    DegenerateVariance { op: &'static str, count: usize },
    /// A class label outside `[0, classes)`.
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },
    /// Gradient requested for something the loss does not depend on.
    Unreachable { name: String },
    /// NaN or infinity showed up where a finite value is required.
    Divergence { context: String, step: usize },
    /// Index outside a bounded range.
    Index { what: &'static str, index: usize, len: usize },
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Malformed input data.
    Input(String),
    /// A metric with no defined value for the given data.
    UndefinedMetric(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::DegenerateVariance { op, count } => write!(
                f,
                "{op}: variance undefined with {count} value(s) per channel"
            ),
            Error::Label { index, label, classes } => write!(
                f,
                "label {label} at batch index {index} is outside [0, {classes})"
            ),
            Error::Unreachable { name } => {
                write!(f, "parameter `{name}` is not reachable from the loss")
            }
            Error::Divergence { context, step } => {
                write!(f, "non-finite value in {context} at step {step}")
            }
            Error::Index { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::UndefinedMetric(what) => write!(f, "{what} is undefined for this data"),
        }
    }
}

impl core::error::Error for Error {}
