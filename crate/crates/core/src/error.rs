use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by tensor ops, models, training, and dataset handling.
#[derive(Debug)]
pub enum Error {
    /// Element count does not match the product of the shape extents.
    ElementCount { shape: Vec<usize>, expected: usize, got: usize },
    /// Two tensors that must agree in shape do not.
    ShapeMismatch { context: &'static str, left: Vec<usize>, right: Vec<usize> },
    /// A tensor does not have the rank an operation requires.
    RankMismatch { context: &'static str, expected: usize, got: Vec<usize> },
    /// A convolution geometry is invalid or produces a non-positive output extent.
    InvalidGeometry { context: &'static str, detail: String },
    /// A value that must be finite is NaN or infinite.
    NonFinite { context: &'static str },
    /// An operation that requires a scalar received something else.
    NotScalar { context: &'static str, shape: Vec<usize> },
    /// `backward` was called on a tape that has already been consumed.
    TapeConsumed,
    /// Train-mode batch normalization needs at least two values per channel.
    DegenerateBatch { per_channel: usize },
    /// Eval-mode batch normalization was called before any train-mode pass.
    UninitializedRunningStats,
    /// An operation received an empty input it cannot define a result for.
    EmptyInput { context: &'static str },
    /// A design-space index is outside its valid range.
    OutOfRange { context: &'static str, value: i64, min: i64, max: i64 },
    /// Samples handed to the extrapolation split are not in dataset order.
    UnorderedSamples { position: usize },
    /// The training loss became non-finite.
    NanLoss { epoch: usize, batch: usize, learning_rate: f64 },
    /// A split request cannot produce non-empty train and test sets.
    DegenerateSplit { n: usize, test_ratio: f64 },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A serialized file failed validation (bad magic, version, or truncation).
    Format { context: &'static str, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ElementCount { shape, expected, got } => {
                write!(f, "shape {shape:?} implies {expected} elements, got {got}")
            }
            Error::ShapeMismatch { context, left, right } => {
                write!(f, "{context}: shape mismatch {left:?} vs {right:?}")
            }
            Error::RankMismatch { context, expected, got } => {
                write!(f, "{context}: expected rank {expected}, got shape {got:?}")
            }
            Error::InvalidGeometry { context, detail } => {
                write!(f, "{context}: invalid geometry: {detail}")
            }
            Error::NonFinite { context } => write!(f, "{context}: non-finite value"),
            Error::NotScalar { context, shape } => {
                write!(f, "{context}: expected a scalar, got shape {shape:?}")
            }
            Error::TapeConsumed => write!(f, "tape already consumed by a previous backward pass"),
            Error::DegenerateBatch { per_channel } => {
                write!(f, "batch normalization needs >= 2 values per channel, got {per_channel}")
            }
            Error::UninitializedRunningStats => {
                write!(f, "eval-mode batch normalization before any train-mode pass")
            }
            Error::EmptyInput { context } => write!(f, "{context}: empty input"),
            Error::OutOfRange { context, value, min, max } => {
                write!(f, "{context}: {value} outside [{min}, {max}]")
            }
            Error::UnorderedSamples { position } => {
                write!(f, "samples not in dataset order at position {position}")
            }
            Error::NanLoss { epoch, batch, learning_rate } => write!(
                f,
                "training loss became non-finite at epoch {epoch}, batch {batch} (learning rate {learning_rate})"
            ),
            Error::DegenerateSplit { n, test_ratio } => {
                write!(f, "cannot split {n} samples with test ratio {test_ratio}")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format { context, detail } => write!(f, "{context}: {detail}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
