//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid framing: frame_len {frame_len}, hop {hop} (need frame_len >= hop >= 1)")]
    InvalidFraming { frame_len: usize, hop: usize },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),

    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("unachievable T60: Sabine absorption {alpha:.4} >= 1 for this room/T60")]
    UnachievableT60 { alpha: f64 },

    #[error("position ({0:.3}, {1:.3}, {2:.3}) m outside the room")]
    OutsideRoom(f64, f64, f64),

    #[error("source placement failed after {attempts} attempts (distance {distance} m does not fit)")]
    Placement { distance: f64, attempts: usize },

    #[error("insufficient decay: Schroeder curve never spans -5..-25 dB")]
    InsufficientDecay,

    #[error("degenerate source: power below floor")]
    DegenerateSource,

    #[error("silent reference")]
    SilentReference,

    #[error("backward already called on this tape")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (grad norm {grad_norm})")]
    NonFiniteLoss { epoch: usize, batch: usize, grad_norm: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("wav {path}: {reason}")]
    Wav { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
