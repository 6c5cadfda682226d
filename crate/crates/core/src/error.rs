use core::fmt;

use crate::geometry::Frame;

/// Contract violations and data errors raised by the core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    FrameMismatch { expected: Frame, found: Frame },
    LengthMismatch { expected: usize, found: usize },
    /// Trajectories with different sampling intervals were combined.
    DtMismatch { expected: f64, found: f64 },
    Empty(&'static str),
    NonFinite(&'static str),
    InvalidArgument(&'static str),
    InvalidPolygon(&'static str),
    MissingTarget(u64),
    NotNormalized { sum: f64 },
    /// The generator could not produce a valid scene within its retry budget.
    Infeasible(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::FrameMismatch { expected, found } => {
                write!(f, "frame mismatch: expected {expected:?}, found {found:?}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::DtMismatch { expected, found } => {
                write!(f, "sampling interval mismatch: expected {expected}, found {found}")
            }
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::InvalidPolygon(what) => write!(f, "invalid polygon: {what}"),
            Error::MissingTarget(id) => write!(f, "target agent {id} not present in scene"),
            Error::NotNormalized { sum } => {
                write!(f, "target distribution sums to {sum}, expected 1")
            }
            Error::Infeasible(what) => write!(f, "infeasible: {what}"),
        }
    }
}

impl core::error::Error for Error {}
