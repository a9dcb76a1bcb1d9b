use thiserror::Error;

use crate::calib::CalibError;
use crate::cnn::CnnError;
use crate::image::ImageError;
use crate::registration::RegistrationError;
use crate::slicer::SliceError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Any failure raised by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

/// Coarse failure class, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input values, shapes or configuration.
    Invalid,
    /// Filesystem or decoding failure.
    Io,
    /// A numerical method failed (singular system, divergence, no convergence).
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Image(e) => match e {
                ImageError::NotFound(_)
                | ImageError::Io { .. }
                | ImageError::MalformedHeader(_)
                | ImageError::UnsupportedMaxval(_)
                | ImageError::Truncated { .. } => ErrorKind::Io,
                _ => ErrorKind::Invalid,
            },
            Error::Calib(e) => match e {
                CalibError::NoInverse(..) | CalibError::Singular(_) | CalibError::NoConvergence(_) => {
                    ErrorKind::Numerical
                }
                CalibError::File { .. } => ErrorKind::Io,
                _ => ErrorKind::Invalid,
            },
            Error::Registration(e) => match e {
                RegistrationError::Singular | RegistrationError::Diverged(_) => ErrorKind::Numerical,
                _ => ErrorKind::Invalid,
            },
            Error::Slice(e) => match e {
                SliceError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Invalid,
            },
            Error::Synth(e) => match e {
                SynthError::Io { .. } => ErrorKind::Io,
                SynthError::Image(_) => ErrorKind::Io,
                _ => ErrorKind::Invalid,
            },
            Error::Cnn(e) => match e {
                CnnError::Io(_) | CnnError::Format(_) | CnnError::Image(_) => ErrorKind::Io,
                _ => ErrorKind::Invalid,
            },
        }
    }
}
