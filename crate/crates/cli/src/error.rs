use std::path::PathBuf;

use layerscope::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags, configuration contents or inputs that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Pipeline(#[from] layerscope::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 0 success, 1 validation or configuration, 2 I/O, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Missing(_) | CliError::Io { .. } | CliError::Csv { .. } => 2,
            CliError::Pipeline(e) => match e.kind() {
                ErrorKind::Invalid => 1,
                ErrorKind::Io => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.into())
            }
        })*
    };
}

via_pipeline!(
    layerscope::image::ImageError,
    layerscope::calib::CalibError,
    layerscope::registration::RegistrationError,
    layerscope::slicer::SliceError,
    layerscope::synth::SynthError,
    layerscope::cnn::CnnError
);
