//! One function per subcommand. Each validates its inputs up front, does
//! its work and returns the run report; [`crate::run`] writes the report.

mod data;
mod model;
mod prepare;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

pub use data::{slice, synth};
pub use model::{classify, report, train};
pub use prepare::{calibrate, clean, prepare};

use crate::CliError;

/// `.pgm` files directly inside `dir`, sorted by file name.
pub fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Missing(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Parses a JSON input file; malformed contents are a configuration error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(CliError::io(p))
}
