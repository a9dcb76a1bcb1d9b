use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::defects::DefectParams;
use super::SynthError;

/// One generated or prepared image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path relative to the manifest's directory.
    pub image_path: String,
    pub job_id: usize,
    pub layer_index: usize,
    pub class_label: String,
    pub seed: u64,
    pub defect_params: Option<DefectParams>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub class_counts: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self, SynthError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_path.as_str()) {
                return Err(SynthError::DuplicatePath(r.image_path.clone()));
            }
        }
        let mut class_counts = BTreeMap::new();
        for r in &records {
            *class_counts.entry(r.class_label.clone()).or_insert(0) += 1;
        }
        Ok(Self { records, class_counts })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// JSON Lines, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serialises"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SynthError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| SynthError::Manifest(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<ManifestRecord>, _>>()?;
        Self::new(records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        Self::from_jsonl(&text)
    }

    /// Absolute image paths for a manifest stored in `root`.
    pub fn image_paths(&self, root: &Path) -> Vec<PathBuf> {
        self.records.iter().map(|r| root.join(&r.image_path)).collect()
    }
}
